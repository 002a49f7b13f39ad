"""Credentials and bearer tokens: salted password hashes, expiring sessions."""

from __future__ import annotations

import hashlib
import hmac
import secrets
import time
from dataclasses import dataclass, field

PBKDF2_ITERATIONS = 60_000
ROLES = ("patient", "practitioner")


class AuthFailure(Exception):
    """Missing, unknown, or expired credential; maps to 401."""


class Forbidden(Exception):
    """Authenticated principal lacks the right to this resource; maps to 403."""


def hash_password(password: str, iterations: int = PBKDF2_ITERATIONS) -> str:
    salt = secrets.token_hex(16)
    digest = hashlib.pbkdf2_hmac(
        "sha256", password.encode(), bytes.fromhex(salt), iterations
    ).hex()
    return f"pbkdf2_sha256${iterations}${salt}${digest}"


def verify_password(password: str, encoded: str) -> bool:
    try:
        scheme, iters, salt, digest = encoded.split("$")
        if scheme != "pbkdf2_sha256":
            return False
        candidate = hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt), int(iters)
        ).hex()
        return hmac.compare_digest(candidate, digest)
    except (ValueError, TypeError):
        return False


@dataclass(frozen=True)
class User:
    principal: str
    role: str  # "patient" | "practitioner"
    password_hash: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class Session:
    token: str
    principal: str
    role: str
    expires_at: float


@dataclass
class TokenTable:
    """In-memory bearer tokens; they do not survive a restart by design."""

    ttl_s: float = 8 * 3600.0
    _tokens: dict[str, Session] = field(default_factory=dict)

    def issue(self, user: User) -> Session:
        session = Session(
            token=secrets.token_hex(16),
            principal=user.principal,
            role=user.role,
            expires_at=time.time() + self.ttl_s,
        )
        self._tokens[session.token] = session
        return session

    def check(self, token: str | None) -> Session:
        if not token:
            raise AuthFailure("missing bearer token")
        session = self._tokens.get(token)
        if session is None:
            raise AuthFailure("unknown token")
        if time.time() >= session.expires_at:
            del self._tokens[token]
            raise AuthFailure("token expired")
        return session
