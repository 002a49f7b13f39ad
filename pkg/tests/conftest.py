import pytest

from vitalnet.mhs.auth import User, hash_password
from vitalnet.mhs.service import MhsServer, ServerConfig


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in getattr(rep, "nodeid", ""):
                name = rep.nodeid.split("::")[-1]
                rows.append((name, "PASS" if status == "passed" else "FAIL"))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(rows):
            terminalreporter.write_line(f"{status}  {name}")

DOC_PW = "doc-secret"
PAT_PW = "pat-secret"


@pytest.fixture(scope="session")
def user_set():
    # pbkdf2 hashing is deliberately slow; share the hashes across tests
    return [
        User("dr-a", "practitioner", hash_password(DOC_PW)),
        User("p-demo", "patient", hash_password(PAT_PW)),
        User("p-other", "patient", hash_password(PAT_PW)),
    ]


@pytest.fixture
def mhs(tmp_path, user_set):
    config = ServerConfig(data_dir=tmp_path / "mhs-data", users=user_set, snapshot_every=10_000)
    server = MhsServer(config).start()
    yield server
    server.stop()


@pytest.fixture
def mhs_factory(tmp_path, user_set):
    """Start servers on demand against a shared data dir (restart tests)."""
    servers = []

    def make(subdir="mhs-data", **overrides):
        kwargs = {"snapshot_every": 10_000, **overrides}
        config = ServerConfig(data_dir=tmp_path / subdir, users=user_set, **kwargs)
        server = MhsServer(config).start()
        servers.append(server)
        return server

    yield make
    for server in servers:
        try:
            server.stop()
        except Exception:
            pass
