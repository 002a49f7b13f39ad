"""Append-only event log with per-record CRC and snapshot-assisted recovery.

Layout inside the data directory:

    events.log     length-prefixed records: u32 payload length, u32 CRC32 of
                   the payload, then the payload (UTF-8 JSON), big-endian
    snapshot.json  JSON state image plus the log byte offset it covers

The log is never truncated or rewritten (audit trail); recovery loads the
snapshot if one is valid, then replays the log tail, stopping at the first
short or corrupt record (a torn final write after a crash). Appends are
flushed and fsynced before the caller acknowledges anything downstream.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Iterator

logger = logging.getLogger(__name__)

_HEADER = struct.Struct(">II")  # payload length, crc32


class EventLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")

    @property
    def size(self) -> int:
        return self._fh.tell()

    def append_many(self, events: list[dict]) -> int:
        """Append events as one durable write; returns the new end offset.

        The fsync completes before this returns, so an acknowledgement sent
        afterwards can never name a record the disk does not hold.
        """
        chunk = bytearray()
        for event in events:
            payload = json.dumps(event, sort_keys=True, separators=(",", ":")).encode()
            chunk += _HEADER.pack(len(payload), zlib.crc32(payload))
            chunk += payload
        self._fh.write(chunk)
        self._fh.flush()
        os.fsync(self._fh.fileno())
        return self._fh.tell()

    def append(self, event: dict) -> int:
        return self.append_many([event])

    def replay(self, from_offset: int = 0) -> Iterator[tuple[int, dict]]:
        """Yield (end_offset, event) pairs; stop cleanly at a torn tail."""
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            fh.seek(from_offset)
            offset = from_offset
            while True:
                header = fh.read(_HEADER.size)
                if len(header) < _HEADER.size:
                    if header:
                        logger.warning("discarding torn record header at %d", offset)
                    return
                length, crc = _HEADER.unpack(header)
                payload = fh.read(length)
                if len(payload) < length or zlib.crc32(payload) != crc:
                    logger.warning("discarding torn/corrupt record at %d", offset)
                    return
                offset += _HEADER.size + length
                yield offset, json.loads(payload.decode())

    def close(self) -> None:
        self._fh.close()


def write_snapshot(data_dir: str | Path, state: dict, log_offset: int) -> None:
    """Atomically persist a state image covering the log up to ``log_offset``."""
    path = Path(data_dir) / "snapshot.json"
    tmp = path.with_suffix(".tmp")
    blob = {"log_offset": log_offset, "state": state}
    with open(tmp, "w") as fh:
        json.dump(blob, fh, separators=(",", ":"))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_snapshot(data_dir: str | Path) -> tuple[dict, int] | None:
    path = Path(data_dir) / "snapshot.json"
    if not path.exists():
        return None
    try:
        with open(path) as fh:
            blob = json.load(fh)
        return blob["state"], int(blob["log_offset"])
    except (json.JSONDecodeError, KeyError, ValueError):
        logger.warning("snapshot unreadable; falling back to full log replay")
        return None
