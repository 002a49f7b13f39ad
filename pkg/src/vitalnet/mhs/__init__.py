"""Record server: durable patient records, risk scoring, alerts, HTTP API."""

from vitalnet.mhs.service import MhsServer, ServerConfig

__all__ = ["MhsServer", "ServerConfig"]
