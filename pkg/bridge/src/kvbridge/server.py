"""Frame-protocol server: hello / extend / drop over sockets or stdio.

One request is in flight per connection; each connection owns its cache
namespace (ids are meaningless across connections and all state is freed
on disconnect).  Multiple connections are served concurrently, each with
its own session, sharing one read-only model host.
"""

from __future__ import annotations

import socket
import threading

import numpy as np

from .hosts import PositionUnsupported, UnknownCacheId
from .wire import PROTOCOL_VERSION, array_from, array_header, read_frame, write_frame


class Session:
    """Connection-scoped cache namespace over a shared host."""

    def __init__(self, host):
        self.host = host
        self._states: dict[str, object] = {}
        self._next = 0

    def _fresh_id(self) -> str:
        self._next += 1
        return f"c{self._next}"

    def handle(self, header: dict, payload: bytes) -> tuple[dict, bytes]:
        op = header.get("op")
        try:
            if op == "hello":
                return self._hello(header)
            if op == "extend":
                return self._extend(header, payload)
            if op == "drop":
                return self._drop(header)
            return {"ok": False, "error": "ProtocolError",
                    "message": f"unknown op {op!r}"}, b""
        except UnknownCacheId as exc:
            return {"ok": False, "error": "UnknownCacheId", "message": str(exc)}, b""
        except PositionUnsupported as exc:
            return {"ok": False, "error": "PositionUnsupported", "message": str(exc)}, b""
        except Exception as exc:  # noqa: BLE001 - survive bad requests
            return {"ok": False, "error": type(exc).__name__, "message": str(exc)}, b""

    def _hello(self, header: dict) -> tuple[dict, bytes]:
        if header.get("protocol") != PROTOCOL_VERSION:
            return {
                "ok": False,
                "error": "ProtocolVersionMismatch",
                "protocol": PROTOCOL_VERSION,
                "message": f"server speaks protocol {PROTOCOL_VERSION}",
            }, b""
        return {
            "ok": True,
            "protocol": PROTOCOL_VERSION,
            "model_id": self.host.model_id,
            "shape": self.host.shape_dict(),
            "position_scheme": self.host.position_scheme,
            "supports_attention_summary": self.host.supports_attention_summary,
            "eos_token_id": self.host.eos_token_id,
        }, b""

    def _extend(self, header: dict, payload: bytes) -> tuple[dict, bytes]:
        prefix = []
        for cid in header.get("prefix_ids", []):
            if cid not in self._states:
                raise UnknownCacheId(f"cache id {cid!r} is not live")
            prefix.append(self._states[cid])
        positions = array_from(header["positions"], payload).astype(np.float64)
        tokens = [int(t) for t in header["tokens"]]
        state, logits, summary = self.host.extend(
            prefix, tokens, positions, bool(header.get("want_summary", False))
        )
        cid = self._fresh_id()
        self._states[cid] = state
        logits = np.ascontiguousarray(logits, dtype="<f4")
        reply = {
            "ok": True,
            "cache_id": cid,
            "length": len(tokens),
            "logits": array_header(logits),
            "summary": summary,
        }
        return reply, logits.tobytes()

    def _drop(self, header: dict) -> tuple[dict, bytes]:
        for cid in header.get("cache_ids", []):
            self._states.pop(cid, None)  # dropping unknown ids is a no-op
        return {"ok": True}, b""


def serve_stream(host, stream_in, stream_out) -> None:
    """Run one session over a pair of binary streams until EOF."""
    session = Session(host)
    while True:
        try:
            header, payload = read_frame(stream_in)
        except EOFError:
            return
        reply, body = session.handle(header, payload)
        write_frame(stream_out, reply, body)


class BridgeServer:
    """TCP front end; one thread and one session per connection."""

    def __init__(self, host, address: str = "127.0.0.1", port: int = 0):
        self.host = host
        self._sock = socket.create_server((address, port))
        self.address, self.port = self._sock.getsockname()[:2]
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None
        self._closing = False

    def serve_forever(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def start(self) -> "BridgeServer":
        self._accept_thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._accept_thread.start()
        return self

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            stream = conn.makefile("rwb")
            try:
                serve_stream(self.host, stream, stream)
            except (ConnectionError, OSError):
                pass

    def close(self) -> None:
        self._closing = True
        self._sock.close()
