"""Remote model backend: pretrained causal LMs behind the engine's wire protocol."""

from .hosts import HfHost, ReferenceHost, load_host
from .server import BridgeServer, Session, serve_stream
from .wire import PROTOCOL_VERSION, pack_frame, read_frame, split_frame, write_frame

__all__ = [
    "BridgeServer", "HfHost", "PROTOCOL_VERSION", "ReferenceHost", "Session",
    "load_host", "pack_frame", "read_frame", "serve_stream", "split_frame",
    "write_frame",
]
