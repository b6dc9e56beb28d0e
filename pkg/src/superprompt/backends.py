"""Backend selection by URI-style config string."""

from __future__ import annotations

from .model import ReferenceModel
from .remote import RemoteBackend

BACKEND_CHOICES = ("reference-alibi", "reference-rotary", "remote:<address>")


def make_backend(uri: str):
    """reference-alibi | reference-rotary | remote:<host>:<port>"""
    if uri == "reference-alibi":
        return ReferenceModel("alibi")
    if uri == "reference-rotary":
        return ReferenceModel("rotary")
    if uri.startswith("remote:"):
        return RemoteBackend(uri.removeprefix("remote:"))
    raise ValueError(f"unknown backend {uri!r}; choose from {BACKEND_CHOICES}")
