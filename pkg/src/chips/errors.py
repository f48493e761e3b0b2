"""Shared error base for every chips service.

Each error carries a machine-readable code (the class name) and an HTTP
status used by the REST layers. Service clients rebuild the matching
exception class from the ``error`` field of an error response body, so an
exception raised server-side surfaces as the same exception client-side.
"""

from __future__ import annotations

_REGISTRY: dict[str, type["ChipsError"]] = {}


class ChipsError(Exception):
    """Base class for all service-level errors."""

    http_status = 400

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        _REGISTRY[cls.__name__] = cls

    @property
    def code(self) -> str:
        return type(self).__name__

    def payload(self) -> dict:
        return {"error": self.code, "message": str(self)}


class RemoteServiceError(ChipsError):
    """A remote service replied with an error code this client does not know."""

    http_status = 502


def error_from_payload(payload: dict) -> ChipsError:
    """Rebuild the exception a service serialized into an error body."""
    code = payload.get("error", "")
    message = payload.get("message", code)
    cls = _REGISTRY.get(code)
    if cls is None:
        return RemoteServiceError(f"{code}: {message}")
    err = cls(message)
    return err
