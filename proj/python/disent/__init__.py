"""Python access to the disent core: CLI, metrics and the inference service."""

import json

import torch  # noqa: F401  loads the libtorch shared libraries the extension links

from ._disent import (
    frechet_distance,
    hopkins,
    posterior_entropy,
    published_schemas,
    run_cli,
)
from ._disent import Service as _Service

__all__ = [
    "Service",
    "cli",
    "frechet_distance",
    "hopkins",
    "posterior_entropy",
    "published_schemas",
    "schemas",
]


def cli(*args):
    """Run a disent CLI command; returns (exit_code, stdout, stderr)."""
    return run_cli([str(a) for a in args])


def schemas():
    return {name: json.loads(text) for name, text in published_schemas().items()}


class Service:
    """Request handlers of the HTTP service, without the socket."""

    def __init__(self, checkpoint, catalog_manifest):
        self._impl = _Service(str(checkpoint), str(catalog_manifest))

    def request(self, method, path, body=None, **query):
        payload = "" if body is None else json.dumps(body)
        status, text = self._impl.handle(method, path, {k: str(v) for k, v in query.items()}, payload)
        return status, json.loads(text)
