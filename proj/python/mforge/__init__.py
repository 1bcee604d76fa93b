"""Python bindings for the mforge mesh pipeline.

Meshes are ``(vertices, faces)`` pairs of numpy arrays with shapes
``(V, 3)`` float32 and ``(F, 3)`` uint32.
"""

import json
import os
from pathlib import Path

_fixtures = Path(__file__).with_name("fixtures")
if _fixtures.is_dir():
    os.environ.setdefault("MFORGE_FIXTURES", str(_fixtures))

from . import _mforge  # noqa: E402
from ._mforge import (  # noqa: E402,F401
    RepositoryError,
    ValidationError,
    compact_binary_size,
    decode,
    encode,
    format_suggestion,
    icosphere,
    procedural_mesh,
    transition,
    validate,
)

__all__ = [
    "Repository",
    "RepositoryError",
    "ValidationError",
    "compact_binary_size",
    "decode",
    "diversity_index",
    "encode",
    "format_suggestion",
    "icosphere",
    "mesh_stats",
    "parse_suggestion_line",
    "procedural_mesh",
    "run_script",
    "simplify",
    "transition",
    "validate",
]


def simplify(vertices, faces, target=1000, preserve_boundary=True, midpoint=False):
    """Quadric edge collapse down to ``target`` vertices.

    Returns ``(vertices, faces, report)``.
    """
    v, f, report = _mforge.simplify(vertices, faces, target, preserve_boundary, midpoint)
    return v, f, json.loads(report)


def mesh_stats(vertices, faces):
    return json.loads(_mforge.mesh_stats(vertices, faces))


def parse_suggestion_line(line):
    """Dict with name, color, shape and location, or None."""
    parsed = _mforge.parse_suggestion_line(line)
    return None if parsed is None else json.loads(parsed)


def diversity_index(labels):
    return json.loads(_mforge.diversity_index(list(labels)))


def run_script(script, repo="", target=1000, auto_select=False):
    """Replays a session script against mock backends and returns the summary.

    ``script`` is a dict or a JSON string.
    """
    text = script if isinstance(script, str) else json.dumps(script)
    return json.loads(_mforge.run_script(text, str(repo), target, auto_select))


class Repository(_mforge.Repository):
    """Asset repository; in memory unless ``path`` is given."""

    def __init__(self, path=""):
        super().__init__(str(path))

    def query(self, text, k=5, min_score=0.0):
        return json.loads(self._query(text, k, min_score))

    def stats(self):
        return json.loads(self._stats())
