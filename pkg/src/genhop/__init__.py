"""Subspace-learning image generator.

Whitens images into a low-dimensional seed space through a two-hop Saab
cascade, models the seed distribution so white Gaussian noise can drive it,
and expands seeds back to images with locally linear embedding and inverse
(coloring) transforms.

Submodules import lazily so the CLI can cap thread pools before the numeric
libraries initialize.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "cli",
    "datasets",
    "errors",
    "lle",
    "model_io",
    "pipeline",
    "saab",
    "seed",
    "tensor",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
