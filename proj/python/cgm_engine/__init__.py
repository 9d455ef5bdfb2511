"""Python bindings for the causal generative model engine."""

from ._core import (
    Graph,
    IoError,
    ValidationError,
    __version__,
    cluster,
    load_model,
    make_default_planted,
    make_seeded_generator,
    match_labelings,
    nmf,
    preprocess_maps,
    read_eims,
    run_cli,
    stability,
)

__all__ = [
    "Graph",
    "IoError",
    "ValidationError",
    "__version__",
    "cluster",
    "load_model",
    "make_default_planted",
    "make_seeded_generator",
    "match_labelings",
    "nmf",
    "preprocess_maps",
    "read_eims",
    "run_cli",
    "stability",
]
