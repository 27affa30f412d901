"""Kernel backend selection.

Imports the compiled extension when available and falls back to the pure
NumPy implementation otherwise. Set ASFBENCH_KERNELS=pure|compiled to force
a backend (forcing `compiled` raises if the extension is missing).
"""

import os

_FORCED = os.environ.get("ASFBENCH_KERNELS", "").strip().lower()

if _FORCED == "pure":
    from . import pure as _impl

    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        from . import pure as _impl

        BACKEND = "pure"

iou_matrix = _impl.iou_matrix
cluster_labels = _impl.cluster_labels
fuse_clusters = _impl.fuse_clusters
rule_scores = _impl.rule_scores


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'pure'."""
    return BACKEND
