"""Pure NumPy reference implementation of the per-frame kernels.

Mirrors `_fast.pyx` exactly; kept dependency-free so the package works
without a compiler. All functions take C-contiguous float64 arrays.
"""

from __future__ import annotations

import numpy as np


def iou_matrix(boxes: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (n,4) boxes in (x1,y1,x2,y2) order.

    No epsilon is added to the union: thresholds in callers are inclusive
    and must see exact ratios (e.g. IoU == 0.5).
    """
    x1 = np.maximum(boxes[:, None, 0], boxes[None, :, 0])
    y1 = np.maximum(boxes[:, None, 1], boxes[None, :, 1])
    x2 = np.minimum(boxes[:, None, 2], boxes[None, :, 2])
    y2 = np.minimum(boxes[:, None, 3], boxes[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area[:, None] + area[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


def cluster_labels(boxes: np.ndarray, tau: float) -> np.ndarray:
    """Single-linkage components over IoU >= tau; labels densified by first index."""
    n = boxes.shape[0]
    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n:
        iou = iou_matrix(boxes)
        ii, jj = np.nonzero(np.triu(iou >= tau, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    labels = np.empty(n, dtype=np.int64)
    remap: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        if root not in remap:
            remap[root] = len(remap)
        labels[i] = remap[root]
    return labels


def fuse_clusters(
    boxes: np.ndarray, confs: np.ndarray, labels: np.ndarray, n_clusters: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Confidence-weighted box average and mean confidence per cluster.

    Returns (fused_boxes (m,4), mean_conf (m,), support (m,)). Weights are
    normalized per cluster before accumulation so a single-member cluster
    reproduces its box exactly. Clusters with zero total confidence get NaN
    boxes; callers decide how to treat them.
    """
    csum = np.zeros(n_clusters)
    cnt = np.zeros(n_clusters, dtype=np.int64)
    for i in range(boxes.shape[0]):
        csum[labels[i]] += confs[i]
        cnt[labels[i]] += 1
    fused = np.zeros((n_clusters, 4))
    for i in range(boxes.shape[0]):
        lb = labels[i]
        if csum[lb] > 0.0:
            fused[lb] += (confs[i] / csum[lb]) * boxes[i]
    fused[csum <= 0.0] = np.nan
    mean_conf = csum / np.maximum(cnt, 1)
    return fused, mean_conf, cnt


def rule_scores(
    counts: np.ndarray,
    alpha: float,
    all_ptr: np.ndarray,
    all_idx: np.ndarray,
    all_req: np.ndarray,
    any_ptr: np.ndarray,
    any_idx: np.ndarray,
    any_req: np.ndarray,
    forbid_ptr: np.ndarray,
    forbid_idx: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Step scores from component counts against CSR-packed step rules.

    For step j:
      phi(k)  = min(1, n(k) / max(1, r_j(k)))
      all_j   = mean of phi over required parts (0 if none are listed)
      any_j   = 1 if no alternatives listed or any alternative count meets
                its multiplicity, else 0
      pen_j   = 0.5 if any forbidden part is present
      score_j = alpha * all_j + (1 - alpha) * any_j - pen_j
    Coverage (the returned second vector) is all_j.
    """
    k_steps = all_ptr.shape[0] - 1
    scores = np.empty(k_steps)
    cov = np.empty(k_steps)
    for j in range(k_steps):
        lo, hi = all_ptr[j], all_ptr[j + 1]
        all_j = 0.0
        for p in range(lo, hi):
            req = max(1.0, all_req[p])
            all_j += min(1.0, counts[all_idx[p]] / req)
        all_j /= max(1, hi - lo)

        lo, hi = any_ptr[j], any_ptr[j + 1]
        if hi == lo:
            any_j = 1.0
        else:
            any_j = 0.0
            for p in range(lo, hi):
                if counts[any_idx[p]] >= any_req[p]:
                    any_j = 1.0
                    break

        pen_j = 0.0
        for p in range(forbid_ptr[j], forbid_ptr[j + 1]):
            if counts[forbid_idx[p]] > 0.0:
                pen_j = 0.5
                break

        cov[j] = all_j
        scores[j] = alpha * all_j + (1.0 - alpha) * any_j - pen_j
    return scores, cov
