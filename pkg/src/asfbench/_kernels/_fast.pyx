# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-frame kernels: IoU clustering, box fusion, rule scoring."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _iou(const double[:, ::1] b, Py_ssize_t i, Py_ssize_t j) nogil:
    cdef double x1 = max(b[i, 0], b[j, 0])
    cdef double y1 = max(b[i, 1], b[j, 1])
    cdef double x2 = min(b[i, 2], b[j, 2])
    cdef double y2 = min(b[i, 3], b[j, 3])
    cdef double iw = x2 - x1
    cdef double ih = y2 - y1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    cdef double inter = iw * ih
    cdef double area_i = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
    cdef double area_j = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    cdef double union = area_i + area_j - inter
    if union <= 0.0:
        return 0.0
    return inter / union


cdef inline Py_ssize_t _find(long long[::1] parent, Py_ssize_t i) nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def iou_matrix(double[:, ::1] boxes):
    cdef Py_ssize_t n = boxes.shape[0]
    out_arr = np.zeros((n, n))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double v
    with nogil:
        for i in range(n):
            out[i, i] = 1.0 if (boxes[i, 2] > boxes[i, 0] and boxes[i, 3] > boxes[i, 1]) else 0.0
            for j in range(i + 1, n):
                v = _iou(boxes, i, j)
                out[i, j] = v
                out[j, i] = v
    return out_arr


def cluster_labels(double[:, ::1] boxes, double tau):
    cdef Py_ssize_t n = boxes.shape[0]
    parent_arr = np.arange(n, dtype=np.int64)
    cdef long long[::1] parent = parent_arr
    cdef Py_ssize_t i, j, ri, rj
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                if _iou(boxes, i, j) >= tau:
                    ri = _find(parent, i)
                    rj = _find(parent, j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
    labels_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    remap_arr = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] remap = remap_arr
    cdef Py_ssize_t nxt = 0, root
    for i in range(n):
        root = _find(parent, i)
        if remap[root] < 0:
            remap[root] = nxt
            nxt += 1
        labels[i] = remap[root]
    return labels_arr


def fuse_clusters(double[:, ::1] boxes, double[::1] confs, long long[::1] labels,
                  Py_ssize_t n_clusters):
    fused_arr = np.zeros((n_clusters, 4))
    csum_arr = np.zeros(n_clusters)
    cnt_arr = np.zeros(n_clusters, dtype=np.int64)
    cdef double[:, ::1] fused = fused_arr
    cdef double[::1] csum = csum_arr
    cdef long long[::1] cnt = cnt_arr
    cdef Py_ssize_t i, c, lb
    cdef double w
    with nogil:
        for i in range(boxes.shape[0]):
            csum[labels[i]] += confs[i]
            cnt[labels[i]] += 1
        # per-cluster normalized weights keep single-member fusion exact
        for i in range(boxes.shape[0]):
            lb = labels[i]
            if csum[lb] > 0.0:
                w = confs[i] / csum[lb]
                for c in range(4):
                    fused[lb, c] += w * boxes[i, c]
        for i in range(n_clusters):
            if csum[i] <= 0.0:
                for c in range(4):
                    fused[i, c] = <double> NAN
    mean_conf = csum_arr / np.maximum(cnt_arr, 1)
    return fused_arr, mean_conf, cnt_arr


cdef extern from "math.h":
    double NAN


def rule_scores(double[::1] counts, double alpha,
                long long[::1] all_ptr, long long[::1] all_idx, double[::1] all_req,
                long long[::1] any_ptr, long long[::1] any_idx, double[::1] any_req,
                long long[::1] forbid_ptr, long long[::1] forbid_idx):
    cdef Py_ssize_t k_steps = all_ptr.shape[0] - 1
    scores_arr = np.empty(k_steps)
    cov_arr = np.empty(k_steps)
    cdef double[::1] scores = scores_arr
    cdef double[::1] cov = cov_arr
    cdef Py_ssize_t j, p, lo, hi
    cdef double all_j, any_j, pen_j, req, phi
    with nogil:
        for j in range(k_steps):
            lo = all_ptr[j]
            hi = all_ptr[j + 1]
            all_j = 0.0
            for p in range(lo, hi):
                req = all_req[p]
                if req < 1.0:
                    req = 1.0
                phi = counts[all_idx[p]] / req
                if phi > 1.0:
                    phi = 1.0
                all_j += phi
            if hi > lo:
                all_j /= (hi - lo)

            lo = any_ptr[j]
            hi = any_ptr[j + 1]
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
    return scores_arr, cov_arr
