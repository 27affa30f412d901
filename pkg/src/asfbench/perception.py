"""Depth-refined object context from recorded detection streams.

A sliding window of per-frame detections is clustered per part id
(single-linkage on IoU), each cluster is fused by confidence-weighted
averaging, unstable objects are filtered out, and the nearest remaining
object anchors the relevant-context selection. All operations are pure and
deterministic: member order inside a window never affects results.
"""

from __future__ import annotations

import json
import math
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .errors import StreamFormatError


@dataclass(frozen=True)
class Detection:
    frame_idx: int
    part_id: str
    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2
    confidence: float
    depth: float
    centroid: tuple[float, float]

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"malformed bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.depth < 0.0:
            raise ValueError(f"negative depth {self.depth}")


@dataclass(frozen=True)
class FusedObject:
    """Confidence-weighted cluster fusion: box, mean confidence, mean depth."""

    part_id: str
    bbox: tuple[float, float, float, float]
    confidence: float
    depth: float
    centroid: tuple[float, float]  # center of the fused box
    support: int
    persistence: int  # longest run of consecutive frames with a member


@dataclass(frozen=True)
class ContextSet:
    focus: FusedObject
    members: tuple[FusedObject, ...]  # includes focus
    counts: dict[str, int]


def _canonical(det: Detection):
    return (det.frame_idx, det.part_id, det.bbox, det.confidence, det.depth, det.centroid)


def cluster_window(
    detections: Iterable[Detection], tau_iou: float
) -> list[list[Detection]]:
    """Single-linkage clusters within each part id at IoU >= tau_iou (inclusive).

    Clusters are ordered by (part_id, earliest member frame, smallest member
    key); members are returned in canonical order. Output is invariant to
    the input ordering of detections.
    """
    if not 0.0 < tau_iou <= 1.0:
        raise ValueError("tau_iou must be in (0, 1]")
    by_part: dict[str, list[Detection]] = {}
    for det in detections:
        by_part.setdefault(det.part_id, []).append(det)

    clusters: list[list[Detection]] = []
    for part_id in sorted(by_part):
        dets = sorted(by_part[part_id], key=_canonical)
        boxes = np.ascontiguousarray([d.bbox for d in dets], dtype=np.float64)
        labels = _kernels.cluster_labels(boxes, tau_iou)
        groups: dict[int, list[Detection]] = {}
        for det, lb in zip(dets, labels.tolist()):
            groups.setdefault(lb, []).append(det)
        clusters.extend(groups[lb] for lb in sorted(groups))
    clusters.sort(key=lambda c: (c[0].part_id, min(d.frame_idx for d in c), _canonical(c[0])))
    return clusters


def fuse_cluster(cluster: list[Detection]) -> FusedObject:
    """Fuse one cluster: confidence-weighted box, mean confidence, mean depth."""
    if not cluster:
        raise ValueError("cannot fuse an empty cluster")
    members = sorted(cluster, key=_canonical)
    boxes = np.ascontiguousarray([d.bbox for d in members], dtype=np.float64)
    confs = np.ascontiguousarray([d.confidence for d in members], dtype=np.float64)
    if float(confs.sum()) <= 0.0:
        raise ValueError("cluster confidences sum to zero; weighted fusion undefined")
    labels = np.zeros(len(members), dtype=np.int64)
    fused, mean_conf, _ = _kernels.fuse_clusters(boxes, confs, labels, 1)
    x1, y1, x2, y2 = (float(v) for v in fused[0])
    frames = sorted({d.frame_idx for d in members})
    return FusedObject(
        part_id=members[0].part_id,
        bbox=(x1, y1, x2, y2),
        confidence=float(mean_conf[0]),
        depth=float(np.mean([d.depth for d in members])),
        centroid=((x1 + x2) / 2.0, (y1 + y2) / 2.0),
        support=len(members),
        persistence=_longest_run(frames),
    )


def _longest_run(sorted_frames: list[int]) -> int:
    best = run = 1
    for prev, cur in zip(sorted_frames, sorted_frames[1:]):
        run = run + 1 if cur == prev + 1 else 1
        best = max(best, run)
    return best


def stable_objects(
    objects: Iterable[FusedObject],
    min_support: int,
    min_persistence: int,
    conf_floor: float,
) -> list[FusedObject]:
    """Keep objects with enough supporting detections, confidence and persistence."""
    if min_support < 1 or min_persistence < 1:
        raise ValueError("min_support and min_persistence must be >= 1")
    return [
        o
        for o in objects
        if o.support >= min_support
        and o.confidence >= conf_floor
        and o.persistence >= min_persistence
    ]


def select_context(
    objects: list[FusedObject], tau_p: float, tau_d: float
) -> ContextSet | None:
    """Nearest object becomes the focus; members lie within the spatial and
    depth thresholds of it (inclusive). Returns None when there is nothing
    to focus on, which callers treat as an absent observation.
    """
    if not objects:
        return None
    focus = min(objects, key=lambda o: (o.depth, -o.confidence, o.part_id, o.bbox))
    members = tuple(
        o
        for o in sorted(objects, key=lambda o: (o.part_id, o.bbox, o.depth))
        if math.dist(o.centroid, focus.centroid) <= tau_p
        and abs(o.depth - focus.depth) <= tau_d
    )
    counts = dict(Counter(o.part_id for o in members))
    return ContextSet(focus=focus, members=members, counts=counts)


@dataclass
class PerceptionConfig:
    tau_iou: float = 0.5
    conf_floor: float = 0.4
    min_support: int = 3
    min_persistence: int = 5
    window: int = 5  # must be >= min_persistence for anything to stabilize
    tau_p: float = 300.0
    tau_d: float = 0.5


class SlidingWindow:
    """Accumulates the last L frames and derives the current context set."""

    def __init__(self, cfg: PerceptionConfig):
        self.cfg = cfg
        self._frames: deque[tuple[int, tuple[Detection, ...]]] = deque(maxlen=cfg.window)

    def push(self, frame_idx: int, detections: Iterable[Detection]) -> None:
        self._frames.append((frame_idx, tuple(detections)))

    def context(self) -> ContextSet | None:
        dets = [d for _, frame in self._frames for d in frame]
        fused = []
        for cluster in cluster_window(dets, self.cfg.tau_iou):
            # zero-confidence clusters can never clear the stability floor
            if sum(d.confidence for d in cluster) <= 0.0:
                continue
            fused.append(fuse_cluster(cluster))
        stable = stable_objects(
            fused, self.cfg.min_support, self.cfg.min_persistence, self.cfg.conf_floor
        )
        return select_context(stable, self.cfg.tau_p, self.cfg.tau_d)


@dataclass(frozen=True)
class StreamFrame:
    frame_idx: int
    detections: tuple[Detection, ...]
    embedding: tuple[float, ...] | None = None
    true_step: int | None = None


def read_stream(path: str | Path) -> Iterator[StreamFrame]:
    """Iterate a line-oriented detection stream (one JSON record per line)."""
    path = Path(path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                frame_idx = int(rec["frame"])
                dets = []
                for d in rec.get("detections", []):
                    bbox = tuple(float(v) for v in d["bbox"])
                    cx, cy = d.get("centroid") or (
                        (bbox[0] + bbox[2]) / 2.0,
                        (bbox[1] + bbox[3]) / 2.0,
                    )
                    dets.append(
                        Detection(
                            frame_idx=frame_idx,
                            part_id=str(d["part"]),
                            bbox=bbox,  # type: ignore[arg-type]
                            confidence=float(d["conf"]),
                            depth=float(d["depth"]),
                            centroid=(float(cx), float(cy)),
                        )
                    )
                embedding = rec.get("embedding")
                yield StreamFrame(
                    frame_idx=frame_idx,
                    detections=tuple(dets),
                    embedding=None if embedding is None else tuple(float(v) for v in embedding),
                    true_step=None if rec.get("true_step") is None else int(rec["true_step"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise StreamFormatError(f"{path}:{lineno}: bad stream record: {exc}") from exc
