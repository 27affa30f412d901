"""Benchmark configuration: defaults, YAML loading and validation.

The config file is a nested key-value YAML document (the same grammar as
the KB file). Relative paths are resolved against the config file's
directory so fixture bundles are relocatable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agents import AuditConfig, RemoteConfig
from .asf import AsfConfig
from .errors import ConfigError
from .metrics import CostModel
from .perception import PerceptionConfig
from .topologies import TOPOLOGY_NAMES

QUERY_CATEGORIES = ["General", "Assembly", "PartAttribute", "Maintenance", "FaultHandling"]


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    category: str
    text: str
    reference: str
    rubric_id: str


@dataclass(frozen=True)
class FeedbackSchedule:
    updates: tuple[tuple[int, int], ...]  # (frame_idx, true step), in stream order
    budget: int = 10  # max updates per step


@dataclass
class BenchmarkConfig:
    kb_path: Path = Path("kb.yaml")
    stream_path: Path | None = None
    gallery_path: Path | None = None
    queries_path: Path | None = None
    schedule_path: Path | None = None
    out_dir: Path = Path("out")
    seed: int = 0
    backend: str = "template"
    topologies: list[str] = field(default_factory=lambda: list(TOPOLOGY_NAMES))
    debate_rounds: int = 1
    evidence_k: int = 3
    ece_bins: int = 10
    kba_skip_categories: list[str] = field(default_factory=lambda: ["General"])
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    asf: AsfConfig = field(default_factory=AsfConfig)
    cost: CostModel = field(default_factory=CostModel)
    remote: RemoteConfig = field(default_factory=RemoteConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    lexicons: dict | None = None  # None -> built-in router lexicons

    def echo(self) -> dict[str, str]:
        """Flat key -> value map of every setting, for report headers."""
        flat: dict[str, str] = {}

        def add(prefix: str, obj) -> None:
            for name, value in vars(obj).items():
                flat[f"{prefix}.{name}"] = repr(value)

        for name in (
            "kb_path", "stream_path", "gallery_path", "queries_path", "schedule_path",
            "seed", "backend", "topologies", "debate_rounds", "evidence_k",
            "ece_bins", "kba_skip_categories",
        ):
            flat[name] = repr(getattr(self, name))
        add("perception", self.perception)
        add("asf", self.asf)
        add("cost", self.cost)
        add("remote", self.remote)
        flat["audit.forbidden"] = repr(self.audit.forbidden)
        flat["audit.hazards"] = repr(sorted(self.audit.hazards.items()))
        flat["audit.check_step_order"] = repr(self.audit.check_step_order)
        flat["lexicons"] = "builtin" if self.lexicons is None else repr(sorted(self.lexicons))
        return dict(sorted(flat.items()))


def _build(cls, raw: dict, where: str):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def load_config(path: str | Path) -> BenchmarkConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} is not a mapping")
    base = path.parent

    def as_path(key: str, default=None):
        if key not in raw or raw[key] is None:
            return default
        return (base / str(raw[key])).resolve()

    cfg = BenchmarkConfig(
        kb_path=as_path("kb", Path("kb.yaml")),
        stream_path=as_path("stream"),
        gallery_path=as_path("gallery"),
        queries_path=as_path("queries"),
        schedule_path=as_path("schedule"),
        out_dir=as_path("out_dir", (base / "out").resolve()),
        seed=int(raw.get("seed", 0)),
        backend=str(raw.get("backend", "template")),
        topologies=[str(t) for t in raw.get("topologies", TOPOLOGY_NAMES)],
        debate_rounds=int(raw.get("debate_rounds", 1)),
        evidence_k=int(raw.get("evidence_k", 3)),
        ece_bins=int(raw.get("ece_bins", 10)),
        kba_skip_categories=[str(c) for c in raw.get("kba_skip_categories", ["General"])],
        perception=_build(PerceptionConfig, raw.get("perception", {}) or {}, "perception"),
        asf=_build(AsfConfig, raw.get("asf", {}) or {}, "asf"),
        cost=_build(CostModel, raw.get("cost_model", {}) or {}, "cost_model"),
        remote=_build(RemoteConfig, raw.get("remote", {}) or {}, "remote"),
        audit=_audit_config(raw.get("audit", {}) or {}),
        lexicons=raw.get("lexicons"),
    )
    if cfg.backend not in ("template", "remote"):
        raise ConfigError(f"backend must be 'template' or 'remote', got '{cfg.backend}'")
    for name in cfg.topologies:
        if name not in TOPOLOGY_NAMES:
            raise ConfigError(f"unknown topology '{name}' (known: {TOPOLOGY_NAMES})")
    for label in ("kb_path", "stream_path", "gallery_path", "queries_path", "schedule_path"):
        p = getattr(cfg, label)
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{label} does not exist: {p}")
    return cfg


def _audit_config(raw: dict) -> AuditConfig:
    return AuditConfig(
        forbidden=tuple(str(p) for p in raw.get("forbidden", [])),
        hazards={str(k): str(v) for k, v in (raw.get("hazards") or {}).items()},
        refusal=str(
            raw.get("refusal", AuditConfig.__dataclass_fields__["refusal"].default)
        ),
        check_step_order=bool(raw.get("check_step_order", True)),
    )


def load_queries(path: str | Path) -> list[QueryRecord]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse query set {path}: {exc}") from exc
    records = []
    seen = set()
    for entry in raw.get("queries", []):
        rec = QueryRecord(
            query_id=str(entry["id"]),
            category=str(entry["category"]),
            text=str(entry["text"]),
            reference=str(entry["reference"]),
            rubric_id=str(entry["rubric"]),
        )
        if rec.category not in QUERY_CATEGORIES:
            raise ConfigError(
                f"query {rec.query_id}: unknown category '{rec.category}'"
            )
        if rec.query_id in seen:
            raise ConfigError(f"duplicate query id '{rec.query_id}'")
        seen.add(rec.query_id)
        records.append(rec)
    if not records:
        raise ConfigError(f"query set {path} is empty")
    return records


def load_schedule(path: str | Path, k_steps: int) -> FeedbackSchedule:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse schedule {path}: {exc}") from exc
    budget = int(raw.get("budget", 10))
    updates = []
    per_step: dict[int, int] = {}
    last_frame = -1
    for entry in raw.get("updates", []):
        frame, step = int(entry["frame"]), int(entry["step"])
        if not 1 <= step <= k_steps:
            raise ConfigError(f"schedule step {step} outside 1..{k_steps}")
        if frame < last_frame:
            raise ConfigError("schedule updates must be in stream order")
        last_frame = frame
        per_step[step] = per_step.get(step, 0) + 1
        if per_step[step] > budget:
            raise ConfigError(
                f"schedule exceeds the per-step budget of {budget} for step {step}"
            )
        updates.append((frame, step))
    return FeedbackSchedule(updates=tuple(updates), budget=budget)
