"""Adaptive step fusion: class-level expert combination and online adaptation.

Fusion combines the two expert outputs with per-class weights and biases,
global gates, a coverage bonus and a workflow transition penalty, then
calibrates confidence by softmax. Feedback updates move weight mass toward
the confirmed class multiplicatively under a trust-region cap, with focal
scaling so confident experts move less, per-class rate decay and history
damping against collapse, conservative zero-sum bias transfer, and gate
nudges when exactly one expert was right. No gradients anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StateLoadError
from .experts import ExpertOutput
from .kb import WorkflowGraph

COL_STATE_GRAPH = 0
COL_RETRIEVAL = 1


@dataclass(frozen=True)
class AsfConfig:
    alpha: float = 0.6  # state-graph rule balance
    gamma: float = 2.0  # focal exponent
    eta: float = 0.1  # base step size
    rho: float = 0.5  # per-class rate decay exponent
    tau_trust: float = 0.2  # trust region: cap on any multiplicative change
    b_max: float = 1.0  # bias bound
    eps_floor: float = 1e-3  # weight floor
    c_freeze: float = 0.85  # confident correct experts are frozen
    leak_s: float = 0.1  # leak of the state-graph expert to non-winning classes
    leak_r: float = 0.1
    lam_cov: float = 0.3  # coverage bonus weight
    lam_tr: float = 0.5  # transition penalty weight
    temperature: float = 1.0  # softmax temperature for calibrated confidence
    history_window: int = 20  # ring buffer length H for recency damping
    gate_rate: float = 0.05  # gate nudge, multiplied by the effective rate
    d_min: float = 0.1  # floor of the recency damping factor
    top_k: int = 1  # retrieval top-k average

    def __post_init__(self):
        if not (0.0 <= self.leak_s < 1.0 and 0.0 <= self.leak_r < 1.0):
            raise ValueError("leak parameters must be in [0, 1)")
        if self.lam_cov < 0.0 or self.lam_tr < 0.0:
            raise ValueError("lam_cov and lam_tr must be nonnegative")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if self.eps_floor <= 0.0 or self.temperature <= 0.0:
            raise ValueError("eps_floor and temperature must be positive")


@dataclass
class AsfState:
    """Mutable fusion state. Single writer: `fuse` and `feedback_update`
    mutate it and must be serialized externally; snapshots via `copy`."""

    k_steps: int
    w: np.ndarray  # (K, 2) nonnegative per-class, per-expert weights
    b: np.ndarray  # (K,) biases
    g: np.ndarray  # (2,) gates, nonnegative, summing to 1
    n_y: np.ndarray  # (K,) feedback counts, int64
    history: list[int] = field(default_factory=list)  # last H feedback labels
    history_window: int = 20
    prev_step: int | None = None  # not persisted; session-local

    @classmethod
    def fresh(cls, k_steps: int, cfg: AsfConfig) -> "AsfState":
        return cls(
            k_steps=k_steps,
            w=np.ones((k_steps, 2)),
            b=np.zeros(k_steps),
            g=np.array([0.5, 0.5]),
            n_y=np.zeros(k_steps, dtype=np.int64),
            history=[],
            history_window=cfg.history_window,
        )

    def copy(self) -> "AsfState":
        return AsfState(
            k_steps=self.k_steps,
            w=self.w.copy(),
            b=self.b.copy(),
            g=self.g.copy(),
            n_y=self.n_y.copy(),
            history=list(self.history),
            history_window=self.history_window,
            prev_step=self.prev_step,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, AsfState):
            return NotImplemented
        return (
            self.k_steps == other.k_steps
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.g, other.g)
            and np.array_equal(self.n_y, other.n_y)
            and self.history == other.history
            and self.history_window == other.history_window
        )


@dataclass(frozen=True)
class FusedPrediction:
    scores: np.ndarray
    step: int
    confidence: float  # softmax probability of the fused step
    probabilities: np.ndarray
    contributions: dict[str, np.ndarray]  # per-expert gated terms, for audit logs


@dataclass(frozen=True)
class FeedbackDiag:
    """Audit record of one feedback update."""

    y: int
    rival: int | None  # highest-scoring non-target class
    eta_eff: float
    kappa: tuple[float, float]
    deltas: tuple[float, float]  # applied multiplicative step per column (0 = untouched)
    updated_columns: tuple[int, ...]
    gate_nudged: int | None  # column index, when exactly one expert hit
    beta: float
    pre_renorm_factors: np.ndarray  # (K, 2) entrywise W_after_step / W_before


def leak_scores(out: ExpertOutput, leak: float, k_steps: int) -> np.ndarray:
    """Per-class score vector: full confidence on the winner, leaked elsewhere."""
    if not 0.0 <= leak < 1.0:
        raise ValueError("leak must be in [0, 1)")
    vec = np.full(k_steps, leak * out.confidence)
    vec[out.winner - 1] = out.confidence
    return vec


def _softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / temperature
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def fuse(
    state: AsfState,
    out_s: ExpertOutput,
    out_r: ExpertOutput,
    cfg: AsfConfig,
    workflow: WorkflowGraph | None = None,
) -> FusedPrediction:
    """Combine both experts into a fused step prediction; updates prev_step."""
    k = state.k_steps
    if out_s.scores.shape != (k,) or out_r.scores.shape != (k,):
        raise ValueError("expert output dimension does not match state")
    c_s = leak_scores(out_s, cfg.leak_s, k)
    c_r = leak_scores(out_r, cfg.leak_r, k)
    cov = out_s.coverage if out_s.coverage is not None else np.zeros(k)

    term_s = state.g[COL_STATE_GRAPH] * state.w[:, COL_STATE_GRAPH] * c_s
    term_r = state.g[COL_RETRIEVAL] * state.w[:, COL_RETRIEVAL] * c_r
    scores = state.b + term_s + term_r + cfg.lam_cov * cov
    if workflow is not None and state.prev_step is not None:
        allowed = workflow.allowed(state.prev_step)
        penalty = np.array([0.0 if j in allowed else cfg.lam_tr for j in range(1, k + 1)])
        scores = scores - penalty

    step = int(np.argmax(scores)) + 1
    probs = _softmax(scores, cfg.temperature)
    state.prev_step = step
    return FusedPrediction(
        scores=scores,
        step=step,
        confidence=float(probs[step - 1]),
        probabilities=probs,
        contributions={"state_graph": term_s, "retrieval": term_r},
    )


def effective_rate(n_y: int, f_recent: float, cfg: AsfConfig) -> float:
    """eta * n^-rho * d, where d linearly damps recently dominant labels."""
    d = min(max(1.0 - f_recent, cfg.d_min), 1.0)
    return cfg.eta * float(n_y) ** (-cfg.rho) * d


def _renorm_column(col: np.ndarray, k: int, floor: float) -> np.ndarray:
    """Clamp to the floor and rescale free entries so the column sums to K."""
    if floor * col.size > k:
        raise ValueError("floor too large: column cannot sum to K")
    col = np.maximum(col, floor)
    pinned = np.zeros(col.shape, dtype=bool)
    for _ in range(col.size):
        target = k - floor * int(pinned.sum())
        free = ~pinned
        col[free] *= target / col[free].sum()
        low = free & (col < floor)
        if not low.any():
            break
        col[low] = floor
        pinned |= low
    return col


def feedback_update(
    state: AsfState,
    y: int,
    out_s: ExpertOutput,
    out_r: ExpertOutput,
    last_scores: np.ndarray,
    cfg: AsfConfig,
) -> FeedbackDiag:
    """Apply one confirmed/corrected label to the fusion state (in place).

    `last_scores` must come from the fuse call being corrected. The update
    is total: it never fails, and it preserves the state invariants
    (column sums K, weight floor, gate normalization, bias bound and
    bias-sum conservation).
    """
    if not 1 <= y <= state.k_steps:
        raise ValueError(f"step id {y} outside 1..{state.k_steps}")
    k = state.k_steps
    w_before = state.w.copy()

    # 1. focal impact, frozen for confident hits
    kappa = np.array([(1.0 - out_s.confidence) ** cfg.gamma, (1.0 - out_r.confidence) ** cfg.gamma])
    if out_s.winner == y and out_s.confidence >= cfg.c_freeze:
        kappa[COL_STATE_GRAPH] = 0.0
    if out_r.winner == y and out_r.confidence >= cfg.c_freeze:
        kappa[COL_RETRIEVAL] = 0.0

    # 2. effective step size from the post-increment count and recent history
    state.n_y[y - 1] += 1
    f_recent = state.history.count(y) / state.history_window
    eta_eff = effective_rate(int(state.n_y[y - 1]), f_recent, cfg)

    # 3. strongest rival at feedback time
    rival: int | None = None
    if k > 1:
        masked = np.array(last_scores, dtype=np.float64)
        masked[y - 1] = -np.inf
        rival = int(np.argmax(masked)) + 1

    # 4. both experts wrong: correct only the less confident column
    s_err = out_s.winner != y
    r_err = out_r.winner != y
    if s_err and r_err:
        columns = (
            (COL_STATE_GRAPH,)
            if out_s.confidence <= out_r.confidence
            else (COL_RETRIEVAL,)
        )
    else:
        columns = (COL_STATE_GRAPH, COL_RETRIEVAL)

    # 5. multiplicative transfer from the rival to the target, trust-capped
    deltas = [0.0, 0.0]
    if rival is not None:
        for e in columns:
            delta = min(eta_eff * kappa[e], cfg.tau_trust)
            deltas[e] = delta
            state.w[y - 1, e] *= 1.0 + delta
            state.w[rival - 1, e] *= 1.0 - delta

    with np.errstate(divide="ignore", invalid="ignore"):
        pre_renorm = np.where(w_before > 0.0, state.w / w_before, 1.0)

    # 6. conservative zero-sum bias transfer with clip-and-return
    beta = 0.0
    if rival is not None:
        beta = 0.25 * eta_eff * float(np.mean([kappa[e] for e in columns]))
        raw_y = state.b[y - 1] + beta
        new_y = min(max(raw_y, -cfg.b_max), cfg.b_max)
        raw_i = state.b[rival - 1] - beta + (raw_y - new_y)
        new_i = min(max(raw_i, -cfg.b_max), cfg.b_max)
        new_y += raw_i - new_i
        state.b[y - 1] = new_y
        state.b[rival - 1] = new_i

    # 7. gate nudge only when exactly one expert hit
    gate_nudged: int | None = None
    hits = [e for e, out in ((COL_STATE_GRAPH, out_s), (COL_RETRIEVAL, out_r)) if out.winner == y]
    if len(hits) == 1:
        gate_nudged = hits[0]
        state.g[gate_nudged] += cfg.gate_rate * eta_eff
        state.g /= state.g.sum()

    # 8. floor and renormalize both columns to sum K
    for e in (COL_STATE_GRAPH, COL_RETRIEVAL):
        state.w[:, e] = _renorm_column(state.w[:, e], k, cfg.eps_floor)

    # 9. record the label
    state.history.append(y)
    if len(state.history) > state.history_window:
        del state.history[: len(state.history) - state.history_window]

    return FeedbackDiag(
        y=y,
        rival=rival,
        eta_eff=eta_eff,
        kappa=(float(kappa[0]), float(kappa[1])),
        deltas=(deltas[0], deltas[1]),
        updated_columns=columns,
        gate_nudged=gate_nudged,
        beta=beta,
        pre_renorm_factors=pre_renorm,
    )


STATE_FORMAT = "asf-state"
STATE_VERSION = 1


def save_state(state: AsfState, path: str | Path) -> None:
    """Persist the feedback-learned state (prev_step is session-local and
    not saved). JSON keeps exact shortest-round-trip decimals, so
    save -> load is bit-stable."""
    doc = {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "k": state.k_steps,
        "history_window": state.history_window,
        "w": state.w.tolist(),
        "b": state.b.tolist(),
        "g": state.g.tolist(),
        "n_y": state.n_y.tolist(),
        "history": list(state.history),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_state(path: str | Path, cfg: AsfConfig | None = None) -> AsfState:
    """Load a persisted state, validating every invariant; config-dependent
    bounds (weight floor, bias bound) are checked when cfg is given."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StateLoadError(f"cannot read state file {path}: {exc}") from exc

    def fail(msg: str):
        raise StateLoadError(f"{path}: {msg}")

    if doc.get("format") != STATE_FORMAT:
        fail("not a fusion state file")
    if doc.get("version") != STATE_VERSION:
        fail(f"unsupported state version {doc.get('version')!r}")
    try:
        k = int(doc["k"])
        w = np.asarray(doc["w"], dtype=np.float64)
        b = np.asarray(doc["b"], dtype=np.float64)
        g = np.asarray(doc["g"], dtype=np.float64)
        n_y = np.asarray(doc["n_y"], dtype=np.int64)
        history = [int(v) for v in doc["history"]]
        history_window = int(doc["history_window"])
    except (KeyError, TypeError, ValueError) as exc:
        fail(f"malformed field: {exc}")

    if w.shape != (k, 2):
        fail(f"weight matrix shape {w.shape}, expected ({k}, 2)")
    if b.shape != (k,) or g.shape != (2,) or n_y.shape != (k,):
        fail("vector shapes do not match K")
    if np.any(w <= 0.0):
        fail("weights must be positive")
    col_sums = w.sum(axis=0)
    if np.any(np.abs(col_sums - k) > 1e-6):
        fail(f"weight columns must sum to K; got {col_sums.tolist()}")
    if np.any(g < 0.0) or abs(float(g.sum()) - 1.0) > 1e-9:
        fail(f"gates must be nonnegative and sum to 1; got {g.tolist()}")
    if np.any(n_y < 0):
        fail("feedback counts must be nonnegative")
    if any(not 1 <= h <= k for h in history):
        fail("history contains an out-of-range step id")
    if len(history) > history_window:
        fail("history longer than its window")
    if cfg is not None:
        if np.any(w < cfg.eps_floor - 1e-12):
            fail("weight below the configured floor")
        if np.any(np.abs(b) > cfg.b_max + 1e-12):
            fail("bias outside the configured bound")

    return AsfState(
        k_steps=k, w=w, b=b, g=g, n_y=n_y, history=history, history_window=history_window
    )
