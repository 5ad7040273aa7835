"""Sub-group representation: log disparity scores, bands, sampling weights, audit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SchemaError, discretize

EPS_P = 1e-4
DELTA = abs(math.log(0.9))
BAND_EDGES = (math.log(0.8), math.log(0.9), -math.log(0.9), -math.log(0.8))


@dataclass(frozen=True)
class Condition:
    """``column == equals`` for discrete columns, ``low <= column < high`` for continuous ones."""

    column: str
    equals: Optional[str] = None
    low: Optional[float] = None
    high: Optional[float] = None

    def __post_init__(self):
        if self.equals is None and self.low is None and self.high is None:
            raise ValueError(f"condition on {self.column!r} is empty")
        if self.equals is not None and (self.low is not None or self.high is not None):
            raise ValueError(f"condition on {self.column!r} mixes equality and range")


@dataclass(frozen=True)
class SubgroupSpec:
    id: str
    conditions: tuple
    label: str = ""

    def __post_init__(self):
        if not self.conditions:
            raise ValueError(f"subgroup {self.id!r} needs at least one condition")
        object.__setattr__(self, "conditions", tuple(self.conditions))

    @classmethod
    def from_dict(cls, cfg: dict) -> "SubgroupSpec":
        conds = tuple(Condition(**c) for c in cfg["conditions"])
        return cls(cfg["id"], conds, cfg.get("label", cfg["id"]))

    def check(self, schema) -> None:
        cols = {c.name: c for c in schema}
        for cond in self.conditions:
            col = cols.get(cond.column)
            if col is None:
                raise SchemaError(f"subgroup {self.id!r}: unknown column {cond.column!r}")
            if cond.equals is not None:
                if col.kind == "continuous":
                    raise SchemaError(f"subgroup {self.id!r}: equality on continuous column {col.name!r}")
                if str(cond.equals) not in col.categories:
                    raise SchemaError(f"subgroup {self.id!r}: {cond.equals!r} not a category of {col.name!r}")
            elif col.kind != "continuous":
                raise SchemaError(f"subgroup {self.id!r}: range condition on discrete column {col.name!r}")


def membership(x: np.ndarray, y: np.ndarray, d: Dataset, subgroups: Sequence[SubgroupSpec]) -> np.ndarray:
    """Boolean (rows x subgroups) matrix; ``x`` must be discretized."""
    spans = {s.name: s for s in d.spans}
    label = d.label
    out = np.ones((len(x), len(subgroups)), dtype=bool)
    for j, group in enumerate(subgroups):
        group.check(d.schema)
        for cond in group.conditions:
            if cond.column == label.name:
                out[:, j] &= y == label.categories.index(str(cond.equals))
                continue
            span = spans[cond.column]
            if span.kind == "continuous":
                lo, hi = d.scaling[span.name]
                v = x[:, span.start] * (hi - lo) + lo
                if cond.low is not None:
                    out[:, j] &= v >= cond.low
                if cond.high is not None:
                    out[:, j] &= v < cond.high
            elif span.kind == "binary":
                out[:, j] &= x[:, span.start] == float(span.categories.index(str(cond.equals)))
            else:
                out[:, j] &= x[:, span.start + span.categories.index(str(cond.equals))] == 1.0
    return out


def rows_of(obj, d: Dataset) -> tuple:
    """Discrete (x, y) of a Dataset or a generated batch."""
    if hasattr(obj, "x_prime"):
        return discretize(obj.x_prime, d.spans), np.asarray(obj.y_prime).argmax(axis=1)
    return discretize(obj.x, d.spans), np.asarray(obj.y)


def lds(p_synth: float, p_real: float, eps: float = EPS_P) -> float:
    """Log odds ratio of a sub-group's frequency, synthetic over real."""
    ps = min(max(p_synth, eps), 1 - eps)
    pr = min(max(p_real, eps), 1 - eps)
    return math.log(ps / (1 - ps)) - math.log(pr / (1 - pr))


@dataclass(frozen=True)
class RepresentationBand:
    band: str
    thresholds: tuple = BAND_EDGES


def classify_band(value: float) -> RepresentationBand:
    if not math.isfinite(value):
        raise ValueError("band classification needs a finite LDS value")
    missing, under, adequate, _ = BAND_EDGES
    if value <= missing:
        return RepresentationBand("missing")
    if value <= under:
        return RepresentationBand("under")
    if value <= adequate:
        return RepresentationBand("adequate")
    # everything above -log(0.9) counts as over-represented, including > -log(0.8)
    return RepresentationBand("over")


@dataclass(frozen=True)
class LdsRecord:
    subgroup_id: str
    p_real: float
    p_synth: float
    lds: float
    epoch: int


def lds_records(real_freq: np.ndarray, synth_member: np.ndarray, subgroups, epoch: int) -> list:
    synth_freq = synth_member.mean(axis=0) if len(synth_member) else np.zeros(len(subgroups))
    out = []
    for j, group in enumerate(subgroups):
        pr = min(max(float(real_freq[j]), EPS_P), 1 - EPS_P)
        ps = min(max(float(synth_freq[j]), EPS_P), 1 - EPS_P)
        out.append(LdsRecord(group.id, pr, ps, lds(ps, pr), epoch))
    return out


def ldss(trace: np.ndarray, member: np.ndarray, window: int) -> np.ndarray:
    """Per-instance score: mean over the last ``window`` epochs of the mean LDS
    of the monitored sub-groups containing the instance (0 if none)."""
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 2 or len(trace) == 0 or window < 1:
        raise ValueError("LDSS needs a non-empty (epochs x subgroups) trace and window >= 1")
    recent = trace[-window:].mean(axis=0)
    member = np.asarray(member, dtype=float)
    counts = member.sum(axis=1)
    total = member @ recent
    return np.divide(total, counts, out=np.zeros(len(member)), where=counts > 0)


@dataclass(frozen=True)
class SamplingTable:
    weights: np.ndarray
    probabilities: np.ndarray
    window_T: int = 1


def sampling_table(scores: np.ndarray, temperature: float = 0.5, window: int = 1) -> SamplingTable:
    """weight = exp(-LDSS / temperature), normalized. Negative (under-represented)
    scores receive more than average mass."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("LDSS scores must be finite")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    with np.errstate(over="ignore"):
        weights = np.exp(-scores / temperature)
    shifted = np.exp(-(scores - scores.min()) / temperature)
    probs = shifted / shifted.sum()
    return SamplingTable(weights, probs, window)


class UniformSampler:
    """Equal probability for every training row; ignores LDS updates."""

    def __init__(self, n: int):
        self.n = n

    def probabilities(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def update(self, lds_row) -> None:
        pass


@dataclass
class LdssSampler:
    """Row sampling probabilities driven by the running LDS trace.

    ``trace`` starts as the pretraining diagnosis and grows by one row per
    call to :meth:`update`, so the probabilities follow the generator.
    """

    member: np.ndarray
    trace: list = field(default_factory=list)
    window: int = 5
    temperature: float = 0.5

    def update(self, lds_row) -> None:
        self.trace.append(np.asarray(lds_row, dtype=float))

    def table(self) -> SamplingTable:
        scores = ldss(np.vstack(self.trace), self.member, self.window)
        return sampling_table(scores, self.temperature, self.window)

    def probabilities(self) -> np.ndarray:
        return self.table().probabilities


@dataclass
class AuditReport:
    rows: list
    verdict: bool
    delta: float
    band_proportions: dict

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "delta": self.delta,
            "subgroups": self.rows,
            "band_proportions": self.band_proportions,
        }


def audit_dp_dgp(real: Dataset, synth, subgroups: Sequence[SubgroupSpec], delta: float = DELTA) -> AuditReport:
    """Density-preservation audit: every auditable sub-group needs |LDS| < delta."""
    xr, yr = rows_of(real, real)
    xs, ys = rows_of(synth, real)
    if len(xr) == 0 or len(xs) == 0:
        raise ValueError("audit needs non-empty real and synthetic samples")
    mr = membership(xr, yr, real, subgroups)
    ms = membership(xs, ys, real, subgroups)
    rows, verdict = [], True
    bands = {"missing": 0, "under": 0, "adequate": 0, "over": 0}
    for j, group in enumerate(subgroups):
        pr, ps = float(mr[:, j].mean()), float(ms[:, j].mean())
        if mr[:, j].sum() == 0:
            rows.append({"id": group.id, "label": group.label, "p_real": pr, "p_synth": ps,
                         "lds": None, "band": None, "auditable": False})
            continue
        value = lds(ps, pr)
        band = classify_band(value).band
        bands[band] += 1
        verdict &= abs(value) < delta
        rows.append({"id": group.id, "label": group.label, "p_real": pr, "p_synth": ps,
                     "lds": value, "band": band, "auditable": True})
    n_aud = sum(bands.values())
    props = {k: (v / n_aud if n_aud else 0.0) for k, v in bands.items()}
    return AuditReport(rows, bool(verdict), delta, props)
