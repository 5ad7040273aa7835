"""Tabular datasets: schema, encoding, label masking and a biased toy synthesizer.

Encoding rules:

* continuous columns are min-max scaled to [0, 1]; the (lo, hi) range is kept
  on the dataset so generated rows can be mapped back;
* binary columns take one column holding 0/1;
* categorical columns are one-hot encoded in declared category order.

The label column is stored apart from the features (``Dataset.y``) because the
generator is conditioned on it and the classifier predicts it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

KINDS = ("continuous", "categorical", "binary")


class SchemaError(ValueError):
    """Raised when a table does not agree with its declared schema."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple = ()
    is_sensitive: bool = False
    is_label: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == "categorical":
            if not self.categories:
                raise SchemaError(f"column {self.name!r}: categorical column needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
        elif self.kind == "binary":
            if not self.categories:
                object.__setattr__(self, "categories", ("0", "1"))
            elif len(self.categories) != 2 or self.categories[0] == self.categories[1]:
                raise SchemaError(f"column {self.name!r}: binary column takes two distinct categories")
        elif self.categories:
            raise SchemaError(f"column {self.name!r}: continuous column takes no categories")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "categories": list(self.categories),
            "is_sensitive": self.is_sensitive,
            "is_label": self.is_label,
        }


@dataclass(frozen=True)
class Span:
    """Position of one feature column inside the encoded feature matrix."""

    name: str
    kind: str
    start: int
    stop: int
    categories: tuple
    is_sensitive: bool


def validate_schema(schema: Sequence[ColumnSchema]) -> tuple:
    schema = tuple(schema)
    names = [c.name for c in schema]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise SchemaError(f"duplicate column names: {sorted(dupes)}")
    labels = [c for c in schema if c.is_label]
    if len(labels) != 1:
        raise SchemaError(f"exactly one label column required, found {len(labels)}")
    if labels[0].kind == "continuous":
        raise SchemaError(f"label column {labels[0].name!r} must be binary or categorical")
    if labels[0].is_sensitive:
        raise SchemaError("the label column cannot also be sensitive")
    return schema


def feature_spans(schema: Sequence[ColumnSchema]) -> list:
    spans, pos = [], 0
    for col in schema:
        if col.is_label:
            continue
        spans.append(Span(col.name, col.kind, pos, pos + col.width, col.categories, col.is_sensitive))
        pos += col.width
    return spans


def label_column(schema: Sequence[ColumnSchema]) -> ColumnSchema:
    return next(c for c in schema if c.is_label)


def schema_hash(schema: Sequence[ColumnSchema]) -> str:
    payload = json.dumps([c.to_dict() for c in schema], sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class Dataset:
    """Encoded table.

    ``x`` holds encoded features (label excluded), ``y`` the label class index
    (-1 where the value is unknown), ``label_mask`` which labels the learner may
    see. Masked labels keep their true value in ``y`` for evaluation only.
    """

    schema: tuple
    x: np.ndarray
    y: np.ndarray
    label_mask: np.ndarray
    split: str = "train"
    scaling: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if not (len(self.x) == len(self.y) == len(self.label_mask)):
            raise ValueError("x, y and label_mask must have the same number of rows")
        for arr in (self.x, self.y, self.label_mask):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.y)

    @property
    def spans(self) -> list:
        return feature_spans(self.schema)

    @property
    def label(self) -> ColumnSchema:
        return label_column(self.schema)

    @property
    def n_classes(self) -> int:
        return len(self.label.categories)

    @property
    def feature_width(self) -> int:
        return self.x.shape[1]

    @property
    def rows(self) -> np.ndarray:
        """Features with the label appended in its encoded form."""
        return np.hstack([self.x, encode_labels(self.y, self.label)])

    def sensitive_columns(self) -> np.ndarray:
        """Indices of encoded feature columns belonging to sensitive attributes."""
        return np.array(
            [i for s in self.spans if s.is_sensitive for i in range(s.start, s.stop)], dtype=int
        )

    def sensitive_codes(self, name: Optional[str] = None) -> np.ndarray:
        return column_codes(self.x, self.spans, name)

    def label_prior(self) -> np.ndarray:
        observed = self.y[self.label_mask]
        counts = np.bincount(observed, minlength=self.n_classes).astype(float)
        return counts / counts.sum()

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, x=self.x[idx].copy(), y=self.y[idx].copy(), label_mask=self.label_mask[idx].copy())


def column_codes(x: np.ndarray, spans: Sequence[Span], name: Optional[str] = None) -> np.ndarray:
    """Integer codes of one discrete column (default: first sensitive column)."""
    if name is None:
        span = next((s for s in spans if s.is_sensitive), None)
        if span is None:
            raise SchemaError("dataset has no sensitive column")
    else:
        span = next((s for s in spans if s.name == name), None)
        if span is None:
            raise SchemaError(f"no feature column named {name!r}")
    block = x[:, span.start:span.stop]
    if span.kind == "binary":
        return (block[:, 0] >= 0.5).astype(int)
    if span.kind == "categorical":
        return block.argmax(axis=1)
    raise SchemaError(f"column {span.name!r} is continuous")


def encode_labels(y: np.ndarray, label: ColumnSchema) -> np.ndarray:
    y = np.asarray(y)
    if label.kind == "binary":
        return np.where(y < 0, np.nan, y).astype(float)[:, None]
    out = np.zeros((len(y), len(label.categories)))
    known = y >= 0
    out[np.flatnonzero(known), y[known]] = 1.0
    out[~known] = np.nan
    return out


def from_frame(frame: pd.DataFrame, schema: Sequence[ColumnSchema], split: str = "train",
               scaling: Optional[dict] = None) -> Dataset:
    """Encode a table of strings (or numbers) according to ``schema``."""
    schema = validate_schema(schema)
    header = [str(c) for c in frame.columns]
    for col in schema:
        if col.name not in header:
            raise SchemaError(f"column {col.name!r} declared in schema but missing from table")
    for name in header:
        if name not in {c.name for c in schema}:
            raise SchemaError(f"column {name!r} present in table but not declared in schema")

    scaling = dict(scaling or {})
    blocks, y, mask = [], None, None
    for col in schema:
        cells = frame[col.name].astype(str).str.strip().to_numpy()
        if col.is_label:
            mask = cells != ""
            y = np.full(len(cells), -1, dtype=int)
            lookup = {c: i for i, c in enumerate(col.categories)}
            for i in np.flatnonzero(mask):
                if cells[i] not in lookup:
                    raise SchemaError(f"row {i}: label {cells[i]!r} not in categories of {col.name!r}")
                y[i] = lookup[cells[i]]
            continue
        if col.kind == "continuous":
            values = np.empty(len(cells))
            for i, cell in enumerate(cells):
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise SchemaError(f"row {i}: cannot parse {cell!r} in continuous column {col.name!r}") from None
                if not math.isfinite(values[i]):
                    raise SchemaError(f"row {i}: non-finite value in column {col.name!r}")
            if col.name not in scaling:
                lo, hi = float(values.min()), float(values.max())
                scaling[col.name] = (lo, hi if hi > lo else lo + 1.0)
            lo, hi = scaling[col.name]
            blocks.append(np.clip((values - lo) / (hi - lo), 0.0, 1.0)[:, None])
        else:
            lookup = {c: i for i, c in enumerate(col.categories)}
            codes = np.empty(len(cells), dtype=int)
            for i, cell in enumerate(cells):
                if cell not in lookup:
                    raise SchemaError(f"row {i}: value {cell!r} not in categories of {col.name!r}")
                codes[i] = lookup[cell]
            if col.kind == "binary":
                blocks.append(codes.astype(float)[:, None])
            else:
                blocks.append(np.eye(len(col.categories))[codes])
    x = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    return Dataset(schema, x, y, mask, split, scaling)


def load_csv(path, schema: Sequence[ColumnSchema], split: str = "train",
             scaling: Optional[dict] = None) -> Dataset:
    """Read a UTF-8 CSV with a header row. Blank label cells become masked labels."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return from_frame(frame, schema, split, scaling)


def decode(d: Dataset, rows: np.ndarray) -> pd.DataFrame:
    """Map encoded rows back to a readable table.

    ``rows`` is either feature-only (``d.feature_width`` columns) or features
    plus the encoded label. Discrete blocks must already be exact one-hot /
    0-1 values; use :func:`discretize` on relaxed generator output first.
    """
    rows = np.asarray(rows, dtype=float)
    label = d.label
    width = d.feature_width
    if rows.ndim != 2 or rows.shape[1] not in (width, width + label.width):
        raise SchemaError(f"encoded width {rows.shape[-1]} does not match schema (features {width})")
    out = {}
    for span in d.spans:
        block = rows[:, span.start:span.stop]
        out[span.name] = _decode_block(span.name, span.kind, span.categories, block, d.scaling)
    if rows.shape[1] > width:
        block = rows[:, width:]
        out[label.name] = _decode_block(label.name, label.kind, label.categories, block, d.scaling)
    names = [c.name for c in d.schema if c.name in out]
    return pd.DataFrame({n: out[n] for n in names})


def _decode_block(name, kind, categories, block, scaling):
    if kind == "continuous":
        lo, hi = scaling[name]
        return block[:, 0] * (hi - lo) + lo
    if not np.all((block == 0.0) | (block == 1.0)):
        raise SchemaError(f"column {name!r}: values are not discrete 0/1; discretize first")
    if kind == "binary":
        return np.asarray(categories, dtype=object)[block[:, 0].astype(int)]
    sums = block.sum(axis=1)
    bad = np.flatnonzero(sums != 1.0)
    if len(bad):
        raise SchemaError(f"column {name!r}: one-hot group does not sum to 1 in row {bad[0]}")
    return np.asarray(categories, dtype=object)[block.argmax(axis=1)]


def discretize(x: np.ndarray, spans: Sequence[Span]) -> np.ndarray:
    """Argmax each categorical block and threshold binary columns at 0.5."""
    x = np.array(x, dtype=float, copy=True)
    for span in spans:
        block = x[:, span.start:span.stop]
        if span.kind == "binary":
            x[:, span.start] = (block[:, 0] >= 0.5).astype(float)
        elif span.kind == "categorical":
            x[:, span.start:span.stop] = np.eye(span.stop - span.start)[block.argmax(axis=1)]
    return x


def to_frame(d: Dataset) -> pd.DataFrame:
    """Readable table of a dataset; masked labels come out blank."""
    frame = decode(d, d.x)
    label = d.label
    cats = np.asarray(label.categories, dtype=object)
    frame[label.name] = np.where(d.label_mask & (d.y >= 0), cats[np.clip(d.y, 0, None)], "")
    return frame[[c.name for c in d.schema]]


def mask_labels(d: Dataset, fraction: float, seed: int) -> Dataset:
    """Hide ``floor(fraction * n_observed)`` observed labels, chosen by ``seed``."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    observed = np.flatnonzero(d.label_mask)
    k = int(math.floor(fraction * len(observed)))
    if k == 0:
        return d
    rng = np.random.default_rng(seed)
    hidden = rng.choice(observed, size=k, replace=False)
    mask = d.label_mask.copy()
    mask[hidden] = False
    return replace(d, label_mask=mask, x=d.x.copy(), y=d.y.copy())


def split_dataset(d: Dataset, test_fraction: float = 0.15, seed: int = 0) -> tuple:
    """Stratified train/test split on (first sensitive column, label)."""
    from sklearn.model_selection import train_test_split

    try:
        strata = d.sensitive_codes() * (d.n_classes + 1) + (d.y + 1)
    except SchemaError:
        strata = d.y + 1
    idx = np.arange(len(d))
    train_idx, test_idx = train_test_split(idx, test_size=test_fraction, random_state=seed, stratify=strata)
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    return d.subset(train_idx), replace(d.subset(test_idx), split="test")


# ---------------------------------------------------------------------------
# schema / spec config
# ---------------------------------------------------------------------------

def schema_from_config(columns: Sequence[dict]) -> tuple:
    return validate_schema(ColumnSchema(**c) for c in columns)


@dataclass(frozen=True)
class MixtureSpec:
    weights: tuple = (0.5, 0.5)
    means: tuple = ((-1.0, 0.0), (1.0, 0.0))
    spreads: tuple = ((0.5, 1.0), (0.5, 1.0))

    def __post_init__(self):
        k = len(self.weights)
        if k < 2:
            raise ValueError("mixture needs at least two components")
        if len(self.means) != k or len(self.spreads) != k:
            raise ValueError("weights, means and spreads must have one entry per component")
        dims = {len(m) for m in self.means} | {len(s) for s in self.spreads}
        if len(dims) != 1:
            raise ValueError("all components need the same dimension")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("mixture weights must be non-negative with positive sum")
        if any(s <= 0 for row in self.spreads for s in row):
            raise ValueError("spreads must be positive")

    @property
    def dim(self) -> int:
        return len(self.means[0])


@dataclass(frozen=True)
class BiasInjectionSpec:
    """Recipe for a toy population with a known S-Y dependence.

    ``correlation_strength`` is the phi coefficient between the binary
    sensitive column ``s`` and the binary label ``y`` at the given marginals.
    The last mixture component is the designated minority subgroup and
    carries weight ``minority_fraction``.
    """

    n_rows: int = 10_000
    base_distribution: MixtureSpec = field(default_factory=MixtureSpec)
    correlation_strength: float = 0.0
    minority_fraction: float = 0.5
    proxy_agreement: float = 0.5
    label_missing_fraction: float = 0.0
    seed: int = 0
    sensitive_fraction: float = 0.5
    label_rate: float = 0.5
    label_noise: float = 0.5

    def __post_init__(self):
        if self.n_rows < 2:
            raise ValueError("n_rows must be at least 2")
        if not -1.0 <= self.correlation_strength <= 1.0:
            raise ValueError("correlation_strength must lie in [-1, 1]")
        if not 0.0 < self.minority_fraction <= 0.5:
            raise ValueError("minority_fraction must lie in (0, 0.5]")
        if not 0.5 <= self.proxy_agreement <= 1.0:
            raise ValueError("proxy_agreement must lie in [0.5, 1]")
        if not 0.0 <= self.label_missing_fraction < 1.0:
            raise ValueError("label_missing_fraction must lie in [0, 1)")
        for name in ("sensitive_fraction", "label_rate"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")

    @classmethod
    def from_dict(cls, cfg: dict) -> "BiasInjectionSpec":
        cfg = dict(cfg)
        base = cfg.pop("base_distribution", None)
        if isinstance(base, dict):
            base = MixtureSpec(
                weights=tuple(base["weights"]),
                means=tuple(tuple(m) for m in base["means"]),
                spreads=tuple(tuple(s) for s in base["spreads"]),
            )
        if base is not None:
            cfg["base_distribution"] = base
        return cls(**cfg)

    def joint(self) -> np.ndarray:
        """Analytic joint table P(S=s, Y=y), indexed [s, y]."""
        ps, py, phi = self.sensitive_fraction, self.label_rate, self.correlation_strength
        p11 = ps * py + phi * math.sqrt(ps * (1 - ps) * py * (1 - py))
        table = np.array([[1 - ps - py + p11, py - p11], [ps - p11, p11]])
        if np.any(table < -1e-12):
            raise ValueError(
                f"infeasible spec: correlation {phi} with P(S=1)={ps}, P(Y=1)={py} "
                "implies conditional probabilities outside [0, 1]"
            )
        return np.clip(table, 0.0, 1.0)

    def label_rates(self) -> np.ndarray:
        """P(Y=1 | S=s) for s = 0, 1."""
        table = self.joint()
        return table[:, 1] / table.sum(axis=1)


def discrete_mi(table: np.ndarray) -> float:
    """Mutual information (nats) of a joint probability table."""
    table = np.asarray(table, dtype=float)
    table = table / table.sum()
    outer = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True)
    nz = table > 0
    return float(np.sum(table[nz] * np.log(table[nz] / outer[nz])))


def biased_schema(dim: int, n_components: int) -> tuple:
    cols = [ColumnSchema(f"x{j}", "continuous") for j in range(dim)]
    cols.append(ColumnSchema("segment", "categorical", tuple(f"c{k}" for k in range(n_components))))
    cols.append(ColumnSchema("s", "binary", is_sensitive=True))
    cols.append(ColumnSchema("s_proxy", "binary"))
    cols.append(ColumnSchema("y", "binary", is_label=True))
    return tuple(cols)


def synthesize_biased(spec: BiasInjectionSpec) -> Dataset:
    """Sample a toy population whose P(Y | S) is known in closed form.

    Features are drawn from the mixture independently of ``s``. Within each
    sensitive group exactly ``round(P(Y=1|S=s) * n_s)`` rows are labelled
    positive: those with the highest noisy score on ``x0``. The label is
    therefore informative about ``x0`` while its dependence on ``s`` is fixed
    by ``correlation_strength``.
    """
    rates = spec.label_rates()
    table = spec.joint()
    mix = spec.base_distribution
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows

    k = len(mix.weights)
    w = np.asarray(mix.weights[:-1], dtype=float)
    weights = np.append(w / w.sum() * (1 - spec.minority_fraction), spec.minority_fraction)
    comp = rng.choice(k, size=n, p=weights)
    means, spreads = np.asarray(mix.means), np.asarray(mix.spreads)
    feats = means[comp] + spreads[comp] * rng.standard_normal((n, mix.dim))

    s = (rng.random(n) < spec.sensitive_fraction).astype(int)
    score = (feats[:, 0] - feats[:, 0].mean()) / (feats[:, 0].std() + 1e-12)
    score = score + spec.label_noise * rng.standard_normal(n)
    y = np.zeros(n, dtype=int)
    for g in (0, 1):
        members = np.flatnonzero(s == g)
        n_pos = int(round(rates[g] * len(members)))
        if n_pos:
            top = members[np.argsort(-score[members], kind="stable")[:n_pos]]
            y[top] = 1
    agree = rng.random(n) < spec.proxy_agreement
    proxy = np.where(agree, s, 1 - s)

    schema = biased_schema(mix.dim, k)
    frame = pd.DataFrame({f"x{j}": feats[:, j] for j in range(mix.dim)})
    frame["segment"] = [f"c{c}" for c in comp]
    frame["s"] = s.astype(str)
    frame["s_proxy"] = proxy.astype(str)
    frame["y"] = y.astype(str)
    d = from_frame(frame, schema)
    meta = {
        "p_y_given_s": [float(r) for r in rates],
        "joint_sy": table.tolist(),
        "mi_nats": discrete_mi(table),
        "minority_fraction": spec.minority_fraction,
        "minority_category": f"c{k - 1}",
        "proxy_agreement": spec.proxy_agreement,
    }
    d = replace(d, meta=meta, x=d.x.copy(), y=d.y.copy(), label_mask=d.label_mask.copy())
    if spec.label_missing_fraction > 0:
        d = mask_labels(d, spec.label_missing_fraction, spec.seed + 1)
    return d


def load_config(path) -> dict:
    """Read a YAML or JSON config file."""
    import yaml

    text = Path(path).read_text(encoding="utf-8")
    cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: config must be a mapping")
    return cfg
