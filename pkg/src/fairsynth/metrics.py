"""Downstream utility, fairness gaps, leakage and distribution-quality metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import jensenshannon
from scipy.stats import rankdata
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, average_precision_score, f1_score, precision_score, recall_score
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import OneHotEncoder

from .data import Dataset, column_codes, discretize
from .representation import rows_of

KINDS = ("linear_classifier", "tree_ensemble")


@dataclass(frozen=True)
class DownstreamModelSpec:
    kind: str = "linear_classifier"
    regularization: float = 1.0
    n_trees: int = 100
    max_depth: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown downstream model kind {self.kind!r}")


class Predictor:
    def __init__(self, model):
        self.model = model

    def predict(self, x) -> np.ndarray:
        return self.model.predict(x)

    def scores(self, x) -> np.ndarray:
        return self.model.predict_proba(x)[:, 1]


def train_downstream(x, y, spec: DownstreamModelSpec = DownstreamModelSpec()) -> Predictor:
    x, y = np.asarray(x, dtype=float), np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty training set")
    if len(np.unique(y)) < 2:
        raise ValueError("training set contains a single class")
    if spec.kind == "linear_classifier":
        model = LogisticRegression(C=spec.regularization, max_iter=2000, random_state=spec.seed)
    else:
        model = RandomForestClassifier(n_estimators=spec.n_trees, max_depth=spec.max_depth,
                                       bootstrap=True, random_state=spec.seed, n_jobs=1)
    return Predictor(model.fit(x, y))


def _group_mask(sensitive, group):
    mask = np.asarray(sensitive) == group
    if not mask.any():
        raise ValueError(f"sensitive group {group!r} is empty")
    return mask


def parity_gap(predictions, sensitive, group_a, group_b) -> float:
    """Positive-prediction rate of group a minus that of group b."""
    pred = np.asarray(predictions)
    a, b = _group_mask(sensitive, group_a), _group_mask(sensitive, group_b)
    return float((pred[a] == 1).mean() - (pred[b] == 1).mean())


def auroc(scores, labels) -> Optional[float]:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties get half credit)."""
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc_trapezoid(scores, labels) -> float:
    """Reference AUROC by trapezoidal integration of the empirical ROC curve."""
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels)
    thresholds = np.unique(scores)[::-1]
    pos, neg = (labels == 1).sum(), (labels != 1).sum()
    tpr = [0.0] + [((scores >= t) & (labels == 1)).sum() / pos for t in thresholds]
    fpr = [0.0] + [((scores >= t) & (labels != 1)).sum() / neg for t in thresholds]
    return float(np.trapezoid(tpr, fpr))


def auroc_gap(scores, labels, sensitive, group_a, group_b) -> Optional[float]:
    """AUROC(group a) - AUROC(group b); ``None`` when a group lacks one of the classes."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    a, b = _group_mask(sensitive, group_a), _group_mask(sensitive, group_b)
    ra, rb = auroc(scores[a], labels[a]), auroc(scores[b], labels[b])
    if ra is None or rb is None:
        return None
    return ra - rb


def _onehot(*cols):
    mat = np.column_stack([np.asarray(c).astype(str) for c in cols])
    return OneHotEncoder(handle_unknown="ignore").fit_transform(mat)


def leakage(values, sensitive, context=None, heldout_fraction: float = 0.3, seed: int = 0) -> float:
    """Held-out accuracy of a linear attacker predicting the sensitive value.

    ``values`` are labels (data leakage) or downstream predictions (model
    leakage); ``context`` optionally adds extra discrete inputs.
    """
    sensitive = np.asarray(sensitive)
    if len(np.unique(sensitive)) < 2:
        raise ValueError("leakage needs at least two distinct sensitive values")
    cols = [values] if context is None else [values, context]
    feats = _onehot(*cols)
    idx = np.arange(len(sensitive))
    tr, te = train_test_split(idx, test_size=heldout_fraction, random_state=seed, stratify=sensitive)
    attacker = LogisticRegression(max_iter=1000, random_state=seed).fit(feats[tr], sensitive[tr])
    return float(accuracy_score(sensitive[te], attacker.predict(feats[te])))


def plug_in_mi(a, b) -> float:
    """Empirical mutual information (nats) of two discrete columns."""
    a, b = np.asarray(a), np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    p = table / table.sum()
    outer = p.sum(axis=1, keepdims=True) * p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / outer[nz]))))


def parity_mi_oracle(labels, sensitive, tolerance: float = 0.01):
    """(parity holds, plug-in MI). Parity: max difference of positive rates across groups < tolerance."""
    labels, sensitive = np.asarray(labels), np.asarray(sensitive)
    rates = [float((labels[sensitive == g] == 1).mean()) for g in np.unique(sensitive)]
    return bool(max(rates) - min(rates) < tolerance), plug_in_mi(labels, sensitive)


def _marginals(d: Dataset, x: np.ndarray, y: np.ndarray, bins: int, edges: dict) -> dict:
    out = {}
    for span in d.spans:
        if span.kind == "continuous":
            out[span.name] = np.histogram(x[:, span.start], bins=edges[span.name])[0]
        elif span.kind == "binary":
            out[span.name] = np.bincount(x[:, span.start].astype(int), minlength=2)
        else:
            out[span.name] = x[:, span.start:span.stop].sum(axis=0)
    out[d.label.name] = np.bincount(y[y >= 0], minlength=d.n_classes)
    return out


def jsd_marginal(real: Dataset, synth, bins: int = 32, per_column: bool = False):
    """Mean base-e Jensen-Shannon divergence of per-column marginals.

    Continuous columns use ``bins`` equal-width bins over the union support.
    """
    xr, yr = rows_of(real, real)
    xs, ys = rows_of(synth, real)
    edges = {}
    for span in real.spans:
        if span.kind == "continuous":
            lo = min(xr[:, span.start].min(), xs[:, span.start].min())
            hi = max(xr[:, span.start].max(), xs[:, span.start].max())
            edges[span.name] = np.linspace(lo, hi if hi > lo else lo + 1, bins + 1)
    mr, ms = _marginals(real, xr, yr, bins, edges), _marginals(real, xs, ys, bins, edges)
    cols = {k: float(jensenshannon(mr[k], ms[k]) ** 2) for k in mr}
    return cols if per_column else float(np.mean(list(cols.values())))


def discriminative_score(real_rows, synth_rows, seed: int = 0, heldout_fraction: float = 0.3):
    """(|held-out accuracy - 0.5|, raw accuracy) of a real-vs-synthetic logistic regression."""
    real_rows, synth_rows = np.asarray(real_rows, dtype=float), np.asarray(synth_rows, dtype=float)
    if len(real_rows) != len(synth_rows):
        raise ValueError("discriminative score needs equal-size real and synthetic samples")
    x = np.vstack([real_rows, synth_rows])
    t = np.r_[np.ones(len(real_rows)), np.zeros(len(synth_rows))]
    xtr, xte, ttr, tte = train_test_split(x, t, test_size=heldout_fraction, random_state=seed, stratify=t)
    acc = float(accuracy_score(tte, LogisticRegression(max_iter=2000, random_state=seed).fit(xtr, ttr).predict(xte)))
    return abs(acc - 0.5), acc


def utility(y_true, pred, scores) -> dict:
    y_true, pred = np.asarray(y_true), np.asarray(pred)
    return {
        "accuracy": float(accuracy_score(y_true, pred)),
        "f1": float(f1_score(y_true, pred, zero_division=0)),
        "auroc": auroc(scores, y_true),
        "auprc": float(average_precision_score(y_true, scores)),
        "precision": float(precision_score(y_true, pred, zero_division=0)),
        "recall": float(recall_score(y_true, pred, zero_division=0)),
        "precision_weighted": float(precision_score(y_true, pred, average="weighted", zero_division=0)),
        "recall_weighted": float(recall_score(y_true, pred, average="weighted", zero_division=0)),
    }


def confusion_by_group(y_true, pred, sensitive) -> dict:
    out = {}
    for g in np.unique(sensitive):
        m = np.asarray(sensitive) == g
        t, p = np.asarray(y_true)[m], np.asarray(pred)[m]
        out[str(g)] = {"tp": int(((t == 1) & (p == 1)).sum()), "fp": int(((t != 1) & (p == 1)).sum()),
                       "tn": int(((t != 1) & (p != 1)).sum()), "fn": int(((t == 1) & (p != 1)).sum())}
    return out


@dataclass
class FairnessReport:
    tasks: dict
    parity_gap: float
    auroc_gap: Optional[float]
    data_leakage: float
    model_leakage: float
    delta_amplification: float
    jsd: Optional[float] = None
    discriminative_score: Optional[float] = None
    discriminative_accuracy: Optional[float] = None
    subgroup_confusion: dict = field(default_factory=dict)

    def __post_init__(self):
        if not -1.0 <= self.parity_gap <= 1.0:
            raise ValueError("parity gap outside [-1, 1]")
        for v in (self.data_leakage, self.model_leakage):
            if not 0.0 <= v <= 1.0:
                raise ValueError("leakage outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def model_inputs(obj, real: Dataset) -> tuple:
    """(features, labels, sensitive codes) with discrete blocks snapped to one-hot."""
    x, y = rows_of(obj, real)
    return x, y, column_codes(x, real.spans)


def evaluate(train_obj, test: Dataset, real: Dataset, groups=(1, 0), models=KINDS, primary: str = "linear_classifier",
             seed: int = 0, quality: bool = True) -> FairnessReport:
    """Train downstream models on ``train_obj`` (synthetic batch or Dataset),
    score them on the real ``test`` split, and measure leakage on the training data.
    ``real`` is the real training split used as reference for quality metrics."""
    xtr, ytr, str_ = model_inputs(train_obj, real)
    keep = ytr >= 0
    xtr, ytr, str_ = xtr[keep], ytr[keep], str_[keep]
    xte, yte, ste = model_inputs(test, real)
    a, b = groups
    tasks, primary_out = {}, None
    for kind in models:
        model = train_downstream(xtr, ytr, DownstreamModelSpec(kind=kind, seed=seed))
        pred, scores = model.predict(xte), model.scores(xte)
        entry = utility(yte, pred, scores)
        entry["parity_gap"] = parity_gap(pred, ste, a, b)
        entry["auroc_gap"] = auroc_gap(scores, yte, ste, a, b)
        entry["confusion"] = confusion_by_group(yte, pred, ste)
        tasks[kind] = entry
        if kind == primary:
            primary_out = (model, entry)
    model, entry = primary_out
    data_leak = leakage(ytr, str_, seed=seed)
    model_leak = leakage(model.predict(xtr), str_, seed=seed)
    jsd = disc = disc_acc = None
    if quality:
        jsd = jsd_marginal(real, train_obj)
        rng = np.random.default_rng(seed)
        n = min(len(real), len(xtr), 20000)
        rr = real.rows[rng.choice(len(real), n, replace=False)]
        sr = np.hstack([xtr, ytr[:, None] if real.label.kind == "binary" else np.eye(real.n_classes)[ytr]])
        sr = sr[rng.choice(len(sr), n, replace=False)]
        rr = np.hstack([discretize(rr[:, :real.feature_width], real.spans), rr[:, real.feature_width:]])
        disc, disc_acc = discriminative_score(rr, sr, seed)
    return FairnessReport(tasks, entry["parity_gap"], entry["auroc_gap"], data_leak, model_leak,
                          model_leak - data_leak, jsd, disc, disc_acc, entry["confusion"])
