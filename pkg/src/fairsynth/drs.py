"""Discriminator rejection sampling with the frozen pretraining discriminator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .triple_gan import EPS_RATIO, GeneratedBatch, ModelBundle, discriminator_density_ratio, generate, substream

log = logging.getLogger(__name__)


class DRSAbort(RuntimeError):
    def __init__(self, accepted: int, attempts: int, n_target: int):
        rate = accepted / attempts if attempts else 0.0
        super().__init__(f"rejection sampling gave up after {attempts} candidates: "
                         f"{accepted}/{n_target} accepted (acceptance rate {rate:.4g})")
        self.accepted = accepted
        self.attempts = attempts
        self.acceptance_rate = rate


@dataclass(frozen=True)
class DrsConfig:
    l_constant_percentile: float = 0.999
    burn_in: int = 10000
    gamma_shift: float = 0.0
    max_attempts_factor: int = 50
    chunk: int = 4096

    def __post_init__(self):
        if not 0.0 < self.l_constant_percentile <= 1.0:
            raise ValueError("l_constant_percentile must lie in (0, 1]")
        if self.burn_in < 100:
            raise ValueError("burn_in must be >= 100")
        if self.max_attempts_factor < 1:
            raise ValueError("max_attempts_factor must be >= 1")


def l_from_ratios(ratios, percentile: float, ceiling: float = 1 / EPS_RATIO) -> float:
    ratios = np.asarray(ratios, dtype=float)
    if len(ratios) == 0:
        raise ValueError("no pilot ratios")
    if np.all(ratios >= ceiling):
        log.warning("every pilot density ratio sits at the clamp ceiling; using L = %g", ceiling)
        return float(ceiling)
    return float(np.quantile(ratios, percentile))


def estimate_l(bundle: ModelBundle, cfg: DrsConfig, seed: int, ratio_fn: Optional[Callable] = None) -> float:
    """High quantile of density ratios over ``burn_in`` pilot generations."""
    pilot = generate(bundle, cfg.burn_in, substream(seed, "drs:pilot"))
    ratio_fn = ratio_fn or (lambda b: discriminator_density_ratio(bundle, b.x_prime, b.y_prime))
    return l_from_ratios(ratio_fn(pilot), cfg.l_constant_percentile)


def acceptance_log_prob(ratios, l_const: float, gamma_shift: float) -> np.ndarray:
    """log min(1, ratio / (L e^gamma)), evaluated in log space."""
    if not l_const > 0:
        raise ValueError("L must be positive")
    with np.errstate(divide="ignore"):
        lr = np.log(np.asarray(ratios, dtype=float))
    return np.minimum(0.0, lr - math.log(l_const) - gamma_shift)


def rejection_sample(propose: Callable, ratio_fn: Callable, n_target: int, l_const: float,
                     gamma_shift: float, max_attempts: int, seed: int, chunk: int = 4096):
    """Generic accept/reject loop.

    ``propose(k, start)`` returns ``k`` candidates (any row-indexable array)
    for ordinals ``start..start+k-1``; ``ratio_fn(cands)`` scores them. The
    uniform for candidate ``i`` is the ``i``-th draw of one seeded stream, so
    decisions depend only on the candidate ordinal.

    Returns (list of accepted candidate chunks, attempts).
    """
    if n_target <= 0:
        raise ValueError("n_target must be positive")
    rng = np.random.default_rng(seed)
    accepted, n_acc, attempts = [], 0, 0
    while n_acc < n_target:
        if attempts >= max_attempts:
            raise DRSAbort(n_acc, attempts, n_target)
        k = min(chunk, max_attempts - attempts)
        cands = propose(k, attempts)
        log_u = np.log(rng.random(k))
        keep = np.flatnonzero(log_u < acceptance_log_prob(ratio_fn(cands), l_const, gamma_shift))
        keep = keep[: n_target - n_acc]
        if len(keep):
            accepted.append(cands[keep])
            n_acc += len(keep)
        attempts += k
    return accepted, attempts


def drs_filter(bundle: ModelBundle, n_target: int, cfg: DrsConfig, seed: int,
               l_const: Optional[float] = None, ratio_fn: Optional[Callable] = None) -> GeneratedBatch:
    """Draw exactly ``n_target`` accepted rows from the current generator.

    Ratios come from the frozen pretraining discriminator unless ``ratio_fn``
    (taking an (x, y) pair of arrays) is given.
    """
    if ratio_fn is None:
        ratio_fn = lambda x, y: discriminator_density_ratio(bundle, x, y)
    if l_const is None:
        l_const = estimate_l(bundle, cfg, seed, lambda b: ratio_fn(b.x_prime, b.y_prime))
    width = bundle.feature_width

    def propose(k, start):
        b = generate(bundle, k, substream(seed, f"drs:cand{start}"))
        return np.concatenate([b.x_prime, b.y_prime], axis=1)

    def score(rows):
        return ratio_fn(rows[:, :width], rows[:, width:])

    chunks, attempts = rejection_sample(propose, score, n_target, l_const, cfg.gamma_shift,
                                        n_target * cfg.max_attempts_factor, substream(seed, "drs:accept"), cfg.chunk)
    rows = np.concatenate(chunks)
    x, y = rows[:, :width], rows[:, width:]
    rate = n_target / attempts
    log.info("DRS: L=%.4g, acceptance rate %.4f over %d candidates", l_const, rate, attempts)
    return GeneratedBatch(x, y, x[:, bundle.sensitive_columns()], "drs_filtered", seed, bundle.epochs_done, rate)
