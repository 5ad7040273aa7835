"""Bias-transform fine-tuning: MI penalty on the generator plus re-weighted batches."""

from __future__ import annotations

import copy
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .mine import MineConfig, MinePenalty, loss_final_generator
from .representation import SubgroupSpec
from .triple_gan import GcdLosses, Monitor, ModelBundle, TrainingConfig, adversarial_epochs, substream


def loss_final(losses: GcdLosses, mi, alpha: float) -> GcdLosses:
    """Add ``alpha * mi`` to the generator loss only."""
    return replace(losses, generator=loss_final_generator(losses.generator, mi, alpha))


def w_s_columns(bundle: ModelBundle):
    sens = set(bundle.sensitive_columns().tolist())
    w_cols = [i for i in range(bundle.feature_width) if i not in sens]
    return np.array(w_cols, dtype=int), np.array(sorted(sens), dtype=int)


def train_stage2(data: Dataset, bundle: ModelBundle, mine_cfg: MineConfig, sampler,
                 cfg: Optional[TrainingConfig] = None, monitor: Sequence[SubgroupSpec] = (),
                 n_eval: Optional[int] = None) -> ModelBundle:
    """Fine-tune a pretrained bundle with the MI penalty and the given row sampler.

    The frozen discriminator is carried over untouched. The statistic network
    is trained on every generated batch before the generator step, even when
    the penalty weight is zero, so random streams line up across weights.
    """
    if bundle.discriminator_frozen is None:
        raise ValueError("bundle has not completed pretraining")
    cfg = cfg or bundle.cfg
    probs = sampler.probabilities()
    if len(probs) != len(data):
        raise ValueError(f"sampler covers {len(probs)} rows, dataset has {len(data)}")
    if abs(float(probs.sum()) - 1.0) > 1e-8:
        raise ValueError(f"sampler probabilities sum to {probs.sum():.12f}, not 1")
    out = bundle.clone()
    frozen = out.discriminator_frozen
    out.discriminator_frozen = None  # keep it out of harm's way during training
    w_cols, s_cols = w_s_columns(out)
    penalty = MinePenalty(mine_cfg, w_cols, s_cols, out.n_classes, substream(cfg.seed, "mine"))
    mon = Monitor(data, monitor, substream(cfg.seed, "transform"), n_eval) if monitor else None
    adversarial_epochs(out, data, cfg, cfg.epochs, "transform", sampler=sampler, monitor=mon, penalty=penalty)
    out.discriminator_frozen = frozen
    out.statistic = penalty.net
    out.mine_state = {"dims": (len(w_cols) + out.n_classes, len(s_cols)), "alpha": mine_cfg.alpha_fairness}
    out.stage = "transformed"
    return out


def generated_w_s(bundle: ModelBundle, batch):
    """(W, S) arrays of a generated batch, in the same layout the penalty uses."""
    w_cols, s_cols = w_s_columns(bundle)
    w = np.concatenate([batch.x_prime[:, w_cols], batch.y_prime], axis=1)
    return w, batch.x_prime[:, s_cols]
