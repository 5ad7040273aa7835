"""Donsker-Varadhan mutual information estimation with a statistic network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .nets import NetworkSpec, StatisticNet


@dataclass(frozen=True)
class MineConfig:
    statistic_net: NetworkSpec = field(default_factory=lambda: NetworkSpec((8, 8, 1), "relu", "linear"))
    inner_steps_per_batch: int = 5
    ema_decay: float = 0.99
    alpha_fairness: float = 0.5
    learning_rate: float = 1e-3
    # standalone estimation only
    estimate_steps: int = 3000
    estimate_batch: int = 512
    heldout_fraction: float = 0.2
    s_source: str = "generated"

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if not math.isfinite(self.alpha_fairness) or self.alpha_fairness < 0:
            raise ValueError("alpha_fairness must be finite and >= 0")
        if self.inner_steps_per_batch < 0:
            raise ValueError("inner_steps_per_batch must be >= 0")
        if self.s_source not in ("generated", "real"):
            raise ValueError(f"unknown s_source {self.s_source!r}")
        if isinstance(self.statistic_net, dict):
            object.__setattr__(self, "statistic_net", NetworkSpec(**self.statistic_net))

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["statistic_net"] = self.statistic_net.to_dict()
        return out


@dataclass(frozen=True)
class MiEstimate:
    value_nats: float
    n_samples: int
    converged: bool

    @property
    def reported(self) -> float:
        return max(self.value_nats, 0.0)


def dv_bound(t_joint: torch.Tensor, t_marginal: torch.Tensor) -> torch.Tensor:
    """E_joint[T] - log E_marginal[exp T], computed stably."""
    n = t_marginal.shape[0]
    return t_joint.mean() - (torch.logsumexp(t_marginal, dim=0) - math.log(n))


class DvTrainer:
    """Gradient ascent on the DV bound with a moving-average denominator.

    The surrogate ``mean T_joint - mean exp(T_marg) / ema`` has the gradient of
    the bound with the batch partition estimate replaced by its moving average,
    which removes most of the mini-batch bias of the plain bound's gradient.
    """

    def __init__(self, net: torch.nn.Module, lr: float, ema_decay: float):
        self.net = net
        self.opt = torch.optim.Adam(net.parameters(), lr=lr)
        self.decay = ema_decay
        self.log_ema = None

    def step(self, w, s, perm):
        t_joint = self.net(w, s)
        t_marg = self.net(w, s[perm])
        lse = torch.logsumexp(t_marg, dim=0) - math.log(len(t_marg))
        cur = lse.detach()
        if self.log_ema is None:
            self.log_ema = cur
        else:
            self.log_ema = torch.logaddexp(self.log_ema + math.log(self.decay), cur + math.log(1 - self.decay))
        surrogate = t_joint.mean() - torch.exp(lse - self.log_ema)
        self.opt.zero_grad()
        (-surrogate).backward()
        self.opt.step()
        return float(t_joint.mean().detach() - cur)


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(len(a), -1)


def _standardize(a: np.ndarray) -> np.ndarray:
    """Z-score continuous columns; 0/1 indicator columns are left alone so a
    rare category does not turn into a huge input value."""
    sd = a.std(axis=0)
    binary = np.all((a == 0) | (a == 1), axis=0)
    scale = np.where(binary | (sd == 0), 1.0, sd)
    return (a - np.where(binary, 0.0, a.mean(axis=0))) / scale


def heldout_bound(net, w: torch.Tensor, s: torch.Tensor, rng: torch.Generator, n_perm: int = 20) -> float:
    """DV bound on held-out pairs, with the marginal term averaged over several shuffles."""
    with torch.no_grad():
        t_joint = net(w, s)
        t_marg = torch.cat([net(w, s[torch.randperm(len(s), generator=rng)]) for _ in range(n_perm)])
        return float(dv_bound(t_joint, t_marg))


def mine_estimate(w, s, cfg: MineConfig = MineConfig(), seed: int = 0) -> MiEstimate:
    """Estimate I(W; S) in nats from paired samples.

    A statistic network is fitted on a training split and the bound is read
    off on the held-out split, so the estimate does not ride on overfitting.
    Marginal pairs come from shuffling S within the batch.
    """
    w, s = _as_2d(w), _as_2d(s)
    if len(w) != len(s):
        raise ValueError("W and S must have the same number of rows")
    n = len(w)
    if n < 2:
        raise ValueError("MI estimation needs at least 2 samples")
    w_const = np.all(w == w[0], axis=0).all()
    s_const = np.all(s == s[0], axis=0).all()
    if w_const or s_const:
        return MiEstimate(0.0, n, True)
    w, s = _standardize(w), _standardize(s)
    gen = torch.Generator().manual_seed(seed)
    order = torch.randperm(n, generator=gen).numpy()
    n_hold = max(1, int(round(cfg.heldout_fraction * n))) if n >= 10 else 0
    hold, train = order[:n_hold], order[n_hold:]
    if n_hold == 0:
        hold = train
    wt = torch.as_tensor(w[train], dtype=torch.float32)
    st = torch.as_tensor(s[train], dtype=torch.float32)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = StatisticNet(w.shape[1], s.shape[1], cfg.statistic_net)
    trainer = DvTrainer(net, cfg.learning_rate, cfg.ema_decay)
    batch = min(cfg.estimate_batch, len(train))
    history = []
    for _ in range(cfg.estimate_steps):
        idx = torch.randint(len(train), (batch,), generator=gen)
        perm = torch.randperm(batch, generator=gen)
        history.append(trainer.step(wt[idx], st[idx], perm))
    value = heldout_bound(net, torch.as_tensor(w[hold], dtype=torch.float32),
                          torch.as_tensor(s[hold], dtype=torch.float32), gen)
    tail = np.asarray(history[-200:]) if history else np.zeros(1)
    half = len(tail) // 2
    converged = bool(half == 0 or abs(tail[half:].mean() - tail[:half].mean()) < 0.02)
    return MiEstimate(value, n, converged)


class MinePenalty:
    """Running MI estimator between generated W and S used as a generator penalty.

    ``w_cols``/``s_cols`` pick non-sensitive and sensitive columns of the
    generated rows; W also carries the conditioning labels.
    """

    def __init__(self, cfg: MineConfig, w_cols, s_cols, n_classes: int, seed: int, net=None):
        self.cfg = cfg
        self.w_cols = torch.as_tensor(np.asarray(w_cols), dtype=torch.long)
        self.s_cols = torch.as_tensor(np.asarray(s_cols), dtype=torch.long)
        if len(self.s_cols) == 0:
            raise ValueError("MI penalty needs at least one sensitive column")
        if net is None:
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(seed)
                net = StatisticNet(len(self.w_cols) + n_classes, len(self.s_cols), cfg.statistic_net)
        self.net = net
        self.trainer = DvTrainer(net, cfg.learning_rate, cfg.ema_decay)
        self.rng = torch.Generator().manual_seed(seed)
        self.real_s = None

    def bind_real(self, x_real) -> None:
        """Pair generated W with the batch's real sensitive values instead."""
        if self.cfg.s_source == "real":
            self.real_s = x_real[:, self.s_cols]

    def split(self, x, y_onehot):
        w = torch.cat([x[:, self.w_cols], y_onehot], dim=1)
        s = x[:, self.s_cols] if self.real_s is None else self.real_s
        return w, s

    def update(self, x, y_onehot) -> None:
        w, s = self.split(x, y_onehot)
        for _ in range(self.cfg.inner_steps_per_batch):
            self.trainer.step(w, s, torch.randperm(len(w), generator=self.rng))

    def loss(self, x, y_onehot) -> torch.Tensor:
        w, s = self.split(x, y_onehot)
        perm = torch.randperm(len(w), generator=self.rng)
        return dv_bound(self.net(w, s), self.net(w, s[perm]))

    def combine(self, g_loss, mi):
        return loss_final_generator(g_loss, mi, self.cfg.alpha_fairness)


def loss_final_generator(g_loss, mi, alpha: float):
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return g_loss
    return g_loss + alpha * mi
