"""Semi-supervised three-player GAN (classifier, generator, discriminator).

One mini-batch step updates the discriminator, then the generator, then the
classifier. Unlabelled rows get pseudo-labels sampled from the classifier for
the discriminator term. When a batch has no unlabelled rows the classifier
term drops out and the objective is the ordinary conditional GAN game.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import Dataset, Span, discretize, schema_hash
from .nets import Classifier, Generator, NetworkSpec, PairDiscriminator, default_specs
from .representation import SubgroupSpec, lds_records, membership

log = logging.getLogger(__name__)

EPS_RATIO = 1e-3
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    def __init__(self, stage: str, epoch: int, what: str):
        super().__init__(f"{stage}: non-finite {what} at epoch {epoch}")
        self.stage = stage
        self.epoch = epoch


def substream(seed: int, name: str) -> int:
    """Independent 63-bit seed for a named random stream."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def torch_rng(seed: int, name: str) -> torch.Generator:
    return torch.Generator().manual_seed(substream(seed, name))


@dataclass(frozen=True)
class TrainingConfig:
    lambda_balance: float = 0.5
    batch_size: int = 1024
    learning_rate: float = 1e-4
    epochs: int = 100
    seed: int = 0
    noise_dim: int = 32
    noise_distribution: str = "normal"
    adam_betas: tuple = (0.5, 0.999)
    adversarial_loss: str = "non_saturating"

    def __post_init__(self):
        if not 0.0 < self.lambda_balance < 1.0:
            raise ValueError("lambda_balance must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.noise_distribution not in ("normal", "uniform"):
            raise ValueError(f"unknown noise distribution {self.noise_distribution!r}")
        if self.adversarial_loss not in ("non_saturating", "minimax"):
            raise ValueError(f"unknown adversarial loss {self.adversarial_loss!r}")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class ModelBundle:
    schema: tuple
    spans: list
    specs: dict
    cfg: TrainingConfig
    generator: Generator
    classifier: Classifier
    discriminator: PairDiscriminator
    discriminator_frozen: Optional[PairDiscriminator] = None
    statistic: Optional[torch.nn.Module] = None
    label_prior: Optional[np.ndarray] = None
    stage: str = "init"
    epochs_done: int = 0
    training_log: list = field(default_factory=list)
    lds_trace: list = field(default_factory=list)
    mine_state: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.generator.n_classes

    @property
    def feature_width(self) -> int:
        return self.spans[-1].stop if self.spans else 0

    def sensitive_columns(self) -> np.ndarray:
        return np.array([i for s in self.spans if s.is_sensitive for i in range(s.start, s.stop)], dtype=int)

    def clone(self) -> "ModelBundle":
        return copy.deepcopy(self)

    def lds_matrix(self) -> np.ndarray:
        """LDS trace as an (epochs x subgroups) array."""
        if not self.lds_trace:
            return np.zeros((0, 0))
        ids = list(dict.fromkeys(r.subgroup_id for r in self.lds_trace))
        return np.array([r.lds for r in self.lds_trace]).reshape(-1, len(ids))


@dataclass(frozen=True)
class GeneratedBatch:
    x_prime: np.ndarray
    y_prime: np.ndarray
    s_prime: np.ndarray
    stage: str
    seed: int
    epoch: int
    acceptance_rate: Optional[float] = None

    def __post_init__(self):
        if not (len(self.x_prime) == len(self.y_prime) == len(self.s_prime)):
            raise ValueError("x_prime, y_prime and s_prime row counts differ")

    def __len__(self):
        return len(self.x_prime)

    def labels(self) -> np.ndarray:
        return self.y_prime.argmax(axis=1)

    def discrete(self, spans: Sequence[Span]) -> np.ndarray:
        return discretize(self.x_prime, spans)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def init_models(data: Dataset, specs: Optional[dict] = None, cfg: TrainingConfig = TrainingConfig()) -> ModelBundle:
    """Build the three players from the dataset layout; deterministic in ``cfg.seed``."""
    spans = data.spans
    width, n_classes = data.feature_width, data.n_classes
    specs = {**default_specs(width, n_classes), **(specs or {})}
    gs, cs, ds = specs["generator"], specs["classifier"], specs["discriminator"]
    if gs.out_width != width:
        raise ValueError(f"generator output width {gs.out_width} != encoded feature width {width}")
    if cs.out_width != n_classes:
        raise ValueError(f"classifier output width {cs.out_width} != number of classes {n_classes}")
    if ds.out_width != 1:
        raise ValueError("discriminator must output a single logit")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(substream(cfg.seed, "init"))
        gen = Generator(cfg.noise_dim, n_classes, spans, gs)
        clf = Classifier(width, cs)
        disc = PairDiscriminator(width, n_classes, ds)
    return ModelBundle(tuple(data.schema), spans, specs, cfg, gen, clf, disc, label_prior=data.label_prior())


def sample_noise(n: int, cfg: TrainingConfig, rng: torch.Generator) -> torch.Tensor:
    if cfg.noise_distribution == "normal":
        return torch.randn(n, cfg.noise_dim, generator=rng)
    return torch.rand(n, cfg.noise_dim, generator=rng) * 2 - 1


def onehot(y, n_classes: int) -> torch.Tensor:
    return F.one_hot(torch.as_tensor(y, dtype=torch.long), n_classes).float()


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

@dataclass
class GcdLosses:
    discriminator: torch.Tensor
    generator: torch.Tensor
    classifier: torch.Tensor
    value: torch.Tensor
    cross_entropy: torch.Tensor


def gcd_from_logits(d_real, d_fake, d_cls=None, c_probs=None, d_cls_all=None, ce=None,
                    lam: float = 0.5, adversarial_loss: str = "non_saturating") -> GcdLosses:
    """Per-player losses of the three-player game from discriminator logits.

    ``d_cls`` scores unlabelled rows paired with sampled pseudo-labels,
    ``d_cls_all`` (rows x classes) scores them paired with every class so the
    classifier term is an exact expectation under ``c_probs``. Leaving them
    out (no unlabelled rows) reduces everything to the two-player game.
    """
    ce = torch.zeros(()) if ce is None else ce
    real_term = F.logsigmoid(d_real).mean()
    fake_term = F.logsigmoid(-d_fake).mean()
    if d_cls is None or d_cls.numel() == 0:
        d_loss = -(real_term + fake_term)
        value = real_term + fake_term + ce
        g_loss = -F.logsigmoid(d_fake).mean() if adversarial_loss == "non_saturating" else fake_term
        return GcdLosses(d_loss, g_loss, ce, value, ce)
    cls_term = F.logsigmoid(-d_cls).mean()
    d_loss = -(real_term + lam * cls_term + (1 - lam) * fake_term)
    value = real_term + lam * cls_term + (1 - lam) * fake_term + ce
    if adversarial_loss == "non_saturating":
        g_loss = -(1 - lam) * F.logsigmoid(d_fake).mean()
    else:
        g_loss = (1 - lam) * fake_term
    if c_probs is None:
        return GcdLosses(d_loss, g_loss, ce, value, ce)
    if adversarial_loss == "non_saturating":
        c_adv = -(c_probs * F.logsigmoid(d_cls_all)).sum(dim=1).mean()
    else:
        c_adv = (c_probs * F.logsigmoid(-d_cls_all)).sum(dim=1).mean()
    return GcdLosses(d_loss, g_loss, lam * c_adv + ce, value, ce)


def _pair_logits_all(disc, x, n_classes):
    """Discriminator logits for every (row, class) pairing, shape (rows, classes)."""
    n = len(x)
    xs = x.repeat_interleave(n_classes, dim=0)
    ys = torch.eye(n_classes).repeat(n, 1)
    return disc(xs, ys).view(n, n_classes)


def loss_gcd(x_real, y_real, x_unlabeled, bundle: ModelBundle, cfg: TrainingConfig,
             seed: int = 0, z=None, y_gen=None) -> GcdLosses:
    """Evaluate all three player losses on one batch.

    ``x_real``/``y_real`` are labelled rows (class indices), ``x_unlabeled`` may
    be empty. Generator labels default to ``y_real`` and noise to a draw from
    ``seed``.
    """
    x_real = torch.as_tensor(np.asarray(x_real), dtype=torch.float32)
    if len(x_real) == 0:
        raise ValueError("loss_gcd needs a non-empty labelled batch")
    n_classes = bundle.n_classes
    y_real_t = torch.as_tensor(np.asarray(y_real), dtype=torch.long)
    y_oh = onehot(y_real_t, n_classes)
    rng = torch_rng(seed, "loss")
    y_gen = y_oh if y_gen is None else onehot(y_gen, n_classes)
    z = sample_noise(len(y_gen), cfg, rng) if z is None else z
    x_fake = bundle.generator(y_gen, z, rng)
    d_real = bundle.discriminator(x_real, y_oh)
    d_fake = bundle.discriminator(x_fake, y_gen)
    ce = F.cross_entropy(bundle.classifier(x_real), y_real_t)
    x_unl = torch.as_tensor(np.asarray(x_unlabeled, dtype=np.float32)).reshape(-1, x_real.shape[1])
    if len(x_unl) == 0:
        return gcd_from_logits(d_real, d_fake, ce=ce, lam=cfg.lambda_balance,
                               adversarial_loss=cfg.adversarial_loss)
    probs = F.softmax(bundle.classifier(x_unl), dim=1)
    y_c = torch.multinomial(probs.detach(), 1, generator=rng).squeeze(1)
    d_cls = bundle.discriminator(x_unl, onehot(y_c, n_classes))
    d_all = _pair_logits_all(bundle.discriminator, x_unl, n_classes)
    return gcd_from_logits(d_real, d_fake, d_cls, probs, d_all, ce, cfg.lambda_balance, cfg.adversarial_loss)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _check(value: torch.Tensor, stage: str, epoch: int, what: str):
    if not torch.isfinite(value).all():
        raise TrainingDivergence(stage, epoch, what)


class Monitor:
    """Per-epoch LDS of monitored sub-groups.

    ``estimator="count"`` counts memberships in a fresh generated batch.
    ``estimator="discriminator"`` instead re-weights the real rows by the
    inverse density ratio of the live discriminator, p_model/p_real = (1-D)/D.
    """

    def __init__(self, data: Dataset, subgroups: Sequence[SubgroupSpec], seed: int, n_eval: Optional[int] = None,
                 estimator: str = "count", max_eval: int = 50000):
        if estimator not in ("count", "discriminator"):
            raise ValueError(f"unknown LDS estimator {estimator!r}")
        self.data = data
        self.subgroups = list(subgroups)
        real = membership(data.x, data.y, data, self.subgroups)
        self.real_member = real
        self.real_freq = real.mean(axis=0)
        smallest = int(real.sum(axis=0).min()) if self.subgroups else 0
        self.n_eval = n_eval or min(max(10 * smallest, 4096), max_eval)
        self.seed = seed
        self.estimator = estimator

    def synth_freq(self, bundle: ModelBundle, epoch: int) -> np.ndarray:
        if self.estimator == "discriminator":
            known = self.data.label_mask
            x, y = self.data.x[known], self.data.y[known]
            disc = bundle.discriminator
            was = disc.training
            disc.eval()
            ratio = ratio_from_discriminator(disc, x, onehot(y, bundle.n_classes).numpy())
            disc.train(was)
            w = 1.0 / ratio
            return (self.real_member[known] * w[:, None]).sum(axis=0) / w.sum()
        batch = generate(bundle, self.n_eval, substream(self.seed, f"monitor{epoch}"))
        x = batch.discrete(bundle.spans)
        return membership(x, batch.labels(), self.data, self.subgroups).mean(axis=0)

    def __call__(self, bundle: ModelBundle, epoch: int) -> list:
        if not self.subgroups:
            return []
        freq = self.synth_freq(bundle, epoch)
        return lds_records(self.real_freq, freq[None, :], self.subgroups, epoch)


def adversarial_epochs(bundle: ModelBundle, data: Dataset, cfg: TrainingConfig, epochs: int,
                       stage: str, sampler=None, monitor: Optional[Monitor] = None,
                       penalty=None, on_epoch: Optional[Callable] = None) -> ModelBundle:
    """Alternating D -> G -> C updates. Mutates and returns ``bundle``.

    ``sampler`` supplies row probabilities (uniform shuffling if ``None``).
    ``penalty`` (stage 2) trains its own estimator on each generated batch and
    adds a differentiable term to the generator loss.
    """
    gen, disc, clf = bundle.generator, bundle.discriminator, bundle.classifier
    opt = lambda params: torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas)
    opt_d, opt_g, opt_c = opt(disc.parameters()), opt(gen.parameters()), opt(clf.parameters())
    n = len(data)
    x_all = torch.tensor(np.array(data.x), dtype=torch.float32)
    y_all = torch.as_tensor(np.where(data.label_mask, data.y, 0), dtype=torch.long)
    mask = np.asarray(data.label_mask)
    if not mask.any():
        raise ValueError("training needs at least one observed label")
    n_classes = bundle.n_classes
    lam = cfg.lambda_balance
    seed = cfg.seed
    batch_rng = np.random.default_rng(substream(seed, f"{stage}:batch"))
    noise_rng = torch_rng(seed, f"{stage}:noise")
    pseudo_rng = torch_rng(seed, f"{stage}:pseudo")
    steps = max(1, int(np.ceil(n / cfg.batch_size)))

    for epoch in range(epochs):
        gen.train(); disc.train(); clf.train()
        if sampler is None:
            order = batch_rng.permutation(n)
            batches = [order[i * cfg.batch_size:(i + 1) * cfg.batch_size] for i in range(steps)]
        else:
            probs = sampler.probabilities()
            if abs(probs.sum() - 1.0) > 1e-8:
                raise ValueError(f"sampler probabilities sum to {probs.sum():.12f}, not 1")
            batches = [batch_rng.choice(n, size=cfg.batch_size, p=probs) for _ in range(steps)]
        totals = {"d": 0.0, "g": 0.0, "c": 0.0, "value": 0.0, "mi": 0.0}
        for idx in batches:
            lab, unl = idx[mask[idx]], idx[~mask[idx]]
            if len(lab) == 0:
                continue
            xr, yr = x_all[lab], y_all[lab]
            yr_oh = onehot(yr, n_classes)
            xu = x_all[unl]
            has_unl = len(unl) > 0

            # discriminator
            z = sample_noise(len(lab), cfg, noise_rng)
            with torch.no_grad():
                x_fake = gen(yr_oh, z, noise_rng)
                probs_u = F.softmax(clf(xu), dim=1) if has_unl else None
                y_c = torch.multinomial(probs_u, 1, generator=pseudo_rng).squeeze(1) if has_unl else None
            d_real = disc(xr, yr_oh)
            d_fake = disc(x_fake, yr_oh)
            d_cls = disc(xu, onehot(y_c, n_classes)) if has_unl else None
            losses = gcd_from_logits(d_real, d_fake, d_cls, lam=lam, adversarial_loss=cfg.adversarial_loss) \
                if has_unl else gcd_from_logits(d_real, d_fake, lam=lam, adversarial_loss=cfg.adversarial_loss)
            _check(losses.discriminator, stage, epoch, "discriminator loss")
            opt_d.zero_grad(); losses.discriminator.backward(); opt_d.step()

            # generator
            z = sample_noise(len(lab), cfg, noise_rng)
            x_fake = gen(yr_oh, z, noise_rng)
            d_fake = disc(x_fake, yr_oh)
            if cfg.adversarial_loss == "non_saturating":
                g_loss = -(1 - lam if has_unl else 1.0) * F.logsigmoid(d_fake).mean()
            else:
                g_loss = (1 - lam if has_unl else 1.0) * F.logsigmoid(-d_fake).mean()
            if penalty is not None:
                if hasattr(penalty, "bind_real"):
                    penalty.bind_real(xr)
                penalty.update(x_fake.detach(), yr_oh)
                mi = penalty.loss(x_fake, yr_oh)
                g_loss = penalty.combine(g_loss, mi)
                totals["mi"] += float(mi.detach())
            _check(g_loss, stage, epoch, "generator loss")
            opt_g.zero_grad(); g_loss.backward(); opt_g.step()

            # classifier
            ce = F.cross_entropy(clf(xr), yr)
            if has_unl:
                probs_u = F.softmax(clf(xu), dim=1)
                with torch.no_grad():
                    d_all = _pair_logits_all(disc, xu, n_classes)
                if cfg.adversarial_loss == "non_saturating":
                    c_adv = -(probs_u * F.logsigmoid(d_all)).sum(dim=1).mean()
                else:
                    c_adv = (probs_u * F.logsigmoid(-d_all)).sum(dim=1).mean()
                c_loss = lam * c_adv + ce
            else:
                c_loss = ce
            _check(c_loss, stage, epoch, "classifier loss")
            opt_c.zero_grad(); c_loss.backward(); opt_c.step()

            totals["d"] += float(losses.discriminator.detach())
            totals["g"] += float(g_loss.detach())
            totals["c"] += float(c_loss.detach())
            totals["value"] += float(losses.value.detach())

        bundle.epochs_done += 1
        entry = {"stage": stage, "epoch": epoch, **{k: v / len(batches) for k, v in totals.items()}}
        if monitor is not None:
            records = monitor(bundle, epoch)
            bundle.lds_trace.extend(records)
            if sampler is not None:
                sampler.update([r.lds for r in records])
            entry["lds"] = {r.subgroup_id: r.lds for r in records}
        bundle.training_log.append(entry)
        if on_epoch is not None:
            on_epoch(bundle, entry)
    return bundle


def train_stage1(data: Dataset, bundle: ModelBundle, cfg: Optional[TrainingConfig] = None,
                 monitor: Sequence[SubgroupSpec] = (), n_eval: Optional[int] = None) -> ModelBundle:
    """Pretrain all players and record per-epoch LDS of ``monitor`` sub-groups.

    Returns a new bundle whose frozen discriminator is a copy of the trained one.
    """
    cfg = cfg or bundle.cfg
    observed = data.y[data.label_mask]
    missing = set(range(data.n_classes)) - set(np.unique(observed).tolist())
    if missing:
        raise ValueError(f"no observed label for classes {sorted(missing)}")
    out = bundle.clone()
    out.cfg = cfg
    out.label_prior = data.label_prior()
    mon = Monitor(data, monitor, cfg.seed, n_eval) if monitor else None
    adversarial_epochs(out, data, cfg, cfg.epochs, "pretrain", monitor=mon)
    out.discriminator_frozen = copy.deepcopy(out.discriminator).eval()
    for p in out.discriminator_frozen.parameters():
        p.requires_grad_(False)
    out.stage = "pretrain"
    return out


def generate(bundle: ModelBundle, n: int, seed: int, stage: Optional[str] = None) -> GeneratedBatch:
    """Draw ``n`` rows: y from the training label prior, z from the noise law."""
    if n <= 0:
        raise ValueError("n must be positive")
    if bundle.label_prior is None:
        raise ValueError("bundle has no label prior; train it first")
    rng = torch_rng(seed, "generate")
    prior = torch.as_tensor(bundle.label_prior, dtype=torch.float64)
    was_training = bundle.generator.training
    bundle.generator.eval()
    with torch.no_grad():
        y = torch.multinomial(prior, n, replacement=True, generator=rng)
        y_oh = onehot(y, bundle.n_classes)
        z = sample_noise(n, bundle.cfg, rng)
        x = bundle.generator(y_oh, z, rng).double().numpy()
    bundle.generator.train(was_training)
    sens = bundle.sensitive_columns()
    return GeneratedBatch(x, y_oh.double().numpy(), x[:, sens], stage or bundle.stage, seed, bundle.epochs_done)


def train_discriminator(disc, x_real, y_real, x_fake, y_fake, epochs: int = 200, batch_size: int = 512,
                        lr: float = 1e-3, seed: int = 0):
    """Fit a pair discriminator on fixed real and generated samples.

    Uses the discriminator's own loss from the training loop. At the optimum
    D(x) = p(x) / (p(x) + p_g(x)). Returns ``disc`` in eval mode.
    """
    xr = torch.as_tensor(np.asarray(x_real), dtype=torch.float32)
    yr = torch.as_tensor(np.asarray(y_real), dtype=torch.float32)
    xf = torch.as_tensor(np.asarray(x_fake), dtype=torch.float32)
    yf = torch.as_tensor(np.asarray(y_fake), dtype=torch.float32)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(disc.parameters(), lr=lr)
    disc.train()
    for _ in range(epochs):
        pr = torch.randperm(len(xr), generator=gen)
        pf = torch.randperm(len(xf), generator=gen)
        for i in range(0, max(len(xr), len(xf)), batch_size):
            br, bf = pr[i:i + batch_size], pf[i:i + batch_size]
            if len(br) == 0 or len(bf) == 0:
                break
            loss = gcd_from_logits(disc(xr[br], yr[br]), disc(xf[bf], yf[bf])).discriminator
            opt.zero_grad(); loss.backward(); opt.step()
    return disc.eval()


def discriminator_density_ratio(bundle: ModelBundle, x, y_onehot, eps: float = EPS_RATIO) -> np.ndarray:
    """p_real / p_model implied by the frozen discriminator: D / (1 - D), clamped."""
    if bundle.discriminator_frozen is None:
        raise RuntimeError("frozen discriminator not set; run train_stage1 first")
    return ratio_from_discriminator(bundle.discriminator_frozen, x, y_onehot, eps)


def ratio_from_discriminator(disc, x, y_onehot, eps: float = EPS_RATIO) -> np.ndarray:
    with torch.no_grad():
        logits = disc(torch.as_tensor(np.asarray(x), dtype=torch.float32),
                      torch.as_tensor(np.asarray(y_onehot), dtype=torch.float32)).double().numpy()
    # D/(1-D) == exp(logit)
    return np.exp(np.clip(logits, np.log(eps), -np.log(eps)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_bundle(bundle: ModelBundle, path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "schema_hash": schema_hash(bundle.schema),
        "schema": [c.to_dict() for c in bundle.schema],
        "specs": {k: v.to_dict() for k, v in bundle.specs.items()},
        "cfg": bundle.cfg.to_dict(),
        "generator": bundle.generator.state_dict(),
        "classifier": bundle.classifier.state_dict(),
        "discriminator": bundle.discriminator.state_dict(),
        "discriminator_frozen": None if bundle.discriminator_frozen is None else bundle.discriminator_frozen.state_dict(),
        "statistic": None if bundle.statistic is None else bundle.statistic.state_dict(),
        "statistic_dims": bundle.mine_state.get("dims"),
        "label_prior": None if bundle.label_prior is None else bundle.label_prior.tolist(),
        "stage": bundle.stage,
        "epochs_done": bundle.epochs_done,
        "training_log": bundle.training_log,
        "lds_trace": [r.__dict__ for r in bundle.lds_trace],
    }
    torch.save(payload, path)


def load_bundle(path, data: Dataset) -> ModelBundle:
    """Restore a bundle; refuses checkpoints written for a different schema."""
    from .nets import StatisticNet
    from .representation import LdsRecord

    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    expected = schema_hash(data.schema)
    if payload["schema_hash"] != expected:
        raise ValueError(f"checkpoint schema hash {payload['schema_hash']} does not match dataset {expected}")
    specs = {k: NetworkSpec(**v) for k, v in payload["specs"].items()}
    cfg_dict = dict(payload["cfg"])
    cfg = TrainingConfig(**cfg_dict)
    bundle = init_models(data, specs, cfg)
    bundle.generator.load_state_dict(payload["generator"])
    bundle.classifier.load_state_dict(payload["classifier"])
    bundle.discriminator.load_state_dict(payload["discriminator"])
    if payload["discriminator_frozen"] is not None:
        frozen = copy.deepcopy(bundle.discriminator)
        frozen.load_state_dict(payload["discriminator_frozen"])
        frozen.eval()
        for p in frozen.parameters():
            p.requires_grad_(False)
        bundle.discriminator_frozen = frozen
    if payload["statistic"] is not None:
        w_dim, s_dim = payload["statistic_dims"]
        stat = StatisticNet(w_dim, s_dim, specs["statistic"])
        stat.load_state_dict(payload["statistic"])
        bundle.statistic = stat
        bundle.mine_state["dims"] = (w_dim, s_dim)
    bundle.label_prior = None if payload["label_prior"] is None else np.asarray(payload["label_prior"])
    bundle.stage = payload["stage"]
    bundle.epochs_done = payload["epochs_done"]
    bundle.training_log = payload["training_log"]
    bundle.lds_trace = [LdsRecord(**r) for r in payload["lds_trace"]]
    return bundle
