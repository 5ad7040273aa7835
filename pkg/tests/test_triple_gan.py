import math

import numpy as np
import pandas as pd
import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings, strategies as st

from fairsynth.data import ColumnSchema, from_frame, mask_labels, split_dataset
from fairsynth.metrics import jsd_marginal
from fairsynth.nets import Classifier, NetworkSpec, PairDiscriminator, default_specs, tabular_head
from fairsynth.representation import SubgroupSpec
from fairsynth.triple_gan import (GeneratedBatch, TrainingConfig, TrainingDivergence, generate, gcd_from_logits,
                                  init_models, load_bundle, loss_gcd, onehot, ratio_from_discriminator,
                                  save_bundle, train_discriminator, train_stage1)

FAST = TrainingConfig(batch_size=256, learning_rate=1e-3, epochs=3, noise_dim=8, seed=1)


@pytest.fixture(scope="module")
def trained(toy):
    groups = [SubgroupSpec.from_dict({"id": "c0", "conditions": [{"column": "segment", "equals": "c0"}]}),
              SubgroupSpec.from_dict({"id": "s1", "conditions": [{"column": "s", "equals": "1"}]})]
    bundle = init_models(toy, None, FAST)
    return train_stage1(toy, bundle, FAST, groups), groups


def params(module):
    return torch.cat([p.detach().flatten() for p in module.parameters()])


def test_widths_are_checked(toy):
    specs = default_specs(toy.feature_width, toy.n_classes)
    assert init_models(toy, specs, FAST).feature_width == toy.feature_width
    bad = {"classifier": NetworkSpec((16, toy.n_classes + 1), output_head="softmax")}
    with pytest.raises(ValueError):
        init_models(toy, bad, FAST)
    with pytest.raises(ValueError):
        init_models(toy, {"generator": NetworkSpec((8, toy.feature_width - 1), output_head="gumbel_softmax")}, FAST)


def test_same_seed_same_initial_parameters(toy):
    a, b = init_models(toy, None, FAST), init_models(toy, None, FAST)
    for m in ("generator", "classifier", "discriminator"):
        assert torch.equal(params(getattr(a, m)), params(getattr(b, m)))
    c = init_models(toy, None, TrainingConfig(seed=2, noise_dim=8))
    assert not torch.equal(params(a.discriminator), params(c.discriminator))


def test_constant_discriminator_value():
    # D = 1/2 everywhere: every log term is ln(1/2)
    z = torch.zeros(7)
    ce = torch.tensor(0.3)
    losses = gcd_from_logits(z, z, z[:4], torch.full((4, 2), 0.5), torch.zeros(4, 2), ce, lam=0.5)
    expected = math.log(0.5) * (1 + 0.5 + 0.5) + 0.3
    assert float(losses.value) == pytest.approx(expected, abs=1e-6)


def test_no_unlabeled_rows_reduce_to_two_player_game():
    g = torch.Generator().manual_seed(0)
    d_real, d_fake = torch.randn(16, generator=g), torch.randn(16, generator=g)
    losses = gcd_from_logits(d_real, d_fake, lam=0.5)
    v3 = torch.log(torch.sigmoid(d_real)).mean() + torch.log(1 - torch.sigmoid(d_fake)).mean()
    assert float(losses.value) == pytest.approx(float(v3), abs=1e-5)
    assert float(losses.discriminator) == pytest.approx(-float(v3), abs=1e-5)


def test_minimax_generator_loss_is_fake_term():
    d_fake = torch.tensor([0.3, -1.2])
    losses = gcd_from_logits(torch.zeros(2), d_fake, adversarial_loss="minimax")
    assert float(losses.generator) == pytest.approx(float(torch.log(1 - torch.sigmoid(d_fake)).mean()), abs=1e-6)


def test_classifier_term_is_expectation_over_classes():
    probs = torch.tensor([[0.25, 0.75]])
    d_all = torch.tensor([[0.5, -1.0]])
    losses = gcd_from_logits(torch.zeros(1), torch.zeros(1), torch.zeros(1), probs, d_all, lam=0.5,
                             adversarial_loss="minimax")
    expected = 0.5 * float((probs * torch.nn.functional.logsigmoid(-d_all)).sum())
    assert float(losses.classifier) == pytest.approx(expected, abs=1e-6)


def test_perfect_classifier_has_zero_cross_entropy(toy_full_labels):
    d = toy_full_labels
    bundle = init_models(d, None, FAST)

    class Oracle(nn.Module):
        def __init__(self, lookup):
            super().__init__()
            self.lookup = lookup

        def forward(self, x):
            return 1e4 * onehot(self.lookup[: len(x)], 2)

    bundle.classifier = Oracle(torch.as_tensor(d.y[:64].copy()))
    losses = loss_gcd(d.x[:64], d.y[:64], np.zeros((0, d.feature_width)), bundle, FAST)
    assert float(losses.cross_entropy) == pytest.approx(0.0, abs=1e-6)


def test_lds_trace_length(trained):
    bundle, groups = trained
    assert len(bundle.lds_trace) == FAST.epochs * len(groups)
    assert bundle.lds_matrix().shape == (FAST.epochs, len(groups))
    assert bundle.discriminator_frozen is not None
    assert all(not p.requires_grad for p in bundle.discriminator_frozen.parameters())


def test_generate_is_deterministic(trained):
    bundle, _ = trained
    a, b = generate(bundle, 1024, 7), generate(bundle, 1024, 7)
    np.testing.assert_array_equal(a.x_prime, b.x_prime)
    np.testing.assert_array_equal(a.y_prime, b.y_prime)
    assert not np.array_equal(a.x_prime, generate(bundle, 1024, 8).x_prime)


def test_generated_labels_follow_prior(trained):
    bundle, _ = trained
    b = bundle.clone()
    b.label_prior = np.array([0.3, 0.7])
    n = 20000
    freq = generate(b, n, 3).labels().mean()
    assert abs(freq - 0.7) < 3 / math.sqrt(n)


@pytest.mark.parametrize("hard", [False, True])
def test_relaxed_groups_sum_to_one(toy, hard):
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(500, toy.feature_width, generator=g) * 3
    out = tabular_head(logits, toy.spans, 0.2, g, hard=hard)
    for span in toy.spans:
        if span.kind == "categorical":
            sums = out[:, span.start:span.stop].sum(dim=1)
            assert torch.all((sums - 1).abs() <= 1e-5)
        else:
            block = out[:, span.start:span.stop]
            assert torch.all((block >= 0) & (block <= 1))


def test_straight_through_is_hard_forward_soft_backward(toy):
    logits = torch.zeros(64, toy.feature_width, requires_grad=True)
    g = torch.Generator().manual_seed(0)
    out = tabular_head(logits, toy.spans, 0.2, g, hard=True)
    for span in toy.spans:
        if span.kind != "continuous":
            block = out[:, span.start:span.stop].detach()
            assert torch.all((block == 0) | (block == 1))
    out.sum().backward()
    assert logits.grad is not None


class Fixed(nn.Module):
    def __init__(self, p):
        super().__init__()
        self.logit = math.log(p / (1 - p))

    def forward(self, x, y):
        return torch.full((len(x),), self.logit)


@pytest.mark.parametrize("p,ratio", [(0.5, 1.0), (0.8, 4.0)])
def test_ratio_algebra(p, ratio):
    r = ratio_from_discriminator(Fixed(p), np.zeros((3, 2)), np.zeros((3, 2)))
    np.testing.assert_allclose(r, ratio, rtol=1e-5)


def test_ratio_is_clamped():
    r = ratio_from_discriminator(Fixed(1 - 1e-9), np.zeros((1, 1)), np.zeros((1, 1)))
    assert r[0] == pytest.approx(1e3)


def discrete_toy(p, q, n, seed):
    rng = np.random.default_rng(seed)
    eye = np.eye(len(p))
    xr = eye[rng.choice(len(p), size=n, p=p)]
    xf = eye[rng.choice(len(q), size=n, p=q)]
    y = np.ones((n, 1))
    return xr, y, xf, y


def test_learned_ratio_matches_exact_ratio_on_discrete_toy():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    q = np.array([0.25, 0.25, 0.25, 0.25])
    torch.manual_seed(0)
    disc = PairDiscriminator(4, 1, NetworkSpec((32, 32, 1), "leaky_relu", "sigmoid"))
    train_discriminator(disc, *discrete_toy(p, q, 20000, 0), epochs=30, seed=0)
    r = ratio_from_discriminator(disc, np.eye(4), np.ones((4, 1)))
    rel = np.abs(r / (p / q) - 1)
    assert np.mean(rel < 0.2) >= 0.9


def gaussian_mixture_data(n, seed):
    rng = np.random.default_rng(seed)
    comp = rng.random(n) < 0.5
    x = np.where(comp, rng.normal(-2, 0.5, n), rng.normal(2, 0.7, n))
    y = (rng.random(n) < 0.5).astype(int)
    frame = pd.DataFrame({"x": x.astype(str), "y": y.astype(str)})
    schema = (ColumnSchema("x", "continuous"), ColumnSchema("y", "binary", is_label=True))
    return from_frame(frame, schema)


def test_generator_learns_a_1d_mixture():
    d = gaussian_mixture_data(2000, 0)
    cfg = TrainingConfig(batch_size=128, learning_rate=2e-4, epochs=200, noise_dim=8, seed=0)
    specs = {"generator": NetworkSpec((64, 64, 1), "relu", "gumbel_softmax", 0.2, True)}
    bundle = train_stage1(d, init_models(d, specs, cfg), cfg)
    synth = generate(bundle, 2000, 1)
    assert jsd_marginal(d, synth, per_column=True)["x"] < 0.05


def test_semi_supervised_classifier_on_separable_toy():
    rng = np.random.default_rng(1)
    n = 2000
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    frame = pd.DataFrame({"a": x[:, 0].astype(str), "b": x[:, 1].astype(str), "y": y.astype(str)})
    schema = (ColumnSchema("a", "continuous"), ColumnSchema("b", "continuous"),
              ColumnSchema("y", "binary", is_label=True))
    d = from_frame(frame, schema)
    train, test = split_dataset(mask_labels(d, 0.5, 0), 0.25, 0)
    cfg = TrainingConfig(batch_size=256, learning_rate=1e-3, epochs=30, noise_dim=8, seed=0)
    bundle = train_stage1(train, init_models(train, None, cfg), cfg)
    with torch.no_grad():
        pred = bundle.classifier(torch.as_tensor(test.x, dtype=torch.float32)).argmax(1).numpy()
    assert np.mean(pred == test.y) >= 0.9


def test_checkpoint_round_trip(trained, toy, tmp_path):
    bundle, _ = trained
    path = tmp_path / "b.pt"
    save_bundle(bundle, path)
    back = load_bundle(path, toy)
    np.testing.assert_array_equal(generate(bundle, 256, 4).x_prime, generate(back, 256, 4).x_prime)
    assert back.stage == bundle.stage and back.epochs_done == bundle.epochs_done
    assert len(back.lds_trace) == len(bundle.lds_trace)


def test_checkpoint_schema_mismatch(trained, tmp_path):
    bundle, _ = trained
    path = tmp_path / "b.pt"
    save_bundle(bundle, path)
    with pytest.raises(ValueError):
        load_bundle(path, gaussian_mixture_data(50, 0))


def test_nan_parameters_raise_divergence(toy):
    bundle = init_models(toy, None, FAST)
    with torch.no_grad():
        for p in bundle.generator.parameters():
            p.fill_(float("nan"))
    with pytest.raises(TrainingDivergence) as err:
        train_stage1(toy, bundle, FAST)
    assert err.value.stage == "pretrain"


def test_missing_class_rejected(toy):
    only = toy.subset(np.flatnonzero(toy.y == 0))
    with pytest.raises(ValueError):
        train_stage1(only, init_models(only, None, FAST), FAST)


def test_generated_batch_rejects_bad_shapes():
    with pytest.raises(ValueError):
        GeneratedBatch(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((3, 0)), "pretrain", 0, 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.01, 0.99))
def test_discriminator_loss_is_nonnegative(a, b, lam):
    losses = gcd_from_logits(torch.tensor([a]), torch.tensor([b]), torch.tensor([a]),
                             torch.tensor([[0.5, 0.5]]), torch.tensor([[a, b]]), lam=lam)
    assert float(losses.discriminator) >= 0
    assert float(losses.value) <= 1e-6
