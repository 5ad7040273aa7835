import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from fairsynth.data import (BiasInjectionSpec, ColumnSchema, MixtureSpec, SchemaError, decode, discretize,
                            discrete_mi, from_frame, load_csv, load_config, mask_labels, schema_from_config,
                            split_dataset, synthesize_biased, to_frame)
from fairsynth.metrics import plug_in_mi

SCHEMA = (
    ColumnSchema("age", "continuous"),
    ColumnSchema("sex", "categorical", ("M", "F"), is_sensitive=True),
    ColumnSchema("income", "binary", ("low", "high"), is_label=True),
)


def write_csv(tmp_path, text):
    p = tmp_path / "t.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_three_row_csv_encodes_to_expected_width(tmp_path):
    d = load_csv(write_csv(tmp_path, "age,sex,income\n20,M,low\n40,F,high\n60,F,low\n"), SCHEMA)
    assert len(d) == 3
    # continuous 1 + categorical 2 (+ binary label 1 when appended)
    assert d.feature_width == 3
    assert d.rows.shape == (3, 4)
    assert d.label_mask.all()


def test_blank_label_cell_is_masked(tmp_path):
    d = load_csv(write_csv(tmp_path, "age,sex,income\n20,M,low\n40,F,\n60,F,high\n"), SCHEMA)
    assert d.label_mask.tolist() == [True, False, True]


def test_undeclared_and_missing_columns_rejected(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write_csv(tmp_path, "age,sex,income,zip\n20,M,low,1\n"), SCHEMA)
    with pytest.raises(SchemaError):
        load_csv(write_csv(tmp_path, "age,income\n20,low\n"), SCHEMA)


def test_unknown_category_rejected(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write_csv(tmp_path, "age,sex,income\n20,X,low\n"), SCHEMA)


def test_schema_needs_exactly_one_label():
    with pytest.raises(SchemaError):
        schema_from_config([{"name": "a", "kind": "continuous"}])
    with pytest.raises(SchemaError):
        schema_from_config([{"name": "a", "kind": "binary", "is_label": True},
                            {"name": "b", "kind": "binary", "is_label": True}])


def test_continuous_rescaling():
    d = from_frame(pd.DataFrame({"age": ["0", "100"], "sex": ["M", "F"], "income": ["low", "high"]}), SCHEMA)
    rows = np.array([[0.5, 1.0, 0.0]])
    assert decode(d, rows)["age"].iloc[0] == pytest.approx(50.0)


def test_all_zero_onehot_group_is_an_error():
    d = from_frame(pd.DataFrame({"age": ["0", "100"], "sex": ["M", "F"], "income": ["low", "high"]}), SCHEMA)
    with pytest.raises(SchemaError):
        decode(d, np.array([[0.5, 0.0, 0.0]]))


def test_round_trip(tmp_path):
    text = "age,sex,income\n20,M,low\n40,F,high\n60,F,low\n"
    d = load_csv(write_csv(tmp_path, text), SCHEMA)
    frame = to_frame(d)
    assert frame["sex"].tolist() == ["M", "F", "F"]
    assert frame["income"].tolist() == ["low", "high", "low"]
    np.testing.assert_allclose(frame["age"].astype(float), [20, 40, 60])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3, allow_nan=False), st.sampled_from(["M", "F"]),
                          st.sampled_from(["low", "high"])), min_size=2, max_size=30))
def test_round_trip_property(rows):
    frame = pd.DataFrame(rows, columns=["age", "sex", "income"])
    frame["age"] = frame["age"].map(repr)
    d = from_frame(frame, SCHEMA)
    back = to_frame(d)
    assert back["sex"].tolist() == frame["sex"].tolist()
    assert back["income"].tolist() == frame["income"].tolist()
    np.testing.assert_allclose(back["age"].astype(float), frame["age"].astype(float), atol=1e-6 * 2e3)


def test_mask_labels_counts_and_determinism(toy_full_labels):
    assert mask_labels(toy_full_labels, 0.0, 1) is toy_full_labels
    small = toy_full_labels.subset(np.arange(100))
    m = mask_labels(small, 0.5, 1)
    assert (~m.label_mask).sum() == 50
    a = mask_labels(toy_full_labels, 0.3, 9).label_mask
    b = mask_labels(toy_full_labels, 0.3, 9).label_mask
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        mask_labels(small, 1.0, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.99), st.integers(0, 2**31 - 1))
def test_mask_labels_floor_property(frac, seed):
    spec = BiasInjectionSpec(n_rows=200, seed=1)
    d = synthesize_biased(spec)
    m = mask_labels(d, frac, seed)
    assert (~m.label_mask).sum() == math.floor(frac * 200)
    # masked labels keep their value for evaluation
    assert np.array_equal(m.y, d.y)


def test_independent_toy_has_near_zero_mi():
    d = synthesize_biased(BiasInjectionSpec(n_rows=10_000, correlation_strength=0.0, seed=0))
    assert plug_in_mi(d.y, d.sensitive_codes()) < 0.01


def test_fully_correlated_toy_mi_is_ln2():
    spec = BiasInjectionSpec(n_rows=10_000, correlation_strength=1.0, seed=0)
    assert discrete_mi(spec.joint()) == pytest.approx(math.log(2), abs=1e-9)
    d = synthesize_biased(spec)
    assert plug_in_mi(d.y, d.sensitive_codes()) == pytest.approx(math.log(2), abs=0.01)


def test_proxy_agreement():
    d = synthesize_biased(BiasInjectionSpec(n_rows=10_000, proxy_agreement=0.95, seed=2))
    agree = np.mean(d.sensitive_codes() == d.sensitive_codes("s_proxy"))
    assert abs(agree - 0.95) < 0.01


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.02, 0.5), st.integers(0, 10_000))
def test_biased_toy_hits_its_targets(phi, minority, seed):
    n = 4000
    spec = BiasInjectionSpec(n_rows=n, correlation_strength=phi, minority_fraction=minority, seed=seed)
    d = synthesize_biased(spec)
    s = d.sensitive_codes()
    rates = spec.label_rates()
    for g in (0, 1):
        members = s == g
        # exact-count assignment: within one row of the target rate
        assert abs(d.y[members].mean() - rates[g]) <= 1.0 / members.sum() + 1e-12
    seg = d.sensitive_codes("segment")
    assert abs(np.mean(seg == seg.max()) - minority) < 2 / math.sqrt(n)


def test_infeasible_correlation_is_rejected():
    spec = BiasInjectionSpec(correlation_strength=1.0, label_rate=0.3)
    with pytest.raises(ValueError):
        spec.joint()


def test_spec_validation():
    with pytest.raises(ValueError):
        BiasInjectionSpec(correlation_strength=1.5)
    with pytest.raises(ValueError):
        BiasInjectionSpec(minority_fraction=0.0)
    with pytest.raises(ValueError):
        BiasInjectionSpec(proxy_agreement=0.3)
    with pytest.raises(ValueError):
        MixtureSpec(weights=(1.0,), means=((0.0,),), spreads=((1.0,),))


def test_split_is_stratified_and_disjoint(toy):
    tr, te = split_dataset(toy, 0.2, seed=5)
    assert len(tr) + len(te) == len(toy)
    assert te.split == "test"
    for d in (tr, te):
        assert abs(d.sensitive_codes().mean() - toy.sensitive_codes().mean()) < 0.02


def test_discretize_snaps_relaxed_rows(toy):
    x = np.array(toy.x[:5], dtype=float)
    noisy = x.copy()
    for span in toy.spans:
        if span.kind != "continuous":
            noisy[:, span.start:span.stop] = 0.8 * noisy[:, span.start:span.stop] + 0.1
    np.testing.assert_array_equal(discretize(noisy, toy.spans), x)


def test_load_config_rejects_non_mapping(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(SchemaError):
        load_config(p)
