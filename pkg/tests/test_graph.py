import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2g2net.graph import (COGPILOT_MODALITIES, DatasetSchema, HierarchicalSample,
                           ModalitySchema, build_complete_subgraph, complete_normalized,
                           default_schema, normalize_adjacency, validate_sample)
from h2g2net.numerics import ContractError


def test_complete_subgraph_small_cases():
    np.testing.assert_array_equal(build_complete_subgraph(1), [[0]])
    np.testing.assert_array_equal(build_complete_subgraph(2), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(build_complete_subgraph(3).sum(axis=1), [2, 2, 2])
    with pytest.raises(ContractError):
        build_complete_subgraph(0)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_adjacency([[0]]), [[1.0]])
    np.testing.assert_allclose(normalize_adjacency([[0, 1], [1, 0]]), np.full((2, 2), 0.5),
                               atol=1e-15)
    np.testing.assert_allclose(normalize_adjacency(build_complete_subgraph(4)),
                               np.full((4, 4), 0.25), atol=1e-15)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), [[0, 1], [0, 0]], [[1, 0], [0, 0]],
                                 [[0, 2], [2, 0]]])
def test_normalize_rejects_bad_input(bad):
    with pytest.raises(ContractError):
        normalize_adjacency(bad)


@pytest.mark.parametrize("n", range(1, 7))
def test_complete_graph_is_constant_one_over_n(n):
    np.testing.assert_allclose(complete_normalized(n), np.full((n, n), 1.0 / n), atol=1e-15)


def _power_iteration(m, iters=500):
    v = np.ones(m.shape[0]) / np.sqrt(m.shape[0]) + np.linspace(0, 0.1, m.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = nrm / np.linalg.norm(v)
        v = w / nrm
    return lam


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_normalized_random_graph_symmetric_spectral_radius(n, seed):
    r = np.random.default_rng(seed)
    upper = np.triu(r.integers(0, 2, (n, n)), 1)
    a = upper + upper.T
    out = normalize_adjacency(a)
    np.testing.assert_allclose(out, out.T, atol=1e-12)
    assert (out >= 0).all()
    # nonnegative symmetric: power iteration converges to the spectral radius
    assert _power_iteration(out) <= 1 + 1e-9


@pytest.mark.parametrize("n", range(1, 7))
def test_complete_graph_row_sums_bounded(n):
    assert (complete_normalized(n).sum(axis=1) <= 1 + 1e-12).all()


def test_star_graph_row_sum_exceeds_one():
    # symmetric normalization bounds the spectral radius, not the row sums
    star = np.zeros((4, 4))
    star[0, 1:] = star[1:, 0] = 1
    out = normalize_adjacency(star)
    assert out[0].sum() > 1.0
    assert _power_iteration(out) <= 1 + 1e-9


def test_default_schema_matches_recording_layout():
    schema = default_schema()
    assert schema.names == ["EMG", "PPG", "EDA", "ECG", "RES", "ACC", "GD", "PD", "EO"]
    assert [m.channel_count for m in schema.modalities] == [2, 1, 1, 1, 1, 6, 6, 2, 2]
    assert schema.feature_len == 100 and schema.class_count == 2
    assert len(COGPILOT_MODALITIES) == 9


def test_schema_invariants():
    with pytest.raises(ContractError):
        ModalitySchema("X", 0)
    with pytest.raises(ContractError):
        DatasetSchema((ModalitySchema("X", 1), ModalitySchema("X", 2)))


def test_schema_round_trip_and_hash():
    schema = default_schema()
    again = DatasetSchema.from_dict(schema.to_dict())
    assert again == schema and again.hash() == schema.hash()
    assert default_schema(feature_len=50).hash() != schema.hash()


def _conforming(schema, rng):
    return HierarchicalSample("S1", 1, {m.name: rng.normal(size=(m.channel_count, schema.feature_len))
                                        for m in schema.modalities})


def test_validate_conforming_sample(rng):
    schema = default_schema()
    assert validate_sample(_conforming(schema, rng), schema) == []


def test_validate_missing_pd(rng):
    schema = default_schema()
    s = _conforming(schema, rng)
    del s.features["PD"]
    assert validate_sample(s, schema) == ["missing modality PD"]


def test_validate_reports_every_violation(rng):
    schema = default_schema()
    s = _conforming(schema, rng)
    s.features["EMG"] = np.zeros((3, 100))
    s.features["ECG"] = np.full((1, 100), np.nan)
    del s.features["EO"]
    s.label = 5
    problems = validate_sample(s, schema)
    assert len(problems) == 4
    assert any("EMG" in p and "(3, 100)" in p for p in problems)
    assert any("ECG" in p and "non-finite" in p for p in problems)
    assert "missing modality EO" in problems
    assert any("label" in p for p in problems)
