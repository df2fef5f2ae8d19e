import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedgreeks.errors import NotPositiveDefiniteError, ValidationError
from curvedgreeks.geometry import SPOT_VOL, QuadraticForm, TangentMove
from curvedgreeks.penalties import (
    SensitivityBlock,
    StressMove,
    combine_penalties,
    covariance_penalty,
    gap_penalty,
    gap_penalty_value,
    load_stress_file,
    matching_ratio,
    sensitivity_penalty,
    time_bucket_weights,
)


def _pen(m):
    return QuadraticForm(SPOT_VOL, m, "penalty")


def test_covariance_penalty_examples():
    np.testing.assert_allclose(covariance_penalty(QuadraticForm(SPOT_VOL, np.eye(2))).matrix, np.eye(2), rtol=1e-15)
    np.testing.assert_allclose(covariance_penalty(QuadraticForm(SPOT_VOL, np.diag([4.0, 1.0]))).matrix,
                               np.diag([0.25, 1.0]), rtol=1e-14)


def test_singular_covariance_needs_floor_or_shrinkage():
    xi = QuadraticForm(SPOT_VOL, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        covariance_penalty(xi)
    g = covariance_penalty(xi, floor=1e-4)
    eig = np.linalg.eigvalsh(g.matrix)
    assert eig[0] > 0
    assert eig[-1] <= 1.0 / (1e-4 * 2.0) * (1 + 1e-12)
    assert np.linalg.eigvalsh(covariance_penalty(xi, shrinkage=0.1).matrix)[0] > 0


def test_covariance_penalty_inverts_covariance():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 2))
    xi = a @ a.T + 0.1 * np.eye(2)
    g = covariance_penalty(QuadraticForm(SPOT_VOL, xi))
    np.testing.assert_allclose(g.matrix @ xi, np.eye(2), atol=1e-10)


def test_gap_penalty_examples():
    g0 = _pen(np.eye(2))
    stress = StressMove(TangentMove(SPOT_VOL, [0.02, 0.003]))
    g = gap_penalty([stress], g0)
    eig = np.linalg.eigvalsh(g.matrix)
    assert eig[0] < 1e-12 * eig[-1]
    # hand value of (l . dx)^2 with l = dx = (0.02, 0.003)
    expected = (0.02**2 + 0.003**2) ** 2
    assert g.value(stress.direction) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.67281e-7, rel=1e-12)
    assert g.value(TangentMove(SPOT_VOL, [-0.003, 0.02])) == pytest.approx(0.0, abs=1e-20)


def test_normalized_stress_has_unit_weighting():
    g0 = _pen(np.diag([4.0, 1.0]))
    stress = StressMove(TangentMove(SPOT_VOL, [0.5, 0.0]), normalize=True)
    # normalized loading has unit g0-length pairing with its own direction
    assert gap_penalty_value([stress], g0, stress.direction) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ValidationError):
        gap_penalty_value([StressMove(TangentMove(SPOT_VOL, [0.0, 0.0]), normalize=True)], g0, stress.direction)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_gap_penalty_identity(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2))
    g0 = _pen(a @ a.T + 0.5 * np.eye(2))
    stresses = [StressMove(TangentMove(SPOT_VOL, rng.normal(size=2)), rng.uniform(0, 2), bool(rng.integers(2)))
                for _ in range(int(rng.integers(1, 5)))]
    move = TangentMove(SPOT_VOL, rng.normal(size=2))
    lhs = gap_penalty(stresses, g0).value(move)
    rhs = gap_penalty_value(stresses, g0, move)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_sensitivity_penalty_examples():
    assert np.all(sensitivity_penalty(SensitivityBlock(np.zeros((1, 2)), np.eye(1)), SPOT_VOL).matrix == 0)
    q = np.array([[0.6, 0.8]])
    g = sensitivity_penalty(SensitivityBlock(q, np.eye(1)), SPOT_VOL)
    assert sorted(np.round(np.linalg.eigvalsh(g.matrix), 12).tolist()) == [0.0, 1.0]
    with pytest.raises(NotPositiveDefiniteError):
        SensitivityBlock(q, -np.eye(1))


def test_sensitivity_penalty_rank_matches_svd():
    from curvedgreeks.geometry import Chart

    chart4 = Chart("four", ("a", "b", "c", "d"))
    rng = np.random.default_rng(1)
    j = rng.normal(size=(3, 4))
    w = np.diag([1.0, 2.0, 0.0])
    g = sensitivity_penalty(SensitivityBlock(j, w), chart4)
    half = np.sqrt(w) @ j
    s = np.linalg.svd(half, compute_uv=False)
    expected_rank = int(np.sum(s > 1e-10 * s[0]))
    eig = np.linalg.eigvalsh(g.matrix)
    assert int(np.sum(eig > 1e-10 * eig[-1])) == expected_rank == 2


def test_combine_penalties():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    ga, gb = _pen(a @ a.T), _pen(b @ b.T)
    assert np.array_equal(combine_penalties([(1.0, ga)]).matrix, ga.matrix)
    assert np.array_equal(combine_penalties([(1.0, ga), (0.0, gb)]).matrix, ga.matrix)
    c = combine_penalties([(0.7, ga), (2.5, gb)])
    assert np.linalg.eigvalsh(c.matrix)[0] >= -1e-10 * np.linalg.norm(c.matrix)
    doubled = combine_penalties([(1.4, ga), (2.5, gb)]).matrix - c.matrix
    np.testing.assert_allclose(doubled, 0.7 * ga.matrix, rtol=1e-12, atol=1e-15)
    with pytest.raises(ValidationError):
        combine_penalties([(-1.0, ga)])


def test_time_buckets_and_matching_ratio():
    w = time_bucket_weights([0.0, 0.5, 1.0, 3.0], [0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    assert w.tolist() == [1.0, 1.0, 2.0, 3.0]
    with pytest.raises(ValidationError):
        time_bucket_weights([-1.0], [0.0], [1.0])
    ref = _pen(np.diag([2.0, 1.0]))
    other = _pen(np.diag([0.5, 4.0]))
    move = TangentMove(SPOT_VOL, [1.0, 0.0])
    assert matching_ratio(ref, other, move) == 4.0


def test_load_stress_file(tmp_path):
    path = tmp_path / "stress.csv"
    path.write_text("label,S,sigma,weight,normalize\nup,0.02,0.003,1,0\ncrash,-0.05,0.02,2,true\n")
    stresses = load_stress_file(path, SPOT_VOL)
    assert [s.label for s in stresses] == ["up", "crash"]
    assert stresses[1].normalize and stresses[1].weight == 2.0
    bad = tmp_path / "bad.csv"
    bad.write_text("label,S,weight\nup,0.02,1\n")
    with pytest.raises(ValidationError, match="sigma"):
        load_stress_file(bad, SPOT_VOL)
