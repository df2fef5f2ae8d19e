import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curvedgreeks.calibration import (
    CalibrationInstrument,
    build_calibration_system,
    calibrate_connection,
    fit_empirical_target,
    matched_hessians,
    solve_ridge,
    solve_two_instrument,
)
from curvedgreeks.errors import SingularDesignError, ValidationError
from curvedgreeks.geometry import SPOT_VOL, Connection, Gradient, QuadraticForm, TangentMove, covariant_hessian


def _ins(grad, base, target, weight=1.0):
    return CalibrationInstrument(Gradient(SPOT_VOL, grad), QuadraticForm(SPOT_VOL, base), QuadraticForm(SPOT_VOL, target), weight)


def _sym(rng):
    a = rng.normal(size=(2, 2))
    return 0.5 * (a + a.T)


def test_system_examples():
    base = np.eye(2)
    design, rhs = build_calibration_system([_ins([0.4, 0.1], base, base)], ("S", "S"))
    assert rhs.tolist() == [0.0]
    design, _ = build_calibration_system([_ins([1, 0], base, base), _ins([0, 1], base, base)], (0, 1))
    assert np.array_equal(design, np.eye(2))


def test_two_instrument_closed_form():
    assert solve_two_instrument(np.eye(2), [0.3, -0.2]) == (0.3, -0.2)
    assert solve_two_instrument(np.eye(2), [0.0, 0.0]) == (0.0, 0.0)
    assert solve_two_instrument([[2, 1], [1, 1]], [1, 0]) == pytest.approx((1.0, -1.0), abs=1e-15)
    with pytest.raises(SingularDesignError):
        solve_two_instrument([[1, 2], [2, 4]], [1, 0])


def test_ridge_zero_rhs_gives_zero():
    sol = solve_ridge(np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.2]]), np.zeros(3), eta=0.1)
    assert np.all(sol.u == 0) and sol.residual == 0


def test_ridge_large_eta_shrinks_to_zero():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(4, 2))
    b = rng.normal(size=4)
    eta = 1e12 * np.linalg.norm(g.T @ g)
    sol = solve_ridge(g, b, eta=eta)
    assert np.linalg.norm(sol.u) < 1e-6 * np.linalg.norm(g.T @ b) / np.linalg.norm(g.T @ g)


def test_square_consistent_system_matches_direct_solve():
    g = np.array([[1.0, 0.3], [0.2, 2.0]])
    b = np.array([0.5, -1.0])
    sol = solve_ridge(g, b)
    np.testing.assert_allclose(sol.u, np.linalg.solve(g, b), rtol=1e-10)
    assert sol.residual < 1e-14 and sol.min_residual < 1e-14
    assert sol.rank == 2


def test_ridge_rejects_all_zero_weights():
    with pytest.raises(ValidationError):
        solve_ridge(np.eye(2), [1.0, 1.0], weights=[0.0, 0.0])


def test_ridge_residual_decreases_as_eta_decreases():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(6, 2))
    b = rng.normal(size=6)
    res = [solve_ridge(g, b, eta=eta).residual for eta in (10.0, 1.0, 0.1, 0.01, 0.0)]
    assert all(a >= b - 1e-14 for a, b in zip(res, res[1:]))


@settings(max_examples=50)
@given(arrays(float, (5, 2), elements=st.floats(-3, 3)), arrays(float, (5,), elements=st.floats(-3, 3)),
       st.floats(0.01, 10.0), st.permutations(range(5)))
def test_ridge_solution_independent_of_instrument_order(g, b, eta, perm):
    perm = list(perm)
    a = solve_ridge(g, b, eta=eta).u
    p = solve_ridge(g[perm], b[perm], eta=eta).u
    assert np.max(np.abs(a - p)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_targets_equal_baselines_give_zero_connection():
    rng = np.random.default_rng(2)
    ins = []
    for _ in range(3):
        h = _sym(rng)
        ins.append(_ins(rng.normal(size=2), h, h))
    res = calibrate_connection(ins)
    assert np.all(res.connection.coeffs == 0)


def test_two_instruments_match_targets_exactly():
    rng = np.random.default_rng(3)
    ins = [_ins([0.5, 0.2], _sym(rng), _sym(rng)), _ins([-0.3, 0.8], _sym(rng), _sym(rng))]
    res = calibrate_connection(ins)
    for got, i in zip(matched_hessians(ins, res.connection), ins):
        np.testing.assert_allclose(got.matrix, i.target_hessian.matrix, rtol=1e-10, atol=1e-12)
    assert all(v < 1e-12 for v in res.min_residuals.values())


def test_rank_deficient_design_reports_positive_min_residual():
    rng = np.random.default_rng(4)
    ins = [_ins([1.0, 2.0], _sym(rng), _sym(rng)), _ins([2.0, 4.0], _sym(rng), _sym(rng))]
    res = calibrate_connection(ins)
    assert res.rank == 1
    assert max(res.min_residuals.values()) > 0
    assert res.condition > 1e12


def test_requested_pairs_only():
    rng = np.random.default_rng(5)
    ins = [_ins([0.5, 0.2], _sym(rng), _sym(rng)), _ins([-0.3, 0.8], _sym(rng), _sym(rng))]
    res = calibrate_connection(ins, pairs=[("S", "sigma")])
    c = res.connection.coeffs
    assert c[:, 0, 0].tolist() == [0.0, 0.0] and c[:, 1, 1].tolist() == [0.0, 0.0]
    assert np.any(c[:, 0, 1] != 0)
    assert set(res.residuals) == {(0, 1)}


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_within_span(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    ins = [_ins(rng.normal(size=2), _sym(rng), _sym(rng), rng.uniform(0.1, 2.0)) for _ in range(n)]
    # make every target attainable: H* = H - C.V for a hidden connection
    hidden = rng.normal(size=(2, 2, 2))
    hidden = Connection(SPOT_VOL, 0.5 * (hidden + hidden.transpose(0, 2, 1)))
    ins = [_ins(i.gradient.values, i.baseline_hessian.matrix,
                covariant_hessian(i.baseline_hessian, hidden, i.gradient).matrix, i.weight) for i in ins]
    res = calibrate_connection(ins)
    if res.condition > 1e8:
        return
    for got, i in zip(matched_hessians(ins, res.connection), ins):
        target = i.target_hessian.matrix
        assert np.all(np.abs(got.matrix - target) <= 1e-8 * (1 + np.abs(target)))


def test_neutral_instrument_is_inert():
    rng = np.random.default_rng(6)
    ins = [_ins([0.5, 0.2], _sym(rng), _sym(rng)), _ins([-0.3, 0.8], _sym(rng), _sym(rng))]
    conn = calibrate_connection(ins).connection
    h = QuadraticForm(SPOT_VOL, _sym(rng))
    assert np.array_equal(covariant_hessian(h, conn, Gradient(SPOT_VOL, [0.0, 0.0])).matrix, h.matrix)


# ---------------------------------------------------------------- empirical target

def _moves(rng, n=40):
    return [TangentMove(SPOT_VOL, rng.normal(scale=[0.01, 0.5])) for _ in range(n)]


def test_empirical_fit_recovers_known_form():
    rng = np.random.default_rng(7)
    h = np.array([[120.0, -3.0], [-3.0, 0.02]])
    moves = _moves(rng)
    y = [0.5 * m.delta @ h @ m.delta for m in moves]
    fit = fit_empirical_target(moves, y)
    np.testing.assert_allclose(fit.target.matrix, h, rtol=1e-8)
    assert abs(fit.intercept) < 1e-12


def test_empirical_fit_zero_and_constant_residuals():
    rng = np.random.default_rng(8)
    moves = _moves(rng)
    assert np.all(fit_empirical_target(moves, np.zeros(len(moves))).target.matrix == 0)
    fit = fit_empirical_target(moves, np.full(len(moves), 0.25))
    assert np.max(np.abs(fit.target.matrix)) < 1e-9
    assert fit.intercept == pytest.approx(0.25, rel=1e-12)


def test_empirical_fit_rejects_degenerate_design():
    moves = [TangentMove(SPOT_VOL, [0.01 * k, 0.0]) for k in range(1, 10)]
    with pytest.raises(SingularDesignError):
        fit_empirical_target(moves, np.ones(9))
