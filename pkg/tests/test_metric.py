import numpy as np
import pytest

from curvedgreeks.errors import ValidationError
from curvedgreeks.geometry import SPOT_VOL, QuadraticForm, TangentMove
from curvedgreeks.liquidity import levi_civita_coefficients
from curvedgreeks.metric import (
    GridField,
    anchor_scale,
    load_grid_field,
    metric_pde_residual,
    metrizability_check,
    reconstruct_metric,
    save_grid_field,
    spd_project,
)

AXES = (np.linspace(1.0, 1.2, 9), np.linspace(-0.1, 0.1, 9))
G0 = np.array([[2.0, 0.3], [0.3, 1.0]])


def _zero_conn(axes=AXES):
    return GridField.sample(SPOT_VOL, axes, lambda x: np.zeros((2, 2, 2)))


def _exp_metric(x):
    return np.diag([np.exp(x[1]), 1.0])


def _exp_conn(x):
    derivs = np.array([np.zeros((2, 2)), np.diag([np.exp(x[1]), 0.0])])
    return levi_civita_coefficients(_exp_metric(x), derivs)


def test_constant_metric_with_zero_connection_has_zero_residual():
    g = GridField.sample(SPOT_VOL, AXES, lambda x: G0)
    assert np.max(metric_pde_residual(g, _zero_conn())) < 1e-12


def test_residual_converges_at_second_order():
    res = []
    for n in (21, 41):
        axes = (np.linspace(1.0, 1.4, n), np.linspace(-0.2, 0.2, n))
        res.append(float(np.max(metric_pde_residual(GridField.sample(SPOT_VOL, axes, _exp_metric),
                                                    GridField.sample(SPOT_VOL, axes, _exp_conn)))))
    assert np.log2(res[0] / res[1]) == pytest.approx(2.0, abs=0.2)


def test_zero_connection_reconstructs_constant_anchor():
    rec = reconstruct_metric(_zero_conn(), QuadraticForm(SPOT_VOL, G0))
    np.testing.assert_allclose(rec.metric.values, np.broadcast_to(G0, rec.metric.values.shape), atol=1e-12)
    assert rec.residual_rms < 1e-12


def test_reconstruction_is_linear_in_the_anchor():
    conn = GridField.sample(SPOT_VOL, AXES, _exp_conn)
    a = reconstruct_metric(conn, QuadraticForm(SPOT_VOL, G0)).metric.values
    b = reconstruct_metric(conn, QuadraticForm(SPOT_VOL, 3.0 * G0)).metric.values
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-10, atol=1e-12)


def test_reconstruction_recovers_levi_civita_metric():
    conn = GridField.sample(SPOT_VOL, AXES, _exp_conn)
    idx = (4, 4)
    rec = reconstruct_metric(conn, QuadraticForm(SPOT_VOL, _exp_metric(conn.points()[idx])), idx)
    exact = GridField.sample(SPOT_VOL, AXES, _exp_metric).values
    np.testing.assert_allclose(rec.metric.values, exact, rtol=1e-3, atol=1e-4)


def test_metrizability_verdicts():
    anchor = QuadraticForm(SPOT_VOL, np.eye(2))
    axes = (np.linspace(0.5, 1.5, 11), np.linspace(-0.5, 0.5, 11))
    good = metrizability_check(SPOT_VOL, _exp_conn, axes, anchor)
    assert good.metrizable

    def curved(x):
        # C^x_xy = C^x_yx = x admits no compatible metric
        c = np.zeros((2, 2, 2))
        c[0, 0, 1] = c[0, 1, 0] = x[0]
        return c

    bad = metrizability_check(SPOT_VOL, curved, axes, anchor)
    assert not bad.metrizable
    assert bad.fine_residual > 0.1 * bad.coarse_residual


def test_reconstruction_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        reconstruct_metric(_zero_conn(), QuadraticForm(SPOT_VOL, -np.eye(2)))
    small = (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValidationError):
        reconstruct_metric(_zero_conn(small), QuadraticForm(SPOT_VOL, np.eye(2)))
    with pytest.raises(ValidationError, match="uniform"):
        GridField(SPOT_VOL, (np.array([0.0, 1.0, 3.0]), np.array([0.0, 1.0])), np.zeros((3, 2, 2, 2)))


def test_spd_project():
    spd = QuadraticForm(SPOT_VOL, G0)
    assert np.array_equal(spd_project(spd).matrix, G0)
    out = spd_project(QuadraticForm(SPOT_VOL, np.diag([1.0, -1.0])), eps=1e-6)
    np.testing.assert_allclose(out.matrix, np.diag([1.0, 1e-6]), atol=1e-15)
    assert np.array_equal(spd_project(QuadraticForm(SPOT_VOL, np.zeros((2, 2))), eps=1e-6).matrix, 1e-6 * np.eye(2))
    assert np.array_equal(spd_project(out, eps=1e-6).matrix, out.matrix)


def test_anchor_scale():
    g = QuadraticForm(SPOT_VOL, np.eye(2))
    move = TangentMove(SPOT_VOL, [0.5, 0.0])
    scaled, alpha = anchor_scale(g, move, 1.0)
    assert alpha == 4.0
    assert anchor_scale(scaled, move, 1.0)[1] == 1.0
    x = np.array([1.1, 0.05])
    derivs = np.array([np.zeros((2, 2)), np.diag([np.exp(x[1]), 0.0])])
    assert np.allclose(levi_civita_coefficients(alpha * _exp_metric(x), alpha * derivs), _exp_conn(x), rtol=1e-14)
    field = GridField.sample(SPOT_VOL, AXES, _exp_metric)
    sf, a = anchor_scale(field, move, 1.0, index=(0, 0))
    assert np.array_equal(sf.values, a * field.values)
    with pytest.raises(ValidationError):
        anchor_scale(field, move, 1.0)


def test_grid_field_round_trip(tmp_path):
    conn = GridField.sample(SPOT_VOL, AXES, _exp_conn)
    save_grid_field(conn, tmp_path / "c.csv")
    back = load_grid_field(tmp_path / "c.csv", SPOT_VOL)
    assert np.array_equal(back.values, conn.values)
    metric = GridField.sample(SPOT_VOL, AXES, _exp_metric)
    save_grid_field(metric, tmp_path / "g.csv")
    assert np.array_equal(load_grid_field(tmp_path / "g.csv", SPOT_VOL).values, metric.values)
    (tmp_path / "bad.csv").write_text("x,y,g_SS\n")
    with pytest.raises(ValidationError):
        load_grid_field(tmp_path / "bad.csv", SPOT_VOL)
