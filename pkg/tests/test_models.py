"""Grid, kernel, and risk-model unit tests."""

import numpy as np
import pytest

from mrhedge import (
    ConstantModel,
    DerivativeKernel,
    OrnsteinUhlenbeckModel,
    SimConfig,
    TimeGrid,
    apply_kernel,
)


def test_grid_nodes_and_dt():
    grid = TimeGrid(2.0, 8)
    assert grid.dt == 0.25
    assert grid.nodes.shape == (9,)
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == 2.0
    assert grid.index_of(0.5) == 2
    with pytest.raises(ValueError):
        grid.index_of(0.37)


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        SimConfig(path_count=0, master_seed=1)
    with pytest.raises(ValueError):
        SimConfig(path_count=7, master_seed=1, antithetic=True)


def test_grid_nodes_read_only():
    grid = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        grid.nodes[0] = 5.0


def test_constant_model_theta_and_kernel():
    model = ConstantModel(np.array([0.3]))
    grid = TimeGrid(1.0, 4)
    w = np.zeros((5, 1))
    th = model.evaluate_theta(0.5, w, grid)
    assert th.shape == (1,)
    assert th[0] == 0.3
    assert model.kernel_is_empty
    ker = model.derivative_kernel(0.5, grid)
    assert ker.atoms == ()
    assert not np.any(ker.density)
    assert model.variation_bound(1.0) == 0.0


def test_ou_theta_matches_closed_form():
    """The lag-kernel evaluation must reproduce the direct OU recursion."""
    model = OrnsteinUhlenbeckModel(alpha=0.1, mean_reversion=1.5, vol=0.4, u0=0.2)
    grid = TimeGrid(1.0, 128)
    rng = np.random.default_rng(7)
    d_w = rng.standard_normal((grid.steps, 1)) * np.sqrt(grid.dt)
    w = np.concatenate([np.zeros((1, 1)), np.cumsum(d_w, axis=0)])

    beta, v = 1.5, 0.4
    c = model.drift_constant
    # Explicit evaluation of U(t) = e^{-bt}U0 + c(1-e^{-bt}) + v[w(t) - b int e^{b(u-t)}w(u)du]
    for i in (0, 1, 17, 64, 128):
        t = grid.nodes[i]
        u = grid.nodes[:i]
        integral = np.sum(np.exp(beta * (u - t)) * w[:i, 0]) * grid.dt
        expected = (
            np.exp(-beta * t) * 0.2
            + c * (1.0 - np.exp(-beta * t))
            + v * (w[i, 0] - beta * integral)
        )
        got = model.evaluate_theta(t, w, grid)[0]
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_ou_drift_constant_modes():
    adjusted = OrnsteinUhlenbeckModel(alpha=0.2, mean_reversion=2.0, vol=0.3, u0=0.0)
    std = OrnsteinUhlenbeckModel(
        alpha=0.2, mean_reversion=2.0, vol=0.3, u0=0.0, drift_constant_mode="standard"
    )
    assert adjusted.drift_constant == pytest.approx(0.2 / 2.0 + 0.09 / 4.0)
    assert std.drift_constant == pytest.approx(0.1)
    with pytest.raises(ValueError):
        OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=0.2, u0=0.0,
                               drift_constant_mode="bogus")


def test_ou_parameter_validation():
    with pytest.raises(ValueError):
        OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=0.0, vol=0.2, u0=0.0)
    with pytest.raises(ValueError):
        OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=-0.1, u0=0.0)


def test_ou_variation_bound():
    model = OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=0.2, u0=0.1)
    assert model.variation_bound(1.0) == pytest.approx(0.2 * (2.0 - np.exp(-1.0)))
    # kernel total variation on the grid stays below the analytic bound
    grid = TimeGrid(1.0, 64)
    for i in (0, 13, 64):
        ker = model.derivative_kernel(grid.nodes[i], grid)
        assert ker.total_variation() <= model.variation_bound(1.0) + 1e-12


def test_ou_kernel_pairing_matches_theta_perturbation():
    """<kernel, dw> must equal the first-order response of theta to a bump."""
    model = OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=0.2, u0=0.1)
    grid = TimeGrid(1.0, 32)
    rng = np.random.default_rng(11)
    w = np.concatenate(
        [np.zeros((1, 1)), np.cumsum(rng.standard_normal((32, 1)) * np.sqrt(grid.dt), axis=0)]
    )
    bump = np.concatenate([np.zeros((1, 1)), np.cumsum(rng.standard_normal((32, 1)), axis=0)]) * 0.01

    i = 20
    t = grid.nodes[i]
    ker = model.derivative_kernel(t, grid)
    paired = apply_kernel(ker, bump)
    eps = 1e-6
    up = model.evaluate_theta(t, w + eps * bump, grid)[0]
    dn = model.evaluate_theta(t, w - eps * bump, grid)[0]
    fd = (up - dn) / (2 * eps)
    # theta is linear in the path, so the match is to rounding
    assert paired[0] == pytest.approx(fd, rel=1e-9, abs=1e-9)


def test_kernel_rejects_short_direction_path():
    grid = TimeGrid(1.0, 8)
    model = OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=0.2, u0=0.1)
    ker = model.derivative_kernel(0.5, grid)
    with pytest.raises(ValueError):
        ker.apply(np.zeros((3, 1)))  # needs nodes through index 4


def test_theta_prefix_ignores_future_nodes():
    """Values after the evaluation node must not leak into theta."""
    model = OrnsteinUhlenbeckModel(alpha=0.0, mean_reversion=1.0, vol=0.2, u0=0.1)
    grid = TimeGrid(1.0, 16)
    rng = np.random.default_rng(3)
    w = np.concatenate(
        [np.zeros((1, 1)), np.cumsum(rng.standard_normal((16, 1)) * 0.25, axis=0)]
    )
    w_mut = w.copy()
    w_mut[9:] += 100.0  # corrupt the future
    i = 8
    a = model.evaluate_theta(grid.nodes[i], w, grid)
    b = model.evaluate_theta(grid.nodes[i], w_mut, grid)
    assert np.array_equal(a, b)
