import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from entropy_sgd.errors import ArgumentError, DivergenceError
from entropy_sgd.objective import ConstantObjective, QuadraticObjective
from .oracles import ar1_weighted_mean_se
from entropy_sgd.sampler import (
    SgldConfig,
    SgldState,
    estimate_mu,
    langevin_update,
    sgld_optimize,
    sgld_step,
    sgld_step_size,
)


def _run_steps(obj, anchor, cfg, k, seed=0, start=None):
    state = SgldState.reset(anchor)
    if start is not None:
        state.x_prime = np.asarray(start, dtype=float).copy()
    rng = np.random.default_rng(seed)
    trail = []
    for _ in range(k):
        sgld_step(state, anchor, obj, cfg, 1, rng)
        trail.append(state.x_prime.copy())
    return state, trail


def test_no_coupling_no_noise_is_plain_gradient_descent():
    A = np.diag([1.0, 3.0])
    f = QuadraticObjective(A)
    anchor = np.array([1.0, -2.0])
    cfg = SgldConfig(eta_prime=0.05, epsilon=0.0, alpha=1.0, L=1, gamma=0.0)
    _, trail = _run_steps(f, anchor, cfg, 25)
    x = anchor.copy()
    for xp in trail:
        x = x - 0.05 * (A @ x)
        assert np.array_equal(xp, x)


def test_flat_energy_relaxes_geometrically():
    anchor = np.array([0.5, -1.0, 2.0])
    start = anchor + np.array([1.0, 2.0, -3.0])
    cfg = SgldConfig(eta_prime=0.1, epsilon=0.0, gamma=2.0)
    _, trail = _run_steps(ConstantObjective(3), anchor, cfg, 30, start=start)
    for k, xp in enumerate(trail, start=1):
        assert np.allclose(xp - anchor, (1 - 0.1 * 2.0) ** k * (start - anchor), rtol=1e-12, atol=1e-15)


def test_single_step_full_weight_average_is_the_iterate():
    f = QuadraticObjective(np.eye(2))
    cfg = SgldConfig(eta_prime=0.1, epsilon=1.0, alpha=1.0, L=1, gamma=1.0)
    anchor = np.array([1.0, 2.0])
    mu, _ = estimate_mu(anchor, f, cfg, 1, np.random.default_rng(3))
    state, _ = _run_steps(f, anchor, cfg, 1, seed=3)
    assert np.array_equal(mu, state.x_prime)


@given(st.floats(0.05, 1.0), st.integers(1, 40), st.integers(0, 1000))
def test_exponential_average_closed_form(alpha, L, seed):
    f = QuadraticObjective(np.diag([0.5, 2.0]))
    anchor = np.array([1.0, -1.0])
    cfg = SgldConfig(eta_prime=0.05, epsilon=0.3, alpha=alpha, L=L, gamma=0.7)
    state, trail = _run_steps(f, anchor, cfg, L, seed=seed)
    q = 1.0 - alpha
    direct = q ** L * anchor + sum(alpha * q ** (L - k) * xk for k, xk in enumerate(trail, start=1))
    assert np.allclose(state.mu, direct, rtol=1e-12, atol=1e-14)


def test_mu_is_bit_reproducible():
    f = QuadraticObjective(np.diag([1.0, 4.0]), noise_std=0.2)
    cfg = SgldConfig(L=15, gamma=0.5, epsilon=0.1)
    a = estimate_mu(np.ones(2), f, cfg, 1, np.random.default_rng(5))[0]
    b = estimate_mu(np.ones(2), f, cfg, 1, np.random.default_rng(5))[0]
    assert np.array_equal(a, b)


def test_flat_energy_mean_stays_at_anchor():
    anchor = np.array([0.3, -0.7])
    cfg = SgldConfig(L=50, gamma=1.0, epsilon=0.0)
    mu, diag = estimate_mu(anchor, ConstantObjective(2), cfg, 1, np.random.default_rng(0))
    assert np.array_equal(mu, anchor) and diag["mu_drift"] == 0.0
    # with noise x' is an AR(1) around the anchor and mu averages it: entropy gradient -> 0
    eta, gamma, eps, alpha = 0.01, 1.0, 1.0, 1e-3
    cfg = SgldConfig(L=20_000, gamma=gamma, epsilon=eps, eta_prime=eta, alpha=alpha)
    mu, _ = estimate_mu(anchor, ConstantObjective(2), cfg, 1, np.random.default_rng(0))
    rho = 1 - eta * gamma
    se = ar1_weighted_mean_se(alpha, rho, eta * eps ** 2 / (1 - rho ** 2), cfg.L)
    assert np.all(np.abs(mu - anchor) < 4 * se)


def test_mu_approaches_modified_gibbs_mean_as_noise_shrinks():
    a, gamma = 2.0, 1.5
    f = QuadraticObjective([[a]])
    anchor = np.array([1.0])
    target = gamma * anchor / (a + gamma)
    errs = []
    for L, eps in ((20, 0.3), (200, 0.1), (2000, 0.03)):
        cfg = SgldConfig(eta_prime=0.05, epsilon=eps, alpha=0.05, L=L, gamma=gamma)
        mu, _ = estimate_mu(anchor, f, cfg, 1, np.random.default_rng(1))
        errs.append(abs(float(mu[0] - target[0])))
    assert errs[2] < errs[0] and errs[2] < 0.02


def test_strong_coupling_keeps_iterate_near_anchor():
    A = np.diag([1.0, 5.0])
    f = QuadraticObjective(A)
    anchor = np.array([2.0, -1.0])
    for gamma in (10.0, 100.0, 1000.0):
        cfg = SgldConfig(eta_prime=0.5 / (5.0 + gamma), epsilon=0.0, gamma=gamma, L=200)
        state, trail = _run_steps(f, anchor, cfg, 200)
        bound = np.linalg.norm(A @ anchor) / gamma
        assert max(np.linalg.norm(xp - anchor) for xp in trail) <= bound + 1e-12


def test_noise_scales_with_square_root_of_step():
    # f = 0 and gamma = 0: each step adds sqrt(eta') eps z and nothing else
    n = 200_000
    anchor = np.zeros(n)
    stds = []
    for eta in (0.01, 0.02):
        state, _ = _run_steps(ConstantObjective(n), anchor, SgldConfig(eta_prime=eta, epsilon=0.5, gamma=0.0), 1)
        stds.append(np.std(state.x_prime))
    assert stds[1] / stds[0] == pytest.approx(np.sqrt(2.0), rel=0.01)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_step_index():
    f = QuadraticObjective([[1e300]])
    cfg = SgldConfig(eta_prime=1.0, epsilon=0.0, gamma=0.0)
    state = SgldState.reset([1e10])
    with pytest.raises(DivergenceError) as info:
        sgld_step(state, np.array([1e10]), f, cfg, 1, np.random.default_rng(0))
    assert info.value.step == 1


def test_config_validation():
    with pytest.raises(ArgumentError):
        SgldConfig(alpha=0.0)
    with pytest.raises(ArgumentError):
        SgldConfig(L=0)


# -- standalone SGLD ---------------------------------------------------------


def test_step_sizes_strictly_decrease():
    steps = [sgld_step_size(0.1, 0.6, t) for t in range(100)]
    assert all(s > 0 for s in steps)
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert sgld_step_size(0.1, 0.0, 50) == 0.1


def test_noiseless_constant_schedule_is_gradient_descent():
    A = np.diag([1.0, 2.0])
    f = QuadraticObjective(A)
    x0 = np.array([1.0, 1.0])
    traj = sgld_optimize(f, x0, eta0=0.1, b=0.0, epochs=20, m=1, rng=np.random.default_rng(0), epsilon=0.0)
    x = x0.copy()
    for _ in range(20):
        x = x - 0.5 * 0.1 * (A @ x)
    assert np.allclose(traj.x, x, rtol=1e-14, atol=0)
    assert traj.step_sizes == [0.1] * 20


def test_langevin_noise_scale():
    z = np.random.default_rng(0).standard_normal(4)
    out = langevin_update(np.zeros(4), np.zeros(4), 0.5, 2.0, np.random.default_rng(0), n_data=8)
    assert np.allclose(out, np.sqrt(0.5 / 8) * 2.0 * z)


def test_gaussian_posterior_kolmogorov_smirnov():
    # with f = a|x|^2 / 2 and one virtual sample the chain targets N(0, 1/a) per coordinate;
    # coordinates are independent chains, so the final iterate is an i.i.d. sample
    a, dim = 2.0, 3000
    f = QuadraticObjective(a * np.eye(dim))
    traj = sgld_optimize(
        f, np.full(dim, 3.0), eta0=0.02, b=0.1, epochs=1, m=1,
        rng=np.random.default_rng(17), steps_per_epoch=4000,
    )
    p = stats.kstest(traj.x, stats.norm(scale=1 / np.sqrt(a)).cdf).pvalue
    assert p > 0.01


def test_decay_exponent_domain():
    f = QuadraticObjective([[1.0]])
    with pytest.raises(ArgumentError):
        sgld_optimize(f, [0.0], 0.1, 1.5, 1, 1, np.random.default_rng(0))


def test_inner_momentum_settles_at_modified_gibbs_mean():
    # noiseless heavy-ball iteration on f + gamma/2 |anchor - x'|^2 has fixed point gamma anchor / (a + gamma)
    a, gamma = np.array([1.0, 4.0]), 2.0
    anchor = np.array([1.0, -3.0])
    cfg = SgldConfig(eta_prime=0.05, epsilon=0.0, alpha=0.5, L=400, gamma=gamma, momentum=0.9)
    mu, _ = estimate_mu(anchor, QuadraticObjective(np.diag(a)), cfg, 1, np.random.default_rng(0))
    assert np.allclose(mu, gamma * anchor / (a + gamma), rtol=0, atol=1e-10)


def test_inner_momentum_validation():
    with pytest.raises(ArgumentError):
        SgldConfig(momentum=1.0)
