import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_sgd.errors import ArgumentError, GridCoverageError, NumericError
from entropy_sgd.net import MlpObjective, MlpSpec, init_params
from entropy_sgd.objective import ConstantObjective, Dataset, Landscape1D, QuadraticObjective
from entropy_sgd.oracle import (
    GibbsSpec,
    Grid,
    classical_entropy_quadrature,
    default_grid,
    exact_mu,
    gibbs_log_density,
    local_entropy_grad_quadrature,
    local_entropy_quadratic_closed_form,
    local_entropy_quadrature,
    local_entropy_quadrature_2d,
    modified_gibbs_log_density,
    modified_gibbs_mean,
    saddle_point_grad,
    simpson_weights,
    smoothing_family,
)
from entropy_sgd.sampler import SgldConfig, estimate_mu

from .oracles import classical_entropy_adaptive, gaussian_local_entropy, local_entropy_adaptive

HALF_LOG_2PI = 0.9189385332046727        # 1/2 log(2 pi): F for f = 0, gamma = 1
HALF_LOG_PI = 0.5723649429247001         # 1/2 log(pi): F for f = t^2/2, gamma = 1, x = 0
GAUSSIAN_ENTROPY = 1.4189385332046727    # 1/2 log(2 pi e)

# -- known values --------------------------------------------------------------


def test_flat_energy_value():
    assert abs(HALF_LOG_2PI - 0.5 * math.log(2 * math.pi)) < 1e-15
    assert abs(local_entropy_quadrature(ConstantObjective(1), GibbsSpec(1.0, 0.3)) - HALF_LOG_2PI) < 1e-12
    for gamma in (0.1, 10.0):
        value = local_entropy_quadrature(ConstantObjective(1), GibbsSpec(gamma, -1.0))
        assert abs(value - 0.5 * math.log(2 * math.pi / gamma)) < 1e-12


def test_unit_quadratic_value():
    f = QuadraticObjective([[1.0]])
    assert abs(local_entropy_quadrature(f, GibbsSpec(1.0, 0.0)) - HALF_LOG_PI) < 1e-12


def test_gradient_at_unit_quadratic():
    # a = gamma = 1, x = 2: <x'> = 1, so dF/dx = -(2 - 1)
    f = QuadraticObjective([[1.0]])
    assert local_entropy_grad_quadrature(f, GibbsSpec(1.0, 2.0)) == pytest.approx(-1.0, abs=1e-10)
    assert modified_gibbs_mean(f, GibbsSpec(1.0, 2.0)) == pytest.approx(1.0, abs=1e-10)


def test_gaussian_classical_entropy():
    assert abs(classical_entropy_quadrature(ConstantObjective(1), GibbsSpec(1.0)) - GAUSSIAN_ENTROPY) < 1e-10


# plateau (wide, shallow), wide well, sharp deep well; values from the quadrature, cross-checked
# against classical_entropy_adaptive (scipy quad) to 1e-14
THREE_REGION = ((-6.0, 3.0, 0.1), (0.0, 1.0, 0.6), (4.0, 0.05, 1.0))
THREE_REGION_S = {-6.0: 1.4144310457710414, 0.0: 1.3124611827301154, 4.0: 1.3730497600303817}


def test_three_region_entropy_ordering():
    # at unit scope the differential entropy is largest on the plateau, while -F is smallest in the wide well
    f = Landscape1D.custom(THREE_REGION)
    S = {c: classical_entropy_quadrature(f, GibbsSpec(1.0, c)) for c in THREE_REGION_S}
    for c, value in THREE_REGION_S.items():
        assert abs(S[c] - value) < 1e-10
        assert abs(S[c] - classical_entropy_adaptive(f.energy, c, 1.0)) < 1e-10
    assert S[-6.0] > S[4.0] > S[0.0]
    neg_f = {c: -local_entropy_quadrature(f, GibbsSpec(1.0, c)) for c in THREE_REGION_S}
    assert min(neg_f, key=neg_f.get) == 0.0


def test_classical_entropy_decreases_with_scope():
    f = QuadraticObjective([[2.0]])
    values = [classical_entropy_quadrature(f, GibbsSpec(g, 0.5)) for g in (0.1, 1.0, 10.0)]
    for g, h in zip((0.1, 1.0, 10.0), values):
        assert h == pytest.approx(0.5 * math.log(2 * math.pi * math.e / (2.0 + g)), abs=1e-10)
    assert values[0] > values[1] > values[2]


# -- closed forms --------------------------------------------------------------


@pytest.mark.parametrize("a", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_quadrature_matches_closed_form(a, gamma):
    f = QuadraticObjective([[a]])
    for x in (-1.5, 0.0, 2.0):
        spec = GibbsSpec(gamma, x)
        F, grad, _ = local_entropy_quadratic_closed_form([[a]], None, spec)
        assert abs(local_entropy_quadrature(f, spec) - F) < 1e-8
        assert abs(local_entropy_grad_quadrature(f, spec) - grad[0]) < 1e-8
        assert abs(F - gaussian_local_entropy(a, gamma, x)) < 1e-12


def test_closed_form_with_zero_matrix():
    spec = GibbsSpec(0.5, [1.0, -2.0, 3.0])
    F, grad, mean = local_entropy_quadratic_closed_form(np.zeros((3, 3)), None, spec)
    assert F == pytest.approx(1.5 * math.log(2 * math.pi / 0.5), abs=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-14) and np.allclose(mean, spec.center)


def test_closed_form_rejects_indefinite():
    with pytest.raises(ArgumentError):
        local_entropy_quadratic_closed_form(np.diag([1.0, -3.0]), None, GibbsSpec(1.0, [0.0, 0.0]))


def test_two_dimensional_quadrature_matches_closed_form():
    A, b, gamma = np.diag([0.5, 2.0]), np.array([0.3, -0.1]), 1.5
    center = np.array([0.7, -0.4])
    F, grad, _ = local_entropy_quadratic_closed_form(A, b, GibbsSpec(gamma, center))

    def energy(X, Y):
        return 0.5 * (0.5 * X * X + 2.0 * Y * Y) + 0.3 * X - 0.1 * Y

    grid = Grid(-8.0, 8.0, 1601)
    F2, g2 = local_entropy_quadrature_2d(energy, center, gamma, grid, grid)
    assert abs(F2 - F) < 1e-9 and np.allclose(g2, grad, atol=1e-9)
    # per-axis factorisation: gradient ratio equals a_i / (a_i + gamma) times the raw gradient ratio
    raw = A @ center + b
    assert np.allclose(-grad, gamma * raw / (np.diag(A) + gamma), rtol=1e-12)


def test_stiff_diagonal_gradient_ratio():
    # per axis -dF/dx_i = gamma a_i / (a_i + gamma) x_i: 1/2 along the soft axis, 100/101 along the stiff one
    _, grad, _ = local_entropy_quadratic_closed_form(np.diag([1.0, 100.0]), None, GibbsSpec(1.0, [1.0, 1.0]))
    assert -grad[0] == pytest.approx(0.5, rel=1e-14)
    assert -grad[1] == pytest.approx(100 / 101, rel=1e-14)
    assert grad[0] / grad[1] == pytest.approx(0.5 / (100 / 101), rel=1e-14)


def test_two_dimensional_grid_cap():
    big = Grid(-1.0, 1.0, 4003)
    with pytest.raises(ArgumentError):
        local_entropy_quadrature_2d(lambda X, Y: X * 0, [0, 0], 1.0, big, Grid(-1, 1, 11))


def test_exact_mu_matches_closed_form():
    r = np.random.default_rng(0)
    B = r.standard_normal((4, 4))
    f = QuadraticObjective(B @ B.T, r.standard_normal(4))
    x = r.standard_normal(4)
    mu, _ = exact_mu(x, f, SgldConfig(gamma=0.8))
    _, _, mean = local_entropy_quadratic_closed_form(f.A, f.b, GibbsSpec(0.8, x))
    assert np.allclose(mu, mean, rtol=1e-12, atol=1e-14)


def test_saddle_point_is_exact_on_quadratics():
    r = np.random.default_rng(2)
    B = r.standard_normal((3, 3))
    f = QuadraticObjective(B @ B.T + 0.1 * np.eye(3), r.standard_normal(3))
    x, gamma = r.standard_normal(3), 0.7
    _, grad, _ = local_entropy_quadratic_closed_form(f.A, f.b, GibbsSpec(gamma, x))
    assert np.allclose(saddle_point_grad(f, x, gamma), -grad, rtol=1e-10, atol=1e-13)
    assert np.allclose(saddle_point_grad(f, f.minimizer(), gamma), 0.0, atol=1e-12)


def test_saddle_point_against_long_sgld_on_small_mlp():
    # approximation quality is reported, not bounded
    r = np.random.default_rng(0)
    obj = MlpObjective(MlpSpec((3, 4, 2)), Dataset(r.standard_normal((20, 3)), np.arange(20) % 2, 2))
    x = init_params(obj.spec, np.random.default_rng(1))
    approx = saddle_point_grad(obj, x, 1.0)
    cfg = SgldConfig(eta_prime=0.01, epsilon=1e-3, alpha=1e-3, L=20_000, gamma=1.0)
    mu, _ = estimate_mu(x, obj, cfg, 20, np.random.default_rng(2))
    sampled = x - mu
    deviation = np.linalg.norm(approx - sampled) / np.linalg.norm(sampled)
    cosine = approx @ sampled / (np.linalg.norm(approx) * np.linalg.norm(sampled))
    print(f"saddle-point vs SGLD on {obj.dim} parameters: relative deviation {deviation:.3f}, cosine {cosine:.4f}")
    assert np.isfinite(deviation) and cosine > 0


def test_saddle_point_singular_system():
    f = QuadraticObjective(np.diag([-1.0, 2.0]))
    with pytest.raises(NumericError):
        saddle_point_grad(f, np.ones(2), 1.0)


# -- landscapes ----------------------------------------------------------------


def test_wide_valley_has_more_local_entropy():
    f = Landscape1D.double_well()
    for gamma in (0.1, 0.5, 1.0, 5.0):
        assert local_entropy_quadrature(f, GibbsSpec(gamma, -2.0)) > local_entropy_quadrature(f, GibbsSpec(gamma, 2.0))


def test_even_energy_has_zero_gradient_at_origin():
    f = Landscape1D.custom([(-1.0, 0.5, 1.0), (1.0, 0.5, 1.0)])
    assert abs(local_entropy_grad_quadrature(f, GibbsSpec(0.7, 0.0))) < 1e-12


def test_gradient_matches_finite_difference_of_f():
    f = Landscape1D.double_well()
    h = 1e-4
    for x in (-2.5, -1.0, 0.3, 1.9):
        fd = (local_entropy_quadrature(f, GibbsSpec(1.0, x + h)) - local_entropy_quadrature(f, GibbsSpec(1.0, x - h))) / (2 * h)
        assert abs(fd - local_entropy_grad_quadrature(f, GibbsSpec(1.0, x))) < 1e-8


@pytest.mark.parametrize("x, gamma", [(-2.0, 0.1), (0.0, 1.0), (2.0, 1.0), (1.95, 30.0)])
def test_agrees_with_adaptive_quadrature(x, gamma):
    f = Landscape1D.double_well()
    assert abs(local_entropy_quadrature(f, GibbsSpec(gamma, x)) - local_entropy_adaptive(f.energy, x, gamma)) < 1e-9


def test_smoothing_argmins_move_from_wide_to_sharp():
    f = Landscape1D.double_well()
    table = smoothing_family(f, [0.1, 1e6], Grid(-4.0, 4.0, 161))
    step = 8.0 / 160
    assert abs(table.argmin(0) - f.wide.center) < 0.5
    assert abs(table.argmin(1) - f.sharp.center) <= step


def test_large_scope_limit_is_the_energy():
    # F + f(x) -> 1/2 log(2 pi / gamma) as gamma grows
    f = Landscape1D.double_well()
    gamma = 1e6
    for x in (-2.0, 0.0, 2.0):
        excess = local_entropy_quadrature(f, GibbsSpec(gamma, x)) + f.energy(np.array(x)) - 0.5 * math.log(2 * math.pi / gamma)
        assert abs(excess) < 1e-3


def test_small_scope_flattens_the_landscape():
    f = Landscape1D.double_well()
    xs = np.linspace(-3, 3, 13)
    spreads = []
    for gamma in (3.0, 1.0, 0.3, 0.1, 0.03, 1e-3):
        values = [local_entropy_quadrature(f, GibbsSpec(gamma, x)) for x in xs]
        spreads.append(max(values) - min(values))
    assert all(a > b for a, b in zip(spreads, spreads[1:]))
    assert spreads[-1] < 0.01


def test_translation_shifts_smoothing_argmin():
    f = Landscape1D.double_well()
    grid = np.linspace(-4, 4, 81)
    base = smoothing_family(f, [0.3, 3.0], grid).argmins()
    moved = smoothing_family(f.shifted(0.5), [0.3, 3.0], grid + 0.5).argmins()
    for g in base:
        assert moved[g] == pytest.approx(base[g] + 0.5, abs=1e-12)


# -- densities and grids -------------------------------------------------------


def test_densities_are_normalised():
    f = Landscape1D.double_well()
    grid = Grid(-12.0, 12.0, 48_001)
    w = simpson_weights(grid.points, grid.step)
    assert np.sum(w * np.exp(gibbs_log_density(f, grid.nodes, 2.0, grid))) == pytest.approx(1.0, abs=1e-12)
    spec = GibbsSpec(0.5, 1.0, beta=3.0)
    g = default_grid(f, spec)
    assert np.sum(simpson_weights(g.points, g.step) * np.exp(modified_gibbs_log_density(f, g.nodes, spec, g))) == pytest.approx(1.0, abs=1e-12)


def test_local_entropy_requires_unit_beta():
    with pytest.raises(ArgumentError):
        local_entropy_quadrature(ConstantObjective(1), GibbsSpec(1.0, beta=2.0))
    with pytest.raises(ArgumentError):
        GibbsSpec(1.0, beta=0.0)


def test_narrow_grid_is_rejected():
    spec = GibbsSpec(1.0, 0.0)
    with pytest.raises(GridCoverageError):
        local_entropy_quadrature(ConstantObjective(1), spec, Grid(-3.0, 3.0, 2001))


def test_zero_scope_is_rejected():
    with pytest.raises(ArgumentError):
        local_entropy_quadrature(ConstantObjective(1), GibbsSpec(0.0))


def test_smoothing_needs_two_scopes():
    with pytest.raises(ArgumentError):
        smoothing_family(Landscape1D.double_well(), [1.0], [0.0])


# -- properties ----------------------------------------------------------------


@given(st.floats(0.05, 20.0), st.floats(0.05, 20.0), st.floats(-3.0, 3.0))
def test_quadrature_agrees_with_gaussian_oracle(a, gamma, x):
    value = local_entropy_quadrature(QuadraticObjective([[a]]), GibbsSpec(gamma, x))
    assert abs(value - gaussian_local_entropy(a, gamma, x)) < 1e-8


@given(st.floats(0.05, 20.0), st.floats(-3.0, 3.0))
def test_local_entropy_is_sandwiched_by_energy_bounds(gamma, x):
    # lower_bound <= f <= 1 on the double well, and F shifts by -f for constant f
    f = Landscape1D.double_well()
    flat = 0.5 * math.log(2 * math.pi / gamma)
    value = local_entropy_quadrature(f, GibbsSpec(gamma, x))
    assert flat - 1.0 - 1e-10 <= value <= flat - f.lower_bound + 1e-10
