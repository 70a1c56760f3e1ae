"""Ground-truth local entropy.

Local entropy at ``x`` with scope ``gamma`` is the log-partition function

    F(x, gamma) = log  integral  exp(-f(x') - gamma/2 |x - x'|^2) dx'

and its gradient is ``-gamma (x - <x'>)`` where the average is over the
normalised integrand.  For 1-D (and small 2-D) energies both are computed by
composite Simpson quadrature in log space; for quadratics they have closed
forms.  Nothing here is stochastic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, GridCoverageError, NumericError
from .objective import as_param_vector

TAIL_TOLERANCE = 1e-10
MAX_POINTS_2D = 4001
DEFAULT_GRID_WIDENINGS = 4


@dataclass(frozen=True)
class GibbsSpec:
    """Inverse temperature, scope and center of the scoped Gibbs density."""

    gamma: float
    center: object = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ArgumentError("beta must be > 0")
        if not self.gamma >= 0:
            raise ArgumentError("gamma must be >= 0")
        object.__setattr__(self, "center", as_param_vector(self.center))

    @property
    def x(self):
        return float(self.center[0])

    @property
    def sigma(self):
        """Standard deviation of the Gaussian coupling factor."""
        return math.inf if self.gamma == 0 else 1.0 / math.sqrt(self.beta * self.gamma)


def require_unit_beta(spec):
    if spec.beta != 1.0:
        raise ArgumentError("local entropy and the optimizer paths are defined at beta = 1")


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ArgumentError("grid needs hi > lo")
        if self.points < 3 or self.points % 2 == 0:
            raise ArgumentError("Simpson quadrature needs an odd number of points >= 3")

    @property
    def nodes(self):
        return np.linspace(self.lo, self.hi, self.points)

    @property
    def step(self):
        return (self.hi - self.lo) / (self.points - 1)


def default_grid(f, spec, sigmas=8.5, per_scale=20, min_points=2001, max_points=4_000_001):
    """Integration grid centred on ``spec.center`` that resolves both the
    coupling Gaussian and the energy's narrowest feature (``f.min_scale``)."""
    if spec.gamma <= 0:
        raise ArgumentError("a finite integration grid needs gamma > 0")
    sigma = spec.sigma
    half = sigmas * sigma
    scale = min(sigma, getattr(f, "min_scale", np.inf))
    points = int(math.ceil(2 * half / (scale / per_scale))) + 1
    points = min(max(points, min_points), max_points)
    points += 1 - points % 2
    return Grid(spec.x - half, spec.x + half, points)


def _energy(f):
    if hasattr(f, "energy"):
        return f.energy
    return f


def simpson_weights(points, step):
    w = np.ones(points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * step / 3.0


@dataclass(frozen=True)
class _Quadrature:
    nodes: np.ndarray
    log_integrand: np.ndarray
    log_z: float
    probs: np.ndarray  # Simpson weight times normalised density at each node


def _integrate(f, spec, grid, min_points=2001, check_coverage=True):
    if spec.gamma <= 0:
        raise ArgumentError("the scoped Gibbs density needs gamma > 0 to be normalisable")
    if grid is not None:
        return _integrate_on(f, spec, grid, min_points, check_coverage)
    # the energy can pull the mass away from x; widen the default grid until the tails vanish
    sigmas = 8.5
    for attempt in range(DEFAULT_GRID_WIDENINGS + 1):
        grid = default_grid(f, spec, sigmas=sigmas, min_points=min_points)
        try:
            return _integrate_on(f, spec, grid, min_points, check_coverage)
        except GridCoverageError:
            if attempt == DEFAULT_GRID_WIDENINGS:
                raise
        sigmas *= 2.0


def _integrate_on(f, spec, grid, min_points, check_coverage):
    if grid.points < min_points:
        raise ArgumentError(f"quadrature grid needs at least {min_points} points")
    x = spec.x
    if check_coverage and (grid.lo > x - 8 * spec.sigma or grid.hi < x + 8 * spec.sigma):
        raise GridCoverageError(
            f"grid [{grid.lo:g}, {grid.hi:g}] does not cover 8 standard deviations ({8 * spec.sigma:g}) around {x:g}"
        )
    xs = grid.nodes
    g = -spec.beta * (np.asarray(_energy(f)(xs), dtype=np.float64) + 0.5 * spec.gamma * (x - xs) ** 2)
    if not np.all(np.isfinite(g)):
        raise NumericError("energy is not finite on the quadrature grid")
    w = simpson_weights(grid.points, grid.step)
    log_z = float(logsumexp(g, b=w))
    _audit_tails(g, grid.step, log_z)
    probs = w * np.exp(g - log_z)
    return _Quadrature(xs, g, log_z, probs)


def _audit_tails(g, step, log_z):
    # exponential extrapolation of the integrand beyond each end of the grid
    tail = 0.0
    for edge, inner in ((g[0], g[1]), (g[-1], g[-2])):
        slope = (inner - edge) / step
        if slope <= 0:
            if edge - log_z > math.log(TAIL_TOLERANCE):
                raise GridCoverageError("integrand does not decay towards the grid boundary")
            continue
        tail += math.exp(edge - log_z) / slope
    if tail > TAIL_TOLERANCE:
        raise GridCoverageError(f"estimated tail mass {tail:.3g} exceeds {TAIL_TOLERANCE:g} of the total")


def local_entropy_quadrature(f, spec, grid=None):
    """``F(x, gamma)`` by log-space Simpson quadrature."""
    require_unit_beta(spec)
    return _integrate(f, spec, grid).log_z


def modified_gibbs_mean(f, spec, grid=None):
    q = _integrate(f, spec, grid)
    return float(np.sum(q.probs * q.nodes))


def local_entropy_grad_quadrature(f, spec, grid=None):
    """``dF/dx = -gamma (x - <x'>)`` with the mean taken by quadrature."""
    require_unit_beta(spec)
    return -spec.gamma * (spec.x - modified_gibbs_mean(f, spec, grid))


def classical_entropy_quadrature(f, spec, grid=None):
    """Differential entropy ``-int P log P`` of the scoped Gibbs density."""
    q = _integrate(f, spec, grid)
    return float(q.log_z - np.sum(q.probs * q.log_integrand))


def gibbs_log_density(f, xs, beta, grid):
    """``log P(x; beta)`` of the unscoped Gibbs density, normalised on ``grid``."""
    if not beta > 0:
        raise ArgumentError("beta must be > 0")
    energy = _energy(f)
    log_z = logsumexp(-beta * energy(grid.nodes), b=simpson_weights(grid.points, grid.step))
    return -beta * np.asarray(energy(np.asarray(xs, dtype=np.float64))) - log_z


def modified_gibbs_log_density(f, xs, spec, grid=None):
    q = _integrate(f, spec, grid)
    xs = np.asarray(xs, dtype=np.float64)
    return -spec.beta * (np.asarray(_energy(f)(xs)) + 0.5 * spec.gamma * (spec.x - xs) ** 2) - q.log_z


# ---------------------------------------------------------------------------
# quadratics
# ---------------------------------------------------------------------------


def local_entropy_quadratic_closed_form(A, b, spec):
    """Exact ``(F, grad F, <x'>)`` for ``f = 1/2 x^T A x + b^T x``.

    With ``P = A + gamma I`` and ``h = gamma x - b``:
    ``<x'> = P^{-1} h`` and
    ``F = n/2 log 2 pi - 1/2 log det P + 1/2 h^T P^{-1} h - gamma/2 |x|^2``.
    """
    require_unit_beta(spec)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    n = A.shape[0]
    x = as_param_vector(spec.center, n)
    b = np.zeros(n) if b is None else as_param_vector(b, n)
    P = A + spec.gamma * np.eye(n)
    try:
        chol = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ArgumentError("A + gamma I must be positive definite") from None
    h = spec.gamma * x - b
    mean = np.linalg.solve(P, h)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    F = 0.5 * n * math.log(2 * math.pi) - 0.5 * logdet + 0.5 * float(h @ mean) - 0.5 * spec.gamma * float(x @ x)
    grad = -spec.gamma * (x - mean)
    return F, grad, mean


def exact_mu(anchor, obj, cfg, m=None, rng=None):
    """Exact ``<x'>`` for a :class:`QuadraticObjective`; drop-in for ``estimate_mu``."""
    P = obj.A + cfg.gamma * np.eye(obj.dim)
    return np.linalg.solve(P, cfg.gamma * anchor - obj.b), {}


def saddle_point_grad(f, x, gamma, hessian=None):
    """``gamma (H + gamma I)^{-1} grad f(x)``: second-order estimate of ``-grad F``.

    ``H`` is taken from ``hessian`` when given, else ``f.hessian(x)``, else
    the finite-difference Hessian of :func:`entropy_sgd.net.exact_hessian`.
    """
    x = as_param_vector(x, f.dim)
    if hessian is None:
        if hasattr(f, "hessian"):
            hessian = f.hessian(x)
        else:
            from .net import exact_hessian

            hessian = exact_hessian(f, x)
    grad = f.full_loss_grad(x)[1]
    system = hessian + gamma * np.eye(f.dim)
    try:
        sol = np.linalg.solve(system, grad)
    except np.linalg.LinAlgError:
        raise NumericError("H + gamma I is singular") from None
    if not np.all(np.isfinite(sol)) or np.linalg.cond(system) > 1e14:
        raise NumericError("H + gamma I is numerically singular")
    return gamma * sol


def local_entropy_quadrature_2d(energy, center, gamma, grid_x, grid_y):
    """Tensor-product Simpson version of ``F`` for 2-D energies ``energy(X, Y)``."""
    if grid_x.points > MAX_POINTS_2D or grid_y.points > MAX_POINTS_2D:
        raise ArgumentError(f"2-D grids are capped at {MAX_POINTS_2D} points per axis")
    if not gamma > 0:
        raise ArgumentError("gamma must be > 0")
    cx, cy = as_param_vector(center, 2)
    X, Y = np.meshgrid(grid_x.nodes, grid_y.nodes, indexing="ij")
    g = -(energy(X, Y) + 0.5 * gamma * ((X - cx) ** 2 + (Y - cy) ** 2))
    w = np.outer(simpson_weights(grid_x.points, grid_x.step), simpson_weights(grid_y.points, grid_y.step))
    log_z = float(logsumexp(g, b=w))
    p = w * np.exp(g - log_z)
    mean = np.array([np.sum(p * X), np.sum(p * Y)])
    return log_z, -gamma * (np.array([cx, cy]) - mean)


# ---------------------------------------------------------------------------
# smoothing family
# ---------------------------------------------------------------------------


@dataclass
class SmoothingTable:
    gammas: np.ndarray
    xs: np.ndarray
    neg_f: np.ndarray  # shape (len(gammas), len(xs))

    def argmin(self, i):
        return float(self.xs[int(np.argmin(self.neg_f[i]))])

    def argmins(self):
        return {float(g): self.argmin(i) for i, g in enumerate(self.gammas)}

    def rows(self):
        for i, g in enumerate(self.gammas):
            for x, v in zip(self.xs, self.neg_f[i]):
                yield float(g), float(x), float(v)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gamma", "x", "negF"])
            for g, x, v in self.rows():
                writer.writerow([repr(g), repr(x), repr(v)])


def smoothing_family(f, gammas, query):
    """Evaluate ``-F(x, gamma)`` on the ``query`` grid for each scope in ``gammas``."""
    gammas = np.asarray(gammas, dtype=np.float64)
    if gammas.size < 2:
        raise ArgumentError("need at least two scope values")
    xs = query.nodes if isinstance(query, Grid) else np.asarray(query, dtype=np.float64)
    table = np.empty((gammas.size, xs.size))
    for i, gamma in enumerate(gammas):
        for j, x in enumerate(xs):
            table[i, j] = -local_entropy_quadrature(f, GibbsSpec(float(gamma), x))
    return SmoothingTable(gammas, xs, table)
