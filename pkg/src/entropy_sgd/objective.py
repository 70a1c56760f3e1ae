"""Energy functions, datasets and mini-batch sampling.

Every objective works on a flat float64 parameter vector and exposes the
mean loss over a mini-batch together with its gradient.  Analytic test
objectives (quadratics, 1D landscapes, constants) behave as datasets with a
single virtual sample so that the same samplers and optimizers run on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError


def as_param_vector(x, dim=None):
    """Return ``x`` as a finite 1-D float64 array, optionally checking length."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.size < 1:
        raise ArgumentError(f"parameter vector must be 1-D and non-empty, got shape {x.shape}")
    if dim is not None and x.size != dim:
        raise ArgumentError(f"dimension mismatch: expected {dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NumericError("parameter vector contains non-finite entries")
    return x


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels in ``[0, num_classes)``."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ArgumentError("inputs must be a 2-D array (samples x features)")
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise ArgumentError("labels must be 1-D with one entry per input row")
        if inputs.shape[0] < 1:
            raise ArgumentError("dataset must contain at least one sample")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ArgumentError(f"labels must lie in [0, {self.num_classes})")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return self.n

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ArgumentError("a mini-batch needs at least one index")
        if np.unique(idx).size != idx.size:
            raise ArgumentError("mini-batch indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def m(self):
        return self.indices.size


def _population_size(source):
    if isinstance(source, (int, np.integer)):
        return int(source)
    if hasattr(source, "n_samples"):
        return int(source.n_samples)
    return len(source)


def sample_minibatch(source, m, rng):
    """Draw ``m`` distinct indices uniformly from a dataset (or objective, or size).

    Sampling is without replacement inside the batch and independent across
    calls; ``rng`` (a ``numpy.random.Generator``) is advanced in place.
    """
    n = _population_size(source)
    if not 1 <= m <= n:
        raise ArgumentError(f"batch size m={m} must satisfy 1 <= m <= N={n}")
    if m == n:
        return MiniBatch(rng.permutation(n))
    return MiniBatch(rng.choice(n, size=m, replace=False))


def iterate_minibatches(n, m, rng=None):
    """Yield a disjoint cover of ``range(n)`` in batches of at most ``m``."""
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, m):
        yield MiniBatch(order[start:start + m])


def _subsample_positions(dataset, k, rng, stratified):
    if not stratified:
        return np.sort(rng.choice(dataset.n, size=k, replace=False))
    pools = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(dataset.num_classes)]
    quota = np.zeros(dataset.num_classes, dtype=np.int64)
    remaining = k
    # water-filling: one sample per class per round until k are handed out
    while remaining > 0:
        open_classes = [c for c in range(dataset.num_classes) if quota[c] < len(pools[c])]
        if len(open_classes) > remaining:
            open_classes = list(rng.choice(open_classes, size=remaining, replace=False))
        for c in open_classes:
            quota[c] += 1
        remaining -= len(open_classes)
    return np.sort(np.concatenate([pools[c][:quota[c]] for c in range(dataset.num_classes)]))


def subsample(dataset, k, seed, stratified=False):
    """Draw ``k`` samples without replacement, deterministically from ``seed``.

    With ``stratified=True`` the per-class counts differ by at most one
    (classes with too few samples give up their share to the others).
    """
    if not 1 <= k <= dataset.n:
        raise ArgumentError(f"subsample size k={k} must satisfy 1 <= k <= N={dataset.n}")
    rng = np.random.default_rng(seed)
    return dataset.take(_subsample_positions(dataset, k, rng, stratified))


def train_val_split(dataset, val_fraction, seed, stratified=True):
    """Split a dataset into disjoint (train, validation) parts."""
    if not 0.0 < val_fraction < 1.0:
        raise ArgumentError("val_fraction must lie in (0, 1)")
    k_val = max(1, int(round(val_fraction * dataset.n)))
    val_pos = _subsample_positions(dataset, k_val, np.random.default_rng(seed), stratified)
    mask = np.ones(dataset.n, dtype=bool)
    mask[val_pos] = False
    return dataset.take(np.flatnonzero(mask)), dataset.take(val_pos)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


class Objective:
    """Interface for an energy ``f(x)`` that is a mean over samples.

    Subclasses set ``dim`` and ``n_samples`` and implement
    :meth:`batch_loss_grad`.  ``rng`` is only consumed by stochastic
    objectives (dropout, injected gradient noise); deterministic objectives
    ignore it.
    """

    dim: int
    n_samples: int = 1

    def batch_loss_grad(self, x, batch, rng=None):
        raise NotImplementedError

    def batch_loss(self, x, batch, rng=None):
        return self.batch_loss_grad(x, batch, rng)[0]

    def full_loss_grad(self, x):
        return self.batch_loss_grad(x, MiniBatch(np.arange(self.n_samples)))

    def full_loss(self, x):
        return self.full_loss_grad(x)[0]


class QuadraticObjective(Objective):
    """``f(x) = 1/2 x^T A x + b^T x`` with optional Gaussian gradient noise.

    ``noise_std > 0`` turns the batch gradient into ``A x + b + noise_std * z``
    with ``z`` drawn from the supplied ``rng``; without an rng the gradient
    is exact.
    """

    n_samples = 1

    def __init__(self, A, b=None, noise_std=0.0):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise ArgumentError("A must be square")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ArgumentError("A must be symmetric to 1e-12")
        self.A = 0.5 * (A + A.T)
        self.dim = A.shape[0]
        self.b = np.zeros(self.dim) if b is None else as_param_vector(b, self.dim)
        self.noise_std = float(noise_std)
        self.eigenvalues = np.linalg.eigvalsh(self.A)

    def __call__(self, x):
        x = as_param_vector(x, self.dim)
        return float(0.5 * x @ self.A @ x + self.b @ x)

    def gradient(self, x):
        return self.A @ x + self.b

    def hessian(self, x=None):
        return self.A.copy()

    def minimizer(self):
        return -np.linalg.solve(self.A, self.b)

    def batch_loss_grad(self, x, batch, rng=None):
        loss = self(x)
        grad = self.gradient(x)
        if self.noise_std > 0.0 and rng is not None:
            grad = grad + self.noise_std * rng.standard_normal(self.dim)
        return loss, grad

    # 1-D vectorised evaluation, used when the quadratic is embedded as a landscape
    def energy(self, xs):
        if self.dim != 1:
            raise ArgumentError("vectorised energy() is only defined for 1-D quadratics")
        xs = np.asarray(xs, dtype=np.float64)
        return 0.5 * self.A[0, 0] * xs * xs + self.b[0] * xs

    @property
    def min_scale(self):
        top = float(np.max(np.abs(self.eigenvalues)))
        return np.inf if top == 0.0 else 1.0 / np.sqrt(top)


class ConstantObjective(Objective):
    """``f(x) = value`` everywhere: zero gradient, flat landscape."""

    n_samples = 1

    def __init__(self, dim, value=0.0):
        self.dim = int(dim)
        self.value = float(value)

    def batch_loss_grad(self, x, batch, rng=None):
        return self.value, np.zeros(self.dim)

    def energy(self, xs):
        return np.full(np.shape(xs), self.value, dtype=np.float64)

    min_scale = np.inf


@dataclass(frozen=True)
class Well:
    center: float
    width: float
    depth: float


@dataclass(frozen=True)
class Landscape1D(Objective):
    """``f(x) = 1 - sum_k depth_k * exp(-(x - center_k)^2 / (2 width_k^2))``.

    The default is a double well: a wide, shallower basin at ``c_w`` and a
    sharp, deeper one at ``c_s`` that holds the global minimum.
    """

    wells: tuple = field(default_factory=lambda: (Well(-2.0, 1.0, 0.8), Well(2.0, 0.05, 1.0)))
    kind: str = "double_well"

    dim = 1
    n_samples = 1

    def __post_init__(self):
        wells = tuple(w if isinstance(w, Well) else Well(*w) for w in self.wells)
        if not wells:
            raise ArgumentError("a landscape needs at least one well")
        for w in wells:
            if w.width <= 0:
                raise ArgumentError("well widths must be positive")
        if self.kind == "double_well":
            if len(wells) != 2 or not wells[0].width > wells[1].width > 0:
                raise ArgumentError("double_well needs (wide, sharp) wells with width_w > width_s > 0")
        object.__setattr__(self, "wells", wells)

    @classmethod
    def double_well(cls, c_w=-2.0, sigma_w=1.0, h_w=0.8, c_s=2.0, sigma_s=0.05, h_s=1.0):
        return cls((Well(c_w, sigma_w, h_w), Well(c_s, sigma_s, h_s)), kind="double_well")

    @classmethod
    def custom(cls, wells):
        return cls(tuple(wells), kind="custom")

    @property
    def wide(self):
        return self.wells[0]

    @property
    def sharp(self):
        return self.wells[-1]

    @property
    def lower_bound(self):
        return 1.0 - sum(max(w.depth, 0.0) for w in self.wells)

    @property
    def min_scale(self):
        return min(w.width for w in self.wells)

    def shifted(self, offset):
        moved = tuple(Well(w.center + offset, w.width, w.depth) for w in self.wells)
        return Landscape1D(moved, kind=self.kind)

    def energy(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        out = np.ones_like(xs)
        for w in self.wells:
            out -= w.depth * np.exp(-((xs - w.center) ** 2) / (2.0 * w.width ** 2))
        return out

    def derivative(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        out = np.zeros_like(xs)
        for w in self.wells:
            d = xs - w.center
            out += w.depth * d / w.width ** 2 * np.exp(-(d ** 2) / (2.0 * w.width ** 2))
        return out

    def __call__(self, x):
        x = as_param_vector(x, 1)
        return float(self.energy(x[0]))

    def batch_loss_grad(self, x, batch, rng=None):
        x = np.asarray(x, dtype=np.float64)
        return float(self.energy(x[0])), np.array([self.derivative(x[0])])


def eval_landscape(f, x):
    """Evaluate a closed-form energy (landscape or quadratic) at ``x``."""
    x = as_param_vector(x)
    if x.size != f.dim:
        raise ArgumentError(f"dimension mismatch: objective has dim {f.dim}, x has {x.size}")
    return f(x)
