"""Outer-loop optimizers: Entropy-SGD, Entropy-Adam and the SGD/Adam/SGLD baselines.

All step functions share the signature ``step(state, obj, cfg, m, rng)``,
mutate ``state`` in place and return it.  ``state.epoch`` selects the
learning rate under the configured step decay; the caller advances it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ArgumentError, CalibrationError, DivergenceError
from .objective import as_param_vector, sample_minibatch
from .sampler import SgldConfig, estimate_mu, langevin_update, sgld_step_size

log = logging.getLogger(__name__)

SCHEDULE_KINDS = ("constant", "exponential", "linear", "quadratic", "bounded_exponential")


@dataclass(frozen=True)
class ScopingSchedule:
    """Scope as a function of the outer update index ``t``.

    constant: ``g0``; exponential: ``g0 (1 + g1)^t``; linear: ``g0 + g1 t``;
    quadratic: ``g0 + g1 t^2``; bounded_exponential: ``g0 (1 - exp(-tau t))``.
    """

    kind: str = "exponential"
    gamma0: float = 1e-4
    gamma1: float = 1e-3
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ArgumentError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.gamma0 < 0 or self.gamma1 < 0:
            raise ArgumentError("gamma0 and gamma1 must be >= 0")
        if self.kind == "bounded_exponential" and not self.tau > 0:
            raise ArgumentError("tau must be > 0")


def gamma_at(schedule, t):
    if t < 0:
        raise ArgumentError("update index must be >= 0")
    g0, g1 = schedule.gamma0, schedule.gamma1
    if schedule.kind == "constant":
        return g0
    if schedule.kind == "exponential":
        return g0 * (1.0 + g1) ** t
    if schedule.kind == "linear":
        return g0 + g1 * t
    if schedule.kind == "quadratic":
        return g0 + g1 * t * t
    return g0 * (1.0 - math.exp(-schedule.tau * t))


@dataclass(frozen=True)
class LrDecay:
    """Multiply the learning rate by ``factor`` at each epoch index in ``milestones``."""

    milestones: tuple = ()
    factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(sorted(int(e) for e in self.milestones)))
        if not self.factor > 0:
            raise ArgumentError("lr decay factor must be > 0")

    def lr(self, eta, epoch):
        drops = sum(1 for e in self.milestones if epoch >= e)
        return eta * self.factor ** drops


@dataclass(frozen=True)
class EntropySgdConfig:
    L: int = 20
    eta: float = 1.0
    eta_prime: float = 0.1
    epsilon: float = 1e-3
    alpha: float = 0.75
    schedule: ScopingSchedule = field(default_factory=ScopingSchedule)
    momentum: float = 0.9
    nesterov: bool = True
    inner_momentum: float = 0.0
    rescale_gradient: bool = True
    lr_decay: LrDecay = field(default_factory=LrDecay)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ArgumentError("L must be an integer >= 1")
        if not self.eta > 0:
            raise ArgumentError("eta must be > 0")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must lie in [0, 1)")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ArgumentError("Adam betas must lie in [0, 1)")
        self.sgld(0.0)  # validates the inner-loop fields

    def sgld(self, gamma):
        return SgldConfig(self.eta_prime, self.epsilon, self.alpha, self.L, gamma, self.inner_momentum)


@dataclass(frozen=True)
class SgdConfig:
    eta: float = 0.1
    momentum: float = 0.0
    nesterov: bool = True
    lr_decay: LrDecay = field(default_factory=LrDecay)

    def __post_init__(self):
        if not self.eta > 0 or not 0 <= self.momentum < 1:
            raise ArgumentError("need eta > 0 and momentum in [0, 1)")


@dataclass(frozen=True)
class AdamConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: LrDecay = field(default_factory=LrDecay)

    def __post_init__(self):
        if not self.eta > 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ArgumentError("need eta > 0 and betas in [0, 1)")


@dataclass(frozen=True)
class SgldBaselineConfig:
    eta0: float = 0.1
    b: float = 0.75
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.eta0 > 0 or not 0 <= self.b <= 1 or self.epsilon < 0:
            raise ArgumentError("need eta0 > 0, b in [0, 1], epsilon >= 0")


@dataclass
class OptimizerState:
    x: np.ndarray
    t: int = 0
    epoch: int = 0
    velocity: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    gamma: float = float("nan")
    last_direction: np.ndarray = None
    last_diagnostics: dict = field(default_factory=dict)

    @classmethod
    def create(cls, x0):
        x0 = as_param_vector(x0).copy()
        z = np.zeros_like(x0)
        return cls(x0, velocity=z.copy(), adam_m=z.copy(), adam_v=z.copy())


def _check(state, what):
    if not np.all(np.isfinite(state.x)):
        raise DivergenceError(f"{what}: parameters became non-finite at update {state.t}", step=state.t)


def _momentum_update(state, direction_fn, eta, momentum, nesterov):
    if momentum == 0.0:
        g = direction_fn(state.x)
        state.x = state.x - eta * g
    else:
        probe = state.x + momentum * state.velocity if nesterov else state.x
        g = direction_fn(probe)
        state.velocity = momentum * state.velocity - eta * g
        state.x = state.x + state.velocity
    state.last_direction = g
    return g


def _adam_update(state, g, eta, beta1, beta2, eps):
    state.adam_m = beta1 * state.adam_m + (1.0 - beta1) * g
    state.adam_v = beta2 * state.adam_v + (1.0 - beta2) * g * g
    k = state.t + 1
    m_hat = state.adam_m / (1.0 - beta1 ** k)
    v_hat = state.adam_v / (1.0 - beta2 ** k)
    state.x = state.x - eta * m_hat / (np.sqrt(v_hat) + eps)
    state.last_direction = g


def _entropy_direction(state, obj, cfg, m, rng, mu_fn):
    gamma = gamma_at(cfg.schedule, state.t)
    state.gamma = gamma
    sgld_cfg = cfg.sgld(gamma)
    estimator = mu_fn or estimate_mu

    def direction(anchor):
        mu, diag = estimator(anchor, obj, sgld_cfg, m, rng)
        state.last_diagnostics = diag
        if cfg.rescale_gradient:
            return anchor - mu
        if gamma == 0.0:
            log.info("scope is 0 at update %d: local-entropy gradient vanishes", state.t)
        return gamma * (anchor - mu)

    return direction


def entropy_sgd_step(state, obj, cfg, m, rng, mu_fn=None):
    """One outer Entropy-SGD update.

    The scope ``gamma_t`` is frozen for the whole inner loop.  The descent
    direction is ``gamma_t (x - mu)``, or ``x - mu`` with
    ``rescale_gradient``; it is applied with (Nesterov) momentum at the
    decayed rate.  ``mu_fn`` replaces the SGLD estimator (same signature as
    :func:`~entropy_sgd.sampler.estimate_mu`), e.g. with an exact oracle.
    """
    direction = _entropy_direction(state, obj, cfg, m, rng, mu_fn)
    eta = cfg.lr_decay.lr(cfg.eta, state.epoch)
    _momentum_update(state, direction, eta, cfg.momentum, cfg.nesterov)
    state.t += 1
    _check(state, "entropy-sgd")
    return state


def entropy_adam_step(state, obj, cfg, m, rng, mu_fn=None):
    """Adam driven by the local-entropy direction instead of the raw gradient."""
    if state.t == 0:
        log.info("entropy-adam: beta1=%g beta2=%g eps=%g", cfg.beta1, cfg.beta2, cfg.adam_eps)
    direction = _entropy_direction(state, obj, cfg, m, rng, mu_fn)
    g = direction(state.x)
    eta = cfg.lr_decay.lr(cfg.eta, state.epoch)
    _adam_update(state, g, eta, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state.t += 1
    _check(state, "entropy-adam")
    return state


def _batch_gradient(obj, m, rng):
    def direction(point):
        batch = sample_minibatch(obj, m, rng)
        return obj.batch_loss_grad(point, batch, rng)[1]

    return direction


def sgd_step(state, obj, cfg, m, rng):
    eta = cfg.lr_decay.lr(cfg.eta, state.epoch)
    _momentum_update(state, _batch_gradient(obj, m, rng), eta, cfg.momentum, cfg.nesterov)
    state.t += 1
    _check(state, "sgd")
    return state


def adam_step(state, obj, cfg, m, rng):
    g = _batch_gradient(obj, m, rng)(state.x)
    eta = cfg.lr_decay.lr(cfg.eta, state.epoch)
    _adam_update(state, g, eta, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state.t += 1
    _check(state, "adam")
    return state


def sgld_baseline_step(state, obj, cfg, m, rng):
    """One standalone SGLD step with ``eta_t = eta0 / (1 + t)^b``."""
    eta = sgld_step_size(cfg.eta0, cfg.b, state.t)
    g = _batch_gradient(obj, m, rng)(state.x)
    state.x = langevin_update(state.x, g, eta, cfg.epsilon, rng, obj.n_samples)
    state.last_direction = g
    state.t += 1
    _check(state, "sgld")
    return state


# ---------------------------------------------------------------------------
# scope calibration
# ---------------------------------------------------------------------------


def heuristic_gamma_calibration(obj, x, cfg, m, rng, probes=5, lo=1e-8, hi=1e4, band=(0.5, 2.0), max_iter=60):
    """Pick a scope whose local-entropy gradient has the size of the SGD gradient.

    The ratio ``|gamma (x - mu)| / |grad f_batch(x)|`` (median over
    ``probes`` mini-batches) is bisected in ``log gamma`` on ``[lo, hi]``
    until it falls inside ``band``.  Every candidate reuses the same random
    stream so the ratio curve is a deterministic function of ``gamma``.
    """
    x = as_param_vector(x, obj.dim)
    seed = int(rng.integers(2 ** 63))
    curve = []

    def ratio(gamma):
        sub = np.random.default_rng(seed)
        sgld_cfg = cfg.sgld(gamma)
        values = []
        for _ in range(probes):
            batch = sample_minibatch(obj, m, sub)
            g = np.linalg.norm(obj.batch_loss_grad(x, batch)[1])
            mu, _ = estimate_mu(x, obj, sgld_cfg, m, sub)
            e = np.linalg.norm(gamma * (x - mu))
            values.append(0.0 if e == 0.0 else (np.inf if g == 0.0 else e / g))
        r = float(np.median(values))
        curve.append((gamma, r))
        return r

    def inside(r):
        return band[0] <= r <= band[1]

    r_lo = ratio(lo)
    if inside(r_lo):
        return lo
    if r_lo > band[1] or ratio(hi) < band[0]:
        raise CalibrationError(f"no scope in [{lo:g}, {hi:g}] reaches the band {band}", curve)
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        r = ratio(math.exp(mid))
        if inside(r):
            return math.exp(mid)
        if r < band[0]:
            a = mid
        else:
            b = mid
    raise CalibrationError("bisection did not reach the calibration band", curve)


# ---------------------------------------------------------------------------
# per-epoch records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    epoch: int
    effective_epochs: int
    train_loss: float
    val_error_pct: float
    gamma: float
    grad_norm: float
    angle_deg: float
    wall_ms: float
    seed: int


RUN_RECORD_FIELDS = [f.name for f in fields(RunRecord)]
