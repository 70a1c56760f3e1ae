"""Stochastic gradient Langevin dynamics.

Two uses: the inner loop of Entropy-SGD, which samples the Gibbs density
``exp(-f(x') - gamma/2 |x - x'|^2)`` around an anchor ``x`` and keeps an
exponential average ``mu`` of the iterates; and a standalone SGLD optimizer
with a polynomially decaying step size, used as a baseline.

Noise layout is fixed: after the mini-batch indices (and any dropout masks
the objective draws), every step consumes exactly one standard normal per
coordinate from the run's generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DivergenceError
from .objective import as_param_vector, sample_minibatch


@dataclass(frozen=True)
class SgldConfig:
    eta_prime: float = 0.1
    epsilon: float = 1e-3
    alpha: float = 0.75
    L: int = 20
    gamma: float = 1e-4
    momentum: float = 0.0

    def __post_init__(self):
        if not self.eta_prime > 0:
            raise ArgumentError("eta_prime must be > 0")
        if not self.epsilon >= 0:
            raise ArgumentError("epsilon must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ArgumentError("alpha must lie in (0, 1]")
        if int(self.L) != self.L or self.L < 1:
            raise ArgumentError("L must be an integer >= 1")
        if not self.gamma >= 0:
            raise ArgumentError("gamma must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must lie in [0, 1)")


@dataclass
class SgldState:
    x_prime: np.ndarray
    mu: np.ndarray
    step: int = 0
    velocity: np.ndarray = None
    grad_norm_sum: float = 0.0

    @classmethod
    def reset(cls, anchor):
        anchor = as_param_vector(anchor)
        return cls(anchor.copy(), anchor.copy(), 0, np.zeros_like(anchor))


def sgld_step(state, anchor, obj, cfg, m, rng):
    """One Langevin step toward the scoped Gibbs density; updates ``state`` in place.

    ``dx' = grad f_batch(x') - gamma (anchor - x')``, then
    ``x' <- x' - eta' dx' + sqrt(eta') eps z`` and
    ``mu <- (1 - alpha) mu + alpha x'``.  With inner momentum the gradient is
    taken at the Nesterov look-ahead point.
    """
    batch = sample_minibatch(obj, m, rng)
    if cfg.momentum > 0.0:
        probe = state.x_prime + cfg.momentum * state.velocity
    else:
        probe = state.x_prime
    _, grad = obj.batch_loss_grad(probe, batch, rng)
    dx = grad - cfg.gamma * (anchor - probe)
    noise = rng.standard_normal(state.x_prime.size)

    if cfg.momentum > 0.0:
        state.velocity = cfg.momentum * state.velocity - cfg.eta_prime * dx
        x_new = state.x_prime + state.velocity + np.sqrt(cfg.eta_prime) * cfg.epsilon * noise
    else:
        x_new = state.x_prime - cfg.eta_prime * dx + np.sqrt(cfg.eta_prime) * cfg.epsilon * noise
    state.step += 1
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"SGLD iterate became non-finite at inner step {state.step}", step=state.step)
    state.x_prime = x_new
    state.mu = (1.0 - cfg.alpha) * state.mu + cfg.alpha * x_new
    state.grad_norm_sum += float(np.linalg.norm(dx))
    return state


def estimate_mu(anchor, obj, cfg, m, rng):
    """Run ``cfg.L`` SGLD steps from ``anchor``; return ``(mu, diagnostics)``.

    ``gamma * (anchor - mu)`` is then the mini-batch estimate of the negative
    local-entropy gradient.
    """
    anchor = as_param_vector(anchor, obj.dim)
    state = SgldState.reset(anchor)
    for _ in range(cfg.L):
        sgld_step(state, anchor, obj, cfg, m, rng)
    diagnostics = {
        "grad_norm": state.grad_norm_sum / cfg.L,
        "dist_to_anchor": float(np.linalg.norm(state.x_prime - anchor)),
        "mu_drift": float(np.linalg.norm(state.mu - anchor)),
    }
    return state.mu, diagnostics


# ---------------------------------------------------------------------------
# standalone SGLD
# ---------------------------------------------------------------------------


def sgld_step_size(eta0, b, t):
    return eta0 / (1.0 + t) ** b


def langevin_update(x, grad, eta, epsilon, rng, n_data=1):
    """``x - eta/2 * grad + sqrt(eta / n_data) * epsilon * z``.

    ``grad`` is the mean mini-batch gradient, so the usual ``N/m`` factor of
    the summed log-likelihood is absorbed into ``eta``.  With a flat prior and
    ``epsilon = 1`` the chain targets the posterior ``exp(-n_data * f)``.
    """
    return x - 0.5 * eta * grad + np.sqrt(eta / n_data) * epsilon * rng.standard_normal(x.size)


@dataclass
class SgldTrajectory:
    x: np.ndarray
    epoch_losses: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)


def sgld_optimize(obj, x0, eta0, b, epochs, m, rng, epsilon=1.0, steps_per_epoch=None):
    """Standalone SGLD with step ``eta_t = eta0 / (1 + t)^b`` on ``exp(-N f)``.

    One epoch is ``max(1, N // m)`` steps unless ``steps_per_epoch`` is
    given.  ``epoch_losses[0]`` is the full loss at ``x0``.
    """
    if not eta0 > 0:
        raise ArgumentError("eta0 must be > 0")
    if not 0 <= b <= 1:
        raise ArgumentError("decay exponent b must lie in [0, 1]")
    x = as_param_vector(x0, obj.dim).copy()
    steps = steps_per_epoch or max(1, obj.n_samples // m)
    traj = SgldTrajectory(x, [obj.full_loss(x)])
    t = 0
    for _ in range(epochs):
        for _ in range(steps):
            eta = sgld_step_size(eta0, b, t)
            batch = sample_minibatch(obj, m, rng)
            _, grad = obj.batch_loss_grad(x, batch, rng)
            x = langevin_update(x, grad, eta, epsilon, rng, obj.n_samples)
            t += 1
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"SGLD diverged at step {t}", step=t)
            traj.step_sizes.append(eta)
        traj.epoch_losses.append(obj.full_loss(x))
    traj.x = x
    return traj
