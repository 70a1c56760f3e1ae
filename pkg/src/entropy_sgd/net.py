"""Fully-connected ReLU networks with softmax cross-entropy.

Parameters live in one flat float64 vector; layer ``l`` contributes its
weight matrix ``W_l`` of shape ``(fan_in, fan_out)`` (row-major) followed by
the bias ``b_l``.  Gradients are computed by a hand-written backward pass;
Hessians by central differences of those gradients.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, NumericError, ResourceError
from .objective import MiniBatch, Objective, as_param_vector, iterate_minibatches

log = logging.getLogger(__name__)

HESSIAN_CAP = 5000


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    dropout_prob: tuple = ()
    activation: str = "relu"
    loss: str = "softmax_cross_entropy"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ArgumentError("an MLP needs at least two layers, all of size >= 1")
        n_hidden = len(sizes) - 2
        drop = self.dropout_prob
        if np.isscalar(drop):
            drop = (float(drop),) * n_hidden
        drop = tuple(float(p) for p in drop) or (0.0,) * n_hidden
        if len(drop) != n_hidden:
            raise ArgumentError(f"expected {n_hidden} dropout probabilities, got {len(drop)}")
        if any(not 0.0 <= p < 1.0 for p in drop):
            raise ArgumentError("dropout probabilities must lie in [0, 1)")
        if self.activation != "relu" or self.loss != "softmax_cross_entropy":
            raise ArgumentError("only relu activations and softmax cross-entropy are supported")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "dropout_prob", drop)

    @property
    def n_params(self):
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def num_classes(self):
        return self.layer_sizes[-1]

    def describe(self):
        return "mlp-" + "x".join(str(s) for s in self.layer_sizes)


def unpack(spec, x):
    """Split a flat parameter vector into ``[(W, b), ...]`` views."""
    layers, pos = [], 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = x[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = x[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def init_params(spec, rng):
    """He-normal weights, zero biases."""
    x = np.zeros(spec.n_params)
    for W, _ in unpack(spec, x):
        W[...] = rng.standard_normal(W.shape) * np.sqrt(2.0 / W.shape[0])
    return x


def _forward(spec, x, inputs, labels, dropout_on, rng):
    # overflow is detected explicitly below, with the layer index
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_pass(spec, x, inputs, labels, dropout_on, rng)


def _forward_pass(spec, x, inputs, labels, dropout_on, rng):
    layers = unpack(spec, x)
    acts, masks = [inputs], []
    h = inputs
    for i, (W, b) in enumerate(layers[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        p = spec.dropout_prob[i]
        if dropout_on and p > 0.0:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * mask
        else:
            mask = None
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activations in layer {i}", layer=i)
        acts.append(h)
        masks.append(mask)
    W, b = layers[-1]
    logits = h @ W + b
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"non-finite activations in layer {len(layers) - 1}", layer=len(layers) - 1)
    lse = logsumexp(logits, axis=1)
    rows = np.arange(labels.size)
    loss = float(np.mean(lse - logits[rows, labels]))
    return loss, logits, lse, acts, masks, layers


def _backward(spec, x, labels, logits, lse, acts, masks, layers):
    # an overflowing gradient surfaces as non-finite parameters in the optimizer
    with np.errstate(over="ignore", invalid="ignore"):
        return _backward_pass(spec, x, labels, logits, lse, acts, masks, layers)


def _backward_pass(spec, x, labels, logits, lse, acts, masks, layers):
    m = labels.size
    grad = np.zeros_like(x)
    glayers = unpack(spec, grad)
    delta = np.exp(logits - lse[:, None])
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = glayers[i]
        gW[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ layers[i][0].T
        if masks[i - 1] is not None:
            delta *= masks[i - 1]
        delta *= acts[i] > 0.0
    return grad


def forward_loss(obj, x, batch, dropout_on=False, rng=None):
    """Mean cross-entropy of the batch (inverted dropout when ``dropout_on``)."""
    inputs, labels = obj.batch_arrays(batch)
    return _forward(obj.spec, x, inputs, labels, dropout_on, rng)[0]


def backward_grad(obj, x, batch, dropout_on=False, rng=None):
    """Loss and exact gradient of the same stochastic function as :func:`forward_loss`."""
    inputs, labels = obj.batch_arrays(batch)
    loss, logits, lse, acts, masks, layers = _forward(obj.spec, x, inputs, labels, dropout_on, rng)
    return loss, _backward(obj.spec, x, labels, logits, lse, acts, masks, layers)


class MlpObjective(Objective):
    """Mean cross-entropy of an MLP over a dataset.

    Dropout is applied only when a generator is passed to
    :meth:`batch_loss_grad`; full-dataset evaluations never use it.
    """

    def __init__(self, spec, dataset):
        if dataset.input_dim != spec.layer_sizes[0]:
            raise ArgumentError(
                f"input layer has {spec.layer_sizes[0]} units but dataset has {dataset.input_dim} features"
            )
        if dataset.num_classes > spec.num_classes:
            raise ArgumentError("output layer smaller than the number of classes")
        self.spec = spec
        self.dataset = dataset
        self.dim = spec.n_params
        self.n_samples = dataset.n

    def with_dataset(self, dataset):
        return MlpObjective(self.spec, dataset)

    def batch_arrays(self, batch):
        idx = batch.indices if isinstance(batch, MiniBatch) else np.asarray(batch)
        return self.dataset.inputs[idx], self.dataset.labels[idx]

    def batch_loss_grad(self, x, batch, rng=None):
        dropout_on = rng is not None and any(p > 0 for p in self.spec.dropout_prob)
        return backward_grad(self, x, batch, dropout_on, rng)

    def batch_loss(self, x, batch, rng=None):
        dropout_on = rng is not None and any(p > 0 for p in self.spec.dropout_prob)
        return forward_loss(self, x, batch, dropout_on, rng)

    def full_loss(self, x, chunk=4096):
        total = 0.0
        for batch in iterate_minibatches(self.n_samples, chunk):
            total += forward_loss(self, x, batch) * batch.m
        return total / self.n_samples

    def full_loss_grad(self, x, chunk=4096):
        loss, grad = 0.0, np.zeros(self.dim)
        for batch in iterate_minibatches(self.n_samples, chunk):
            l, g = backward_grad(self, x, batch)
            loss += l * batch.m
            grad += g * batch.m
        return loss / self.n_samples, grad / self.n_samples

    def logits(self, x, inputs):
        layers = unpack(self.spec, x)
        h = inputs
        with np.errstate(over="ignore", invalid="ignore"):
            for i, (W, b) in enumerate(layers):
                h = h @ W + b
                if i < len(layers) - 1:
                    h = np.maximum(h, 0.0)
                if not np.all(np.isfinite(h)):
                    raise NumericError(f"non-finite activations in layer {i}", layer=i)
        return h

    def evaluate(self, x, dataset=None):
        """Return ``(mean loss, error in percent)`` on ``dataset`` (default: own data)."""
        dataset = self.dataset if dataset is None else dataset
        loss, wrong = 0.0, 0
        for start in range(0, dataset.n, 4096):
            inputs = dataset.inputs[start:start + 4096]
            labels = dataset.labels[start:start + 4096]
            z = self.logits(x, inputs)
            loss += float(np.sum(logsumexp(z, axis=1) - z[np.arange(labels.size), labels]))
            wrong += int(np.sum(np.argmax(z, axis=1) != labels))
        return loss / dataset.n, 100.0 * wrong / dataset.n


# ---------------------------------------------------------------------------
# second-order quantities
# ---------------------------------------------------------------------------


def exact_hessian(obj, x, dataset=None, cap=HESSIAN_CAP, workers=1, full_output=False):
    """Dense Hessian of the full-data loss by central differences of the gradient.

    Column ``j`` is ``(g(x + h e_j) - g(x - h e_j)) / 2h`` with
    ``h = 1e-4 * max(1, |x|_inf)``.  The result is symmetrised; the raw
    asymmetry ``|H - H^T|_inf / |H|_inf`` is logged as a warning above 1e-3
    and returned when ``full_output`` is set.  Columns are independent, so
    ``workers > 1`` evaluates them on a thread pool with identical results.
    """
    if dataset is not None:
        obj = obj.with_dataset(dataset)
    x = as_param_vector(x, obj.dim)
    n = obj.dim
    if n > cap:
        raise ResourceError(f"Hessian of dimension {n} exceeds the cap of {cap}")
    h = 1e-4 * max(1.0, float(np.max(np.abs(x))))

    def column(j):
        xp = x.copy()
        xp[j] += h
        gp = obj.full_loss_grad(xp)[1]
        xp[j] = x[j] - h
        gm = obj.full_loss_grad(xp)[1]
        return (gp - gm) / (2.0 * h)

    H = np.empty((n, n))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for j, col in enumerate(pool.map(column, range(n))):
                H[:, j] = col
    else:
        for j in range(n):
            H[:, j] = column(j)

    scale = float(np.max(np.abs(H)))
    asym = float(np.max(np.abs(H - H.T))) / scale if scale > 0 else 0.0
    if asym > 1e-3:
        log.warning("Hessian asymmetry %.3g exceeds 1e-3 of its max entry before symmetrisation", asym)
    H = 0.5 * (H + H.T)
    return (H, asym) if full_output else H


def fisher_diagonal(obj, x, dataset=None, m=128, passes=1, seed=0):
    """Per-coordinate variance of mini-batch gradients, ``E[g^2] - (E g)^2``.

    Each pass shuffles the data and walks it in disjoint batches of ``m``
    (a trailing partial batch is dropped unless it is the only batch).
    Gradients are taken without dropout.
    """
    if passes < 1:
        raise ArgumentError("passes must be >= 1")
    if dataset is not None:
        obj = obj.with_dataset(dataset)
    x = as_param_vector(x, obj.dim)
    rng = np.random.default_rng(seed)
    count, mean, m2 = 0, np.zeros(obj.dim), np.zeros(obj.dim)
    for _ in range(passes):
        for batch in iterate_minibatches(obj.n_samples, m, rng):
            if batch.m < m and count > 0:
                continue
            g = obj.batch_loss_grad(x, batch)[1]
            count += 1
            delta = g - mean
            mean += delta / count
            m2 += delta * (g - mean)
    return np.maximum(m2 / count, 0.0)

