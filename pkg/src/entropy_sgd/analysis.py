"""Post-hoc instruments: eigenspectra, gradient angles, empirical smoothness."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ArgumentError, NumericError

FIG1_THRESHOLD = 1e-4
FIG3A_THRESHOLD = 1e-2
FIG3BC_THRESHOLD = 1e-5


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # ascending
    source: str = "exact_hessian"
    eigenvectors: np.ndarray = field(default=None, repr=False)
    trace_input: float = float("nan")

    @property
    def n(self):
        return self.eigenvalues.size

    @property
    def min_eig(self):
        return float(self.eigenvalues[0])

    @property
    def max_eig(self):
        return float(self.eigenvalues[-1])

    @property
    def trace(self):
        return float(np.sum(self.eigenvalues))

    def frac_near_zero(self, threshold):
        """Fraction of eigenvalues with ``|lambda| <= threshold``."""
        return float(np.count_nonzero(np.abs(self.eigenvalues) <= threshold)) / self.n

    def histogram(self, bins=50, zero_band=1e-2, zero_bins=10):
        """Fixed-width bins over ``[min, max]`` plus finer bins on ``[-zero_band, zero_band]``."""
        lo, hi = self.min_eig, self.max_eig
        if hi == lo:
            hi = lo + 1.0
        coarse = np.histogram(self.eigenvalues, bins=bins, range=(lo, hi))
        fine = np.histogram(self.eigenvalues, bins=zero_bins, range=(-zero_band, zero_band))
        return {"coarse": coarse, "zero": fine}

    def summary(self):
        return {
            "n": self.n,
            "source": self.source,
            "frac_abs_below_1e-2": self.frac_near_zero(FIG3A_THRESHOLD),
            "frac_abs_below_1e-4": self.frac_near_zero(FIG1_THRESHOLD),
            "frac_abs_below_1e-5": self.frac_near_zero(FIG3BC_THRESHOLD),
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "trace": self.trace,
        }

    def write(self, csv_path, json_path, extra=None):
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eigenvalue"])
            for lam in self.eigenvalues:
                writer.writerow([repr(float(lam))])
        summary = self.summary()
        if extra:
            summary.update(extra)
        with open(json_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return summary


def spectrum_report(matrix=None, fisher_diag=None, keep_vectors=False):
    """Eigenvalues of a symmetric matrix, or the sorted entries of a Fisher diagonal."""
    if (matrix is None) == (fisher_diag is None):
        raise ArgumentError("pass exactly one of matrix or fisher_diag")
    if fisher_diag is not None:
        d = np.sort(np.asarray(fisher_diag, dtype=np.float64))
        return SpectrumReport(d, "fisher_diagonal", trace_input=float(np.sum(d)))
    H = np.asarray(matrix, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ArgumentError("matrix must be square")
    if not np.array_equal(H, H.T):
        raise ArgumentError("matrix must be exactly symmetric (symmetrise first)")
    try:
        if keep_vectors:
            lam, Q = scipy.linalg.eigh(H)
        else:
            lam, Q = scipy.linalg.eigh(H, eigvals_only=True), None
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from None
    return SpectrumReport(lam, "exact_hessian", Q, float(np.trace(H)))


@dataclass
class AngleTrace:
    angles: list = field(default_factory=list)

    def append(self, g_entropy, g_sgd):
        angle = gradient_angle(g_entropy, g_sgd)
        self.angles.append(angle)
        return angle


def gradient_angle(u, v):
    """Angle in degrees between two nonzero vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ArgumentError("angle is undefined for a zero vector")
    u, v = u / nu, v / nv
    # atan2 form stays accurate for nearly (anti)parallel vectors, unlike acos
    return math.degrees(2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def empirical_smoothness(grad_fn, sampler, pairs, rng):
    """Largest ``|grad(x) - grad(y)| / |x - y|`` over ``pairs`` sampled point pairs.

    ``sampler(rng)`` draws one point of the region of interest.
    """
    if pairs < 100:
        raise ArgumentError("use at least 100 pairs")
    best, spread = 0.0, 0.0
    for _ in range(pairs):
        x, y = np.asarray(sampler(rng), dtype=np.float64), np.asarray(sampler(rng), dtype=np.float64)
        dist = np.linalg.norm(x - y)
        spread = max(spread, dist)
        if dist == 0:
            continue
        best = max(best, float(np.linalg.norm(np.asarray(grad_fn(x)) - np.asarray(grad_fn(y)))) / dist)
    if spread == 0:
        raise ArgumentError("sampling region has zero diameter")
    return best


def ball_sampler(center, radius):
    """Uniform sampler on the Euclidean ball of ``radius`` around ``center``."""
    center = np.asarray(center, dtype=np.float64)
    n = center.size

    def draw(rng):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        return center + radius * rng.random() ** (1.0 / n) * d

    return draw
