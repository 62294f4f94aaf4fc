"""KL divergence between fitted models of the same family, plus linear fusion.

Values are reported in nats. Histograms use the exact discrete sum after
rebinning onto shared edges; KDEs use deterministic trapezoid integration on a
wide grid; GMMs use the variational approximation built from closed-form
Gaussian component divergences. Divergence across model families is rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .densities import GMM, KDE, Histogram, kde_pdf

#: Denominator density floor; keeps the KDE integrand finite on disjoint supports.
Q_FLOOR = 1e-300

KDE_GRID_POINTS = 4096


@dataclass(frozen=True)
class KlResult:
    value: float
    method: str
    grid_spec: tuple[float, float, int] | None = None

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"KL value must be finite and non-negative, got {self.value}")


def _clamp(value: float) -> float:
    # tiny negatives are round-off; true KL is non-negative
    return max(float(value), 0.0)


def kl_histogram(p: Histogram, q: Histogram) -> KlResult:
    """Discrete KL over shared bins.

    If the edge sets differ, both histograms are rebinned onto their union by
    mass-proportional overlap; both mass vectors are then re-smoothed with the
    models' additive eps so bins outside either support stay positive.
    """
    if np.array_equal(p.edges, q.edges):
        edges = p.edges
        pm, qm = p.masses.copy(), q.masses.copy()
    else:
        edges = np.union1d(p.edges, q.edges)
        pm = _rebin(p, edges)
        qm = _rebin(q, edges)
    eps = max(p.smoothing_eps, q.smoothing_eps)
    if eps > 0:
        n_bins = len(edges) - 1
        pm = (pm + eps) / (1.0 + n_bins * eps)
        qm = (qm + eps) / (1.0 + n_bins * eps)
    mask = pm > 0
    value = float(np.sum(pm[mask] * np.log(pm[mask] / qm[mask])))
    return KlResult(value=_clamp(value), method="discrete")


def _rebin(h: Histogram, edges: np.ndarray) -> np.ndarray:
    """Masses on the target edges, assuming uniform density within source bins."""
    cumulative = np.concatenate(([0.0], np.cumsum(h.masses)))
    cdf = np.interp(edges, h.edges, cumulative, left=0.0, right=float(cumulative[-1]))
    return np.diff(cdf)


def kl_kde(p: KDE, q: KDE, n_points: int = KDE_GRID_POINTS) -> KlResult:
    """Trapezoid-rule estimate of the integral p(x) log(p(x)/q(x)) dx.

    The uniform grid spans the union of both sample ranges widened by 5x the
    larger bandwidth; the denominator is floored at 1e-300.
    """
    pad = 5.0 * max(p.bandwidth, q.bandwidth)
    lo = min(float(p.sample_points.min()), float(q.sample_points.min())) - pad
    hi = max(float(p.sample_points.max()), float(q.sample_points.max())) + pad
    grid = np.linspace(lo, hi, n_points)
    px = np.asarray(kde_pdf(p, grid))
    qx = np.maximum(np.asarray(kde_pdf(q, grid)), Q_FLOOR)
    integrand = np.where(px > 0, px * np.log(np.maximum(px, Q_FLOOR) / qx), 0.0)
    value = float(np.trapezoid(integrand, grid))
    return KlResult(value=_clamp(value), method="grid", grid_spec=(lo, hi, n_points))


def gaussian_kl(mean_p: float, var_p: float, mean_q: float, var_q: float) -> float:
    """Closed-form KL between two univariate Gaussians, in nats."""
    return 0.5 * (math.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / var_q - 1.0)


def kl_gmm(p: GMM, q: GMM) -> KlResult:
    """Variational approximation of KL between two Gaussian mixtures.

    D = sum_a w_a * log( sum_a' w_a' exp(-KL(f_a||f_a'))
                         / sum_b v_b exp(-KL(f_a||g_b)) )
    with closed-form Gaussian component divergences; clamped at 0 from below.
    Identical mixtures give exactly 0.
    """
    kl_pp = _pairwise_gaussian_kl(p, p)
    kl_pq = _pairwise_gaussian_kl(p, q)
    numerator = _log_weighted_sum_exp(p.weights, -kl_pp)
    denominator = _log_weighted_sum_exp(q.weights, -kl_pq)
    value = float(np.sum(p.weights * (numerator - denominator)))
    return KlResult(value=_clamp(value), method="variational")


def _pairwise_gaussian_kl(a: GMM, b: GMM) -> np.ndarray:
    var_a = a.variances[:, None]
    var_b = b.variances[None, :]
    delta = a.means[:, None] - b.means[None, :]
    return 0.5 * (np.log(var_b / var_a) + (var_a + delta**2) / var_b - 1.0)


def _log_weighted_sum_exp(weights: np.ndarray, log_terms: np.ndarray) -> np.ndarray:
    row_max = log_terms.max(axis=1, keepdims=True)
    return row_max[:, 0] + np.log(
        np.sum(weights[None, :] * np.exp(log_terms - row_max), axis=1)
    )


_KL_BY_TYPE = {Histogram: kl_histogram, KDE: kl_kde, GMM: kl_gmm}


def kl(p, q) -> KlResult:
    """Dispatch KL on model type; mixing model families is an error."""
    if type(p) is not type(q):
        raise TypeError(
            f"cannot compare {type(p).__name__} against {type(q).__name__}; "
            "each experiment fixes one model family"
        )
    try:
        fn = _KL_BY_TYPE[type(p)]
    except KeyError:
        raise TypeError(f"unsupported model type {type(p).__name__}") from None
    return fn(p, q)


def fuse(kls: Sequence, weights: Iterable[float] | None = None) -> float:
    """Weighted linear combination of per-feature KL values (default weights 1)."""
    values = [k.value if isinstance(k, KlResult) else float(k) for k in kls]
    if weights is None:
        weights = [1.0] * len(values)
    weights = [float(w) for w in weights]
    if len(weights) != len(values):
        raise ValueError(f"got {len(values)} KL values but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ValueError("fusion weights must be non-negative")
    return float(sum(w * v for w, v in zip(weights, values)))
