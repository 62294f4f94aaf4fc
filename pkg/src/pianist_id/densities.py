"""Distribution models over deviation series: histogram, Gaussian KDE, GMM.

All fits are deterministic: the histogram and KDE have no randomness, the GMM
uses a seeded kmeans++-style initialization followed by EM. Fitted models are
immutable and JSON-serializable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

#: Fixed KDE bandwidths per feature kind (seconds for timing kinds, velocity
#: units for DL).
DEFAULT_BANDWIDTHS = {"OT": 1.2, "IOI": 0.01, "OTD": 0.02, "DL": 1.5, "ND": 0.01}

DEFAULT_N_BINS = 50
HISTOGRAM_SMOOTHING_EPS = 1e-9
DEFAULT_GMM_K = 3
GMM_TOL = 1e-8
GMM_MAX_ITER = 500

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_values(series) -> np.ndarray:
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("expected a one-dimensional series")
    return values


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    smoothing_eps: float

    def __post_init__(self):
        if len(self.edges) != len(self.masses) + 1:
            raise ValueError("need len(edges) == len(masses) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(self.masses < 0):
            raise ValueError("masses must be non-negative")
        if abs(float(self.masses.sum()) - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1")

    def to_dict(self) -> dict:
        return {
            "type": "histogram",
            "edges": self.edges.tolist(),
            "masses": self.masses.tolist(),
            "smoothing_eps": self.smoothing_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls(
            edges=np.asarray(d["edges"], dtype=np.float64),
            masses=np.asarray(d["masses"], dtype=np.float64),
            smoothing_eps=float(d["smoothing_eps"]),
        )


@dataclass(frozen=True)
class KDE:
    sample_points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if len(self.sample_points) == 0:
            raise ValueError("KDE needs at least one sample")

    def to_dict(self) -> dict:
        return {
            "type": "kde",
            "sample_points": self.sample_points.tolist(),
            "bandwidth": self.bandwidth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KDE":
        return cls(
            sample_points=np.asarray(d["sample_points"], dtype=np.float64),
            bandwidth=float(d["bandwidth"]),
        )


@dataclass(frozen=True)
class GMM:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        k = len(self.weights)
        if not len(self.means) == len(self.variances) == k or k < 1:
            raise ValueError("weights/means/variances must share a positive length")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("weights must form a probability vector")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @property
    def k(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "type": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GMM":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            means=np.asarray(d["means"], dtype=np.float64),
            variances=np.asarray(d["variances"], dtype=np.float64),
        )


def fit_histogram(series, n_bins: int = DEFAULT_N_BINS) -> Histogram:
    """Equal-width histogram over [min, max] widened by 0.1% per side.

    Counts are normalized, then each bin gets 1e-9 additive mass and the
    vector is renormalized so all masses stay strictly positive (keeps KL
    against other histograms finite). A zero-variance series produces a valid
    single-spike histogram.
    """
    values = _as_values(series)
    if len(values) == 0:
        raise ValueError("cannot fit a histogram to an empty series")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span == 0.0:
        lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = lo - 0.001 * span, hi + 0.001 * span
    counts, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    masses = counts / len(values)
    eps = HISTOGRAM_SMOOTHING_EPS
    masses = (masses + eps) / (1.0 + n_bins * eps)
    return Histogram(edges=edges, masses=masses, smoothing_eps=eps)


def histogram_pdf(model: Histogram, x) -> np.ndarray | float:
    """Density implied by the histogram (mass / bin width; 0 outside range)."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    idx = np.searchsorted(model.edges, xs, side="right") - 1
    # the right edge belongs to the last bin, matching np.histogram
    idx = np.where(xs == model.edges[-1], len(model.masses) - 1, idx)
    inside = (idx >= 0) & (idx < len(model.masses))
    idx = np.clip(idx, 0, len(model.masses) - 1)
    widths = np.diff(model.edges)
    out = np.where(inside, model.masses[idx] / widths[idx], 0.0)
    return out if np.ndim(x) else float(out[0])


def fit_kde(series, bandwidth: float) -> KDE:
    """Gaussian-kernel KDE with a fixed bandwidth."""
    values = _as_values(series)
    if len(values) == 0:
        raise ValueError("cannot fit a KDE to an empty series")
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return KDE(sample_points=values.copy(), bandwidth=float(bandwidth))


def kde_pdf(model: KDE, x) -> np.ndarray | float:
    """pdf(x) = mean of standard-normal kernels centered on the samples."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    h = model.bandwidth
    samples = model.sample_points
    out = np.empty(len(xs))
    # chunk the grid so samples x grid stays within a modest memory budget
    chunk = max(1, int(4_000_000 / max(len(samples), 1)))
    for start in range(0, len(xs), chunk):
        z = (xs[start : start + chunk, None] - samples[None, :]) / h
        out[start : start + chunk] = np.exp(-0.5 * z * z).sum(axis=1)
    out /= len(samples) * h * _SQRT_2PI
    return out if np.ndim(x) else float(out[0])


def fit_gmm(
    series,
    k: int = DEFAULT_GMM_K,
    *,
    seed: int = 0,
    tol: float = GMM_TOL,
    max_iter: int = GMM_MAX_ITER,
    k_cap: int = 3,
) -> GMM:
    """EM fit of a k-component 1-D Gaussian mixture, deterministic under seed."""
    model, _ = fit_gmm_trace(series, k, seed=seed, tol=tol, max_iter=max_iter, k_cap=k_cap)
    return model


def fit_gmm_trace(
    series,
    k: int = DEFAULT_GMM_K,
    *,
    seed: int = 0,
    tol: float = GMM_TOL,
    max_iter: int = GMM_MAX_ITER,
    k_cap: int = 3,
) -> tuple[GMM, np.ndarray]:
    """Like fit_gmm but also returns the per-iteration log-likelihood trace.

    Initialization picks centers kmeans++-style from the samples, then EM runs
    until the log-likelihood gain drops below ``tol`` or ``max_iter`` is hit.
    Variances are floored at 1e-10 x the sample variance (1e-12 absolute for a
    degenerate series).
    """
    values = _as_values(series)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > k_cap:
        raise ValueError(f"k={k} exceeds the component cap {k_cap}")
    if len(values) < k:
        raise ValueError(f"series of length {len(values)} cannot support k={k}")

    sample_var = float(values.var())
    var_floor = 1e-10 * sample_var if sample_var > 0 else 1e-12

    centers = _kmeanspp_centers(values, k, np.random.default_rng(seed))
    assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
    weights = np.empty(k)
    means = np.empty(k)
    variances = np.empty(k)
    for c in range(k):
        members = values[assign == c]
        if len(members) == 0:
            weights[c] = 1.0 / len(values)
            means[c] = centers[c]
            variances[c] = max(sample_var, var_floor)
        else:
            weights[c] = len(members) / len(values)
            means[c] = members.mean()
            variances[c] = max(float(members.var()), var_floor)
    weights /= weights.sum()

    trace = []
    log_likelihood = -np.inf
    for _ in range(max_iter):
        # E step in log space
        log_comp = (
            -0.5 * (np.log(2.0 * np.pi * variances)[None, :]
                    + (values[:, None] - means[None, :]) ** 2 / variances[None, :])
            + np.log(weights)[None, :]
        )
        row_max = log_comp.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.exp(log_comp - row_max).sum(axis=1))
        new_log_likelihood = float(log_norm.sum())
        trace.append(new_log_likelihood)
        resp = np.exp(log_comp - log_norm[:, None])
        # M step
        totals = np.maximum(resp.sum(axis=0), 1e-300)
        weights = totals / len(values)
        means = resp.T @ values / totals
        variances = np.maximum(
            (resp * (values[:, None] - means[None, :]) ** 2).sum(axis=0) / totals,
            var_floor,
        )
        weights = weights / weights.sum()
        if new_log_likelihood - log_likelihood < tol:
            break
        log_likelihood = new_log_likelihood

    model = GMM(weights=weights, means=means, variances=variances)
    return model, np.asarray(trace)


def _kmeanspp_centers(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [values[rng.integers(len(values))]]
    for _ in range(1, k):
        d2 = np.min((values[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0.0:
            centers.append(values[rng.integers(len(values))])
            continue
        target = rng.random() * total
        centers.append(values[np.searchsorted(np.cumsum(d2), target)])
    return np.asarray(centers, dtype=np.float64)


def gmm_pdf(model: GMM, x) -> np.ndarray | float:
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = (xs[:, None] - model.means[None, :]) ** 2 / model.variances[None, :]
    comp = np.exp(-0.5 * z) / np.sqrt(2.0 * np.pi * model.variances)[None, :]
    out = comp @ model.weights
    return out if np.ndim(x) else float(out[0])


# ---------------------------------------------------------------------------
# serialization

_MODEL_TYPES = {"histogram": Histogram, "kde": KDE, "gmm": GMM}


def model_to_json(model) -> str:
    return json.dumps(model.to_dict(), sort_keys=True)


def model_from_json(text: str):
    d = json.loads(text)
    try:
        cls = _MODEL_TYPES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown model type {d.get('type')!r}") from None
    return cls.from_dict(d)
