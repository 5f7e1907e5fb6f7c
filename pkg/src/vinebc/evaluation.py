"""Correction quality metrics.

Second Wasserstein distance with reference standardization (exact quantile
formula in one dimension, exact assignment on seeded equal-size subsamples
in higher dimensions), the improvement IW2 = W2(model, ref) - W2(corrected,
ref), per-margin and copula-level variants, empirical joint non-exceedance
probability, and the model-correction inconsistency (MCI).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ._util import subseed

OT_SUBSAMPLE = 512
OT_REPEATS = 4
MCI_THRESHOLD = 0.05


def _w2_exact_1d(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    n, m = a.size, b.size
    qa = np.arange(1, n + 1) / n
    qb = np.arange(1, m + 1) / m
    edges = np.union1d(qa, qb)
    widths = np.diff(np.concatenate(([0.0], edges)))
    mids = np.concatenate(([0.0], edges))[:-1] + widths / 2.0
    ia = np.searchsorted(qa, mids, side="left")
    ib = np.searchsorted(qb, mids, side="left")
    return float(np.sqrt(np.sum(widths * (a[ia] - b[ib]) ** 2)))


def _w2_assignment(a: np.ndarray, b: np.ndarray) -> float:
    cost = cdist(a, b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def wasserstein2(a, b, standardize: bool = True, seed: int = 0,
                 subsample: int = OT_SUBSAMPLE, repeats: int = OT_REPEATS) -> float:
    """Second Wasserstein distance between two empirical samples.

    Both samples are standardized per coordinate by the location and scale
    of ``b`` (the reference) unless disabled.  One-dimensional inputs use the
    exact quantile formula; otherwise exact optimal transport runs on seeded
    subsamples of at most ``subsample`` points and the distances of
    ``repeats`` repetitions are averaged.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("samples must be 2-d with matching variable count")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("samples must be nonempty")
    if standardize:
        mu = b.mean(axis=0)
        sd = b.std(axis=0)
        zero = sd == 0.0
        if np.any(zero):
            warnings.warn("zero variance in a reference coordinate; centering only")
            sd = np.where(zero, 1.0, sd)
        a = (a - mu) / sd
        b = (b - mu) / sd
    d = a.shape[1]
    if d == 1:
        return _w2_exact_1d(a[:, 0], b[:, 0])
    n, m = a.shape[0], b.shape[0]
    s = min(subsample, n, m)
    if n == m and n <= subsample:
        return _w2_assignment(a, b)
    vals = []
    for r in range(repeats):
        rng = np.random.default_rng(subseed(seed, r))
        ia = rng.choice(n, size=s, replace=False)
        ib = rng.choice(m, size=s, replace=False)
        vals.append(_w2_assignment(a[ia], b[ib]))
    return float(np.mean(vals))


def improvement_iw2(corrected, model, reference, standardize: bool = True, seed: int = 0,
                    **kwargs) -> float:
    """W2(model, reference) minus W2(corrected, reference); positive is better."""
    w2_model = wasserstein2(model, reference, standardize=standardize, seed=seed, **kwargs)
    w2_corr = wasserstein2(corrected, reference, standardize=standardize, seed=seed, **kwargs)
    return w2_model - w2_corr


def per_margin_iw2(corrected, model, reference) -> np.ndarray:
    """Univariate IW2 per margin; no standardization (scales are comparable)."""
    corrected = np.asarray(corrected, dtype=float)
    model = np.asarray(model, dtype=float)
    reference = np.asarray(reference, dtype=float)
    out = np.empty(corrected.shape[1])
    for j in range(corrected.shape[1]):
        out[j] = _w2_exact_1d(model[:, j], reference[:, j]) - _w2_exact_1d(
            corrected[:, j], reference[:, j]
        )
    return out


def empirical_randomized_pit(x, seed: int = 0) -> np.ndarray:
    """Per-column empirical PIT with one seeded jitter across each tie block."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    u = np.empty_like(x)
    for j in range(d):
        col = x[:, j]
        srt = np.sort(col)
        hi = np.searchsorted(srt, col, side="right") / n
        lo = np.searchsorted(srt, col, side="left") / n
        w = rng.uniform(size=n)
        u[:, j] = lo + w * (hi - lo)
    return u


def copula_iw2(corrected, model, reference, seed: int = 0, **kwargs) -> float:
    """IW2 between each sample's own empirical-PIT pseudo-observations."""
    pit_c = empirical_randomized_pit(np.asarray(corrected, float), seed=subseed(seed, 1))
    pit_m = empirical_randomized_pit(np.asarray(model, float), seed=subseed(seed, 2))
    pit_r = empirical_randomized_pit(np.asarray(reference, float), seed=subseed(seed, 3))
    return improvement_iw2(pit_c, pit_m, pit_r, standardize=False, seed=seed, **kwargs)


def empirical_joint_cdf(data, x):
    """Fraction of rows componentwise <= x (non-exceedance includes ties)."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    xq = np.asarray(x, dtype=float)
    single = xq.ndim == 1
    xq = np.atleast_2d(xq)
    if xq.shape[1] != data.shape[1]:
        raise ValueError("query points must match the data dimension")
    n = data.shape[0]
    out = np.empty(xq.shape[0])
    block = max(1, int(2**22 // max(1, n * data.shape[1])))
    for start in range(0, xq.shape[0], block):
        q = xq[start : start + block]
        out[start : start + block] = (data[None, :, :] <= q[:, None, :]).all(axis=2).mean(axis=1)
    return float(out[0]) if single else out


def mci(model_rows, corrected_rows):
    """Model-correction inconsistency series and its mean.

    Each time step compares the model row's non-exceedance probability under
    the model's own empirical joint CDF with the corrected row's probability
    under the corrected set's empirical joint CDF.
    """
    model_rows = np.atleast_2d(np.asarray(model_rows, dtype=float))
    corrected_rows = np.atleast_2d(np.asarray(corrected_rows, dtype=float))
    if model_rows.shape != corrected_rows.shape:
        raise ValueError(
            f"row-count mismatch: model {model_rows.shape} vs corrected {corrected_rows.shape}"
        )
    f_model = empirical_joint_cdf(model_rows, model_rows)
    f_corr = empirical_joint_cdf(corrected_rows, corrected_rows)
    series = np.abs(np.atleast_1d(f_model) - np.atleast_1d(f_corr))
    return series, float(series.mean())


@dataclass
class UnitMetrics:
    """Metrics for one (chunk, member) correction unit."""

    chunk: str
    member: int
    method: str
    w2_model: float
    w2_corrected: float
    mci_mean: float
    copula_iw2: float
    margin_iw2: dict
    seed: int = 0

    @property
    def iw2(self) -> float:
        return self.w2_model - self.w2_corrected

    @property
    def non_invasive(self) -> bool:
        return self.mci_mean < MCI_THRESHOLD


@dataclass
class MetricReport:
    units: list = field(default_factory=list)

    def add(self, unit: UnitMetrics) -> None:
        self.units.append(unit)

    def sorted_units(self) -> list:
        return sorted(self.units, key=lambda u: (u.method, u.chunk, u.member))

    def margin_names(self) -> list:
        names = []
        for u in self.units:
            for k in u.margin_iw2:
                if k not in names:
                    names.append(k)
        return names

    def aggregates(self) -> dict:
        out = {}
        methods = sorted({u.method for u in self.units})
        for method in methods:
            rows = [u for u in self.units if u.method == method]
            iw2 = np.array([u.iw2 for u in rows])
            mci_means = np.array([u.mci_mean for u in rows])
            cop = np.array([u.copula_iw2 for u in rows])
            out[method] = {
                "n_units": len(rows),
                "iw2_median": float(np.median(iw2)),
                "iw2_q25": float(np.percentile(iw2, 25)),
                "iw2_q75": float(np.percentile(iw2, 75)),
                "share_improved": float((iw2 > 0).mean()),
                "copula_iw2_median": float(np.median(cop)),
                "mci_median": float(np.median(mci_means)),
                "mci_q25": float(np.percentile(mci_means, 25)),
                "mci_q75": float(np.percentile(mci_means, 75)),
                "share_non_invasive": float((mci_means < MCI_THRESHOLD).mean()),
            }
        return out
