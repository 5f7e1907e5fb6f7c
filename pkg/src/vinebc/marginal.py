"""Univariate discrete-continuous mixture margins.

A margin is a finite set of atoms ``(value, mass)`` plus an absolutely
continuous component.  The continuous part is kept as a piecewise-linear
density on a knot grid with exponential tails, so the distribution function,
its left limits, the generalized quantile and the mixed density (with respect
to the sum of Dirac measures at the atoms and Lebesgue measure elsewhere) are
all available in closed form and are exact inverses of each other.

Bounded supports (nonnegative and zero-inflated variables) are fitted on the
log scale; the zero-inflated kind treats an exact zero as the only candidate
atom.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._util import as_float_array, maybe_scalar
from .errors import DomainError, EstimationError

GRID_SIZE = 512
ATOM_THRESHOLD = 0.01
MIN_SAMPLE = 30
_MASS_TOL = 1e-9

SUPPORT_KINDS = ("interval", "nonnegative", "zero_inflated")

_KIND_ALIASES = {
    "interval": "interval",
    "nonnegative": "nonnegative",
    "nonnegative-continuous": "nonnegative",
    "zero_inflated": "zero_inflated",
    "zero-inflated": "zero_inflated",
}


def normalize_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown support kind {kind!r}; expected one of {SUPPORT_KINDS}") from None


class GridDensity:
    """Piecewise-linear density on a strictly increasing knot grid.

    Beyond the grid the density decays exponentially with the given tail
    scales, so quantiles exist for every level in (0, 1).  On construction
    the density is rescaled so grid mass plus both tail masses equal one.
    """

    def __init__(self, knots, pdf_values, tail_scale_lo, tail_scale_hi):
        knots = np.asarray(knots, dtype=float)
        pdf = np.asarray(pdf_values, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or knots.shape != pdf.shape:
            raise ValueError("knots and pdf_values must be 1-d arrays of equal length >= 2")
        if np.any(~np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be finite and strictly increasing")
        if np.any(pdf < 0) or np.any(~np.isfinite(pdf)):
            raise ValueError("pdf_values must be finite and nonnegative")
        s_lo = float(tail_scale_lo)
        s_hi = float(tail_scale_hi)
        if s_lo <= 0 or s_hi <= 0:
            raise ValueError("tail scales must be positive")
        seg = 0.5 * np.diff(knots) * (pdf[:-1] + pdf[1:])
        total = seg.sum() + pdf[0] * s_lo + pdf[-1] * s_hi
        if total <= 0:
            raise ValueError("density has zero total mass")
        if abs(total - 1.0) < 1e-12:
            total = 1.0  # already normalized; keep reloads bit-exact
        self.knots = knots
        self.pdf_values = pdf / total
        self.tail_scale_lo = s_lo
        self.tail_scale_hi = s_hi
        self.mass_lo = self.pdf_values[0] * s_lo
        self.mass_hi = self.pdf_values[-1] * s_hi
        # recompute segments from the normalized density so that construction
        # from already-normalized values reproduces the same rounding path
        seg_n = 0.5 * np.diff(knots) * (self.pdf_values[:-1] + self.pdf_values[1:])
        self._cum = self.mass_lo + np.concatenate(([0.0], np.cumsum(seg_n)))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        k = self.knots
        below = z < k[0]
        above = z > k[-1]
        mid = ~(below | above)
        out[below] = self.mass_lo * np.exp((z[below] - k[0]) / self.tail_scale_lo)
        out[above] = 1.0 - self.mass_hi * np.exp(-(z[above] - k[-1]) / self.tail_scale_hi)
        if np.any(mid):
            zm = z[mid]
            i = np.clip(np.searchsorted(k, zm, side="right") - 1, 0, k.size - 2)
            h = k[i + 1] - k[i]
            dz = zm - k[i]
            slope = (self.pdf_values[i + 1] - self.pdf_values[i]) / h
            out[mid] = self._cum[i] + self.pdf_values[i] * dz + 0.5 * slope * dz * dz
        return np.clip(out, 0.0, 1.0)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.knots, self.pdf_values)
        k = self.knots
        below = z < k[0]
        above = z > k[-1]
        out = np.where(below, self.pdf_values[0] * np.exp((z - k[0]) / self.tail_scale_lo), out)
        out = np.where(above, self.pdf_values[-1] * np.exp(-(z - k[-1]) / self.tail_scale_hi), out)
        return out

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        k = self.knots
        cum = self._cum
        lo = q < cum[0]
        hi = q > cum[-1]
        mid = ~(lo | hi)
        with np.errstate(divide="ignore"):
            out[lo] = k[0] + self.tail_scale_lo * np.log(np.maximum(q[lo], 0.0) / self.mass_lo)
            out[hi] = k[-1] - self.tail_scale_hi * np.log(np.maximum(1.0 - q[hi], 0.0) / self.mass_hi)
        if np.any(mid):
            qm = q[mid]
            i = np.clip(np.searchsorted(cum, qm, side="right") - 1, 0, k.size - 2)
            h = k[i + 1] - k[i]
            b = self.pdf_values[i]
            a = (self.pdf_values[i + 1] - b) / h
            r = qm - cum[i]
            # solve 0.5*a*dz^2 + b*dz = r for dz in [0, h]; stable root form
            disc = np.sqrt(np.maximum(b * b + 2.0 * a * r, 0.0))
            denom = b + disc
            dz = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
            out[mid] = k[i] + np.clip(dz, 0.0, h)
        return out

    def to_dict(self) -> dict:
        return {
            "knots": self.knots.tolist(),
            "pdf": self.pdf_values.tolist(),
            "tail_scale_lo": self.tail_scale_lo,
            "tail_scale_hi": self.tail_scale_hi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridDensity":
        return cls(d["knots"], d["pdf"], d["tail_scale_lo"], d["tail_scale_hi"])


class TransformedGridDensity:
    """A :class:`GridDensity` viewed through x = z (identity) or x = exp(z)."""

    def __init__(self, grid: GridDensity, log_scale: bool):
        self.grid = grid
        self.log_scale = bool(log_scale)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if not self.log_scale:
            return self.grid.cdf(x)
        out = np.zeros_like(x)
        pos = x > 0
        if np.any(pos):
            out[pos] = self.grid.cdf(np.log(x[pos]))
        return out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if not self.log_scale:
            return self.grid.pdf(x)
        out = np.zeros_like(x)
        pos = x > 0
        if np.any(pos):
            out[pos] = self.grid.pdf(np.log(x[pos])) / x[pos]
        return out

    def quantile(self, q):
        z = self.grid.quantile(q)
        return np.exp(z) if self.log_scale else z

    def to_dict(self) -> dict:
        return {"transform": "log" if self.log_scale else "identity", **self.grid.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformedGridDensity":
        return cls(GridDensity.from_dict(d), d["transform"] == "log")


@dataclass(frozen=True)
class MarginalEvaluation:
    """CDF, left-limit CDF and mixed density at one or more points."""

    cdf: object
    cdf_left: object
    density: object


class MixtureMarginal:
    """Finite atoms plus a continuous component with total mass one.

    Parameters
    ----------
    atoms : sequence of (value, mass)
        Atom locations and their probability masses; masses in (0, 1].
    continuous : object or None
        Any object with vectorized ``cdf``, ``pdf`` and ``quantile`` methods
        describing the continuous component normalized to total mass one.
        ``None`` only for fully atomic (degenerate) margins.
    kind : str
        Support kind: interval, nonnegative or zero_inflated.
    """

    def __init__(self, atoms, continuous, kind, bandwidth=None, degenerate_continuous=False):
        kind = normalize_kind(kind)
        pairs = sorted((float(v), float(m)) for v, m in atoms)
        values = np.array([p[0] for p in pairs], dtype=float)
        masses = np.array([p[1] for p in pairs], dtype=float)
        if values.size and np.any(np.diff(values) <= 0):
            raise ValueError("atom values must be distinct")
        if np.any(masses <= 0) or masses.sum() > 1.0 + _MASS_TOL:
            raise ValueError("atom masses must be in (0, 1] and sum to at most 1")
        cont_mass = max(0.0, 1.0 - masses.sum())
        if cont_mass < _MASS_TOL:
            degenerate_continuous = True
            cont_mass = 0.0
            continuous = None
        elif continuous is None:
            raise ValueError("continuous component required when atom masses sum below 1")
        self.atom_values = values
        self.atom_masses = masses
        self._atom_csum = np.concatenate(([0.0], np.cumsum(masses)))
        self.continuous = continuous
        self.continuous_mass = cont_mass
        self.kind = kind
        self.bandwidth = bandwidth
        self.degenerate_continuous = bool(degenerate_continuous)

    # -- evaluation ---------------------------------------------------------

    def _cont_cdf(self, x):
        if self.continuous is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.continuous.cdf(x)

    def cdf(self, x):
        xa = as_float_array(x)
        below = self._atom_csum[np.searchsorted(self.atom_values, xa, side="right")]
        out = below + self.continuous_mass * self._cont_cdf(xa)
        return maybe_scalar(np.clip(out, 0.0, 1.0), x)

    def cdf_left(self, x):
        xa = as_float_array(x)
        below = self._atom_csum[np.searchsorted(self.atom_values, xa, side="left")]
        out = below + self.continuous_mass * self._cont_cdf(xa)
        return maybe_scalar(np.clip(out, 0.0, 1.0), x)

    def density(self, x):
        """Mixed density: atom mass at atoms, scaled continuous pdf elsewhere."""
        xa = as_float_array(x)
        out = np.zeros_like(xa)
        if self.continuous is not None:
            out = self.continuous_mass * self.continuous.pdf(xa)
        if self.atom_values.size:
            idx = np.searchsorted(self.atom_values, xa)
            idx_c = np.clip(idx, 0, self.atom_values.size - 1)
            hit = self.atom_values[idx_c] == xa
            out = np.where(hit, self.atom_masses[idx_c], out)
        return maybe_scalar(out, x)

    def evaluate(self, x) -> MarginalEvaluation:
        return MarginalEvaluation(cdf=self.cdf(x), cdf_left=self.cdf_left(x), density=self.density(x))

    def quantile(self, v):
        """Generalized inverse: smallest x with F(x) >= v.

        A level inside an atom's jump interval maps to the atom value.
        """
        va = np.clip(as_float_array(v), 0.0, 1.0)
        out = np.empty_like(va)
        if self.atom_values.size:
            jump_hi = self.cdf(self.atom_values)
            jump_lo = self.cdf_left(self.atom_values)
            jump_hi = np.atleast_1d(jump_hi)
            jump_lo = np.atleast_1d(jump_lo)
            idx = np.searchsorted(jump_lo, va, side="right") - 1
            idx_c = np.clip(idx, 0, self.atom_values.size - 1)
            on_atom = (idx >= 0) & (va <= jump_hi[idx_c] + 1e-15)
            out[on_atom] = self.atom_values[idx_c[on_atom]]
            rest = ~on_atom
            if np.any(rest):
                n_below = np.searchsorted(jump_hi, va[rest], side="left")
                below_mass = self._atom_csum[n_below]
                if self.continuous is None:
                    # fully atomic margin: clamp to nearest atom above
                    out[rest] = self.atom_values[np.clip(n_below, 0, self.atom_values.size - 1)]
                else:
                    vc = (va[rest] - below_mass) / self.continuous_mass
                    out[rest] = self.continuous.quantile(np.clip(vc, 0.0, 1.0))
        else:
            out[:] = self.continuous.quantile(va)
        return maybe_scalar(out, v)

    def pseudo_obs(self, x):
        """Return (F(x), F_left(x)) as a pair of arrays."""
        xa = as_float_array(x)
        return np.asarray(self.cdf(xa)), np.asarray(self.cdf_left(xa))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        if self.continuous is not None and not isinstance(self.continuous, TransformedGridDensity):
            raise TypeError("only grid-backed margins are serializable")
        return {
            "version": 1,
            "kind": self.kind,
            "atoms": [[v, m] for v, m in zip(self.atom_values, self.atom_masses)],
            "bandwidth": self.bandwidth,
            "degenerate_continuous": self.degenerate_continuous,
            "continuous": None if self.continuous is None else self.continuous.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureMarginal":
        cont = None if d["continuous"] is None else TransformedGridDensity.from_dict(d["continuous"])
        return cls(
            atoms=d["atoms"],
            continuous=cont,
            kind=d["kind"],
            bandwidth=d["bandwidth"],
            degenerate_continuous=d["degenerate_continuous"],
        )


# -- fitting ---------------------------------------------------------------

_BANDWIDTH_RULES = ("normal_reference", "silverman")


def _reference_bandwidth(z: np.ndarray, rule: str) -> float:
    sd = float(np.std(z))
    q75, q25 = np.percentile(z, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    if spread <= 0:
        spread = max(sd, 1e-6)
    factor = 1.06 if rule == "normal_reference" else 0.9
    return factor * spread * z.size ** (-0.2)


def _kde_on_grid(z: np.ndarray, knots: np.ndarray, bw: float) -> np.ndarray:
    out = np.zeros(knots.size)
    norm = 1.0 / (bw * math.sqrt(2.0 * math.pi) * z.size)
    # chunk the knot axis so the pairwise matrix stays small
    step = max(1, int(4_000_000 // max(1, z.size)))
    for start in range(0, knots.size, step):
        kk = knots[start : start + step]
        d = (kk[:, None] - z[None, :]) / bw
        out[start : start + step] = np.exp(-0.5 * d * d).sum(axis=1) * norm
    return out


def fit_marginal(
    sample,
    kind: str,
    bandwidth_rule: str = "normal_reference",
    atom_threshold: float = ATOM_THRESHOLD,
    grid_size: int = GRID_SIZE,
) -> MixtureMarginal:
    """Fit a mixture margin: detect atoms, then kernel-smooth the rest.

    Atoms are exactly repeated values with relative frequency at least
    ``atom_threshold``; the zero-inflated kind instead treats exact zeros as
    the only candidate atom regardless of frequency.  The continuous
    remainder is fitted by a Gaussian KDE with a normal-reference bandwidth,
    on the log scale for bounded supports, and stored on a knot grid.
    """
    kind = normalize_kind(kind)
    if bandwidth_rule not in _BANDWIDTH_RULES:
        raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < MIN_SAMPLE:
        raise EstimationError(f"need at least {MIN_SAMPLE} observations, got {x.size}")
    if np.any(~np.isfinite(x)):
        raise EstimationError("sample contains non-finite values")
    if kind != "interval" and np.any(x < 0):
        raise EstimationError(f"{kind} variable contains negative values")

    n = x.size
    if kind == "zero_inflated":
        zero_mask = x == 0.0
        atoms = [(0.0, zero_mask.sum() / n)] if np.any(zero_mask) else []
        cont = x[~zero_mask]
    else:
        values, counts = np.unique(x, return_counts=True)
        is_atom = (counts >= 2) & (counts / n >= atom_threshold)
        atoms = [(float(v), float(c) / n) for v, c in zip(values[is_atom], counts[is_atom])]
        cont = x[~np.isin(x, values[is_atom])]

    log_scale = kind in ("nonnegative", "zero_inflated")
    if log_scale and cont.size:
        nonpos = cont <= 0
        if np.any(nonpos):
            warnings.warn(
                f"dropping {int(nonpos.sum())} sub-threshold zero values from the "
                "log-scale continuous fit"
            )
            cont = cont[~nonpos]

    if cont.size == 0 or np.ptp(cont) == 0.0:
        if cont.size and np.ptp(cont) == 0.0:
            atoms.append((float(cont[0]), cont.size / n))
        total = sum(m for _, m in atoms)
        atoms = [(v, m / total) for v, m in atoms]
        return MixtureMarginal(atoms, None, kind, degenerate_continuous=True)

    z = np.log(cont) if log_scale else cont
    bw = _reference_bandwidth(z, bandwidth_rule)
    lo, hi = z.min() - 4.0 * bw, z.max() + 4.0 * bw
    knots = np.linspace(lo, hi, grid_size)
    pdf = _kde_on_grid(z, knots, bw)
    grid = GridDensity(knots, pdf, tail_scale_lo=bw, tail_scale_hi=bw)
    continuous = TransformedGridDensity(grid, log_scale)
    return MixtureMarginal(atoms, continuous, kind, bandwidth=bw)


# -- spec-facing operation wrappers ----------------------------------------

def marginal_eval(m: MixtureMarginal, x) -> MarginalEvaluation:
    return m.evaluate(x)


def marginal_quantile(m: MixtureMarginal, v):
    return m.quantile(v)


def randomized_pit(m: MixtureMarginal, x, w):
    """Randomized probability integral transform w*F(x) + (1-w)*F_left(x)."""
    xa = as_float_array(x)
    wa = np.asarray(w, dtype=float)
    if np.any((wa < 0) | (wa > 1)):
        raise DomainError("randomization weights must lie in [0, 1]")
    u = np.asarray(m.cdf(xa))
    ul = np.asarray(m.cdf_left(xa))
    out = wa * u + (1.0 - wa) * ul
    return maybe_scalar(out, x, w)
