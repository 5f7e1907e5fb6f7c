"""Round-trip invariants for models with atoms.

Atoms map to atoms exactly under inverse-then-forward, and the original
uniform levels are reproduced when the forward noise is chosen as each
level's position inside its conditional jump.  The conditional jump ends
are read off the forward transform itself at noise 0 and 1.
"""
import numpy as np
import pytest
from scipy import stats

from conftest import PARAMETRIC_FAMILIES, nearest_correlation
from vinebc.vine import fit_vine, rosenblatt_forward, rosenblatt_inverse


@pytest.fixture(scope="module")
def zi_model():
    rng = np.random.default_rng(55)
    n = 3000
    r = nearest_correlation(np.array([[0.0, 0.4, 0.25], [0.4, 0.0, 0.3], [0.25, 0.3, 0.0]]))
    z = rng.multivariate_normal(np.zeros(3), r, size=n)
    u = stats.norm.cdf(z)
    x = np.column_stack(
        [
            np.where(u[:, 0] <= 0.45, 0.0, -np.log1p(-(u[:, 0] - 0.45) / 0.55)),
            2.0 * stats.norm.ppf(u[:, 1]),
            np.where(u[:, 2] <= 0.3, 0.0, -2.0 * np.log1p(-(u[:, 2] - 0.3) / 0.7)),
        ]
    )
    return fit_vine(x, ["zero_inflated", "interval", "zero_inflated"],
                    family_set=PARAMETRIC_FAMILIES, seed=56)


def test_inverse_then_forward_with_jump_position_noise(zi_model):
    rng = np.random.default_rng(57)
    v0 = np.clip(rng.uniform(size=(800, 3)), 1e-9, 1 - 1e-9)
    x = rosenblatt_inverse(zi_model, v0)
    assert (x[:, 0] == 0.0).any() and (x[:, 2] == 0.0).any()
    # conditional jump ends per coordinate from the forward transform itself
    hi = rosenblatt_forward(zi_model, x, np.ones_like(x))
    lo = rosenblatt_forward(zi_model, x, np.zeros_like(x))
    gap = hi - lo
    discrete = gap > 0
    # every level that produced an atom lies inside its conditional jump
    assert np.all(v0[discrete] <= hi[discrete] + 1e-9)
    assert np.all(v0[discrete] >= lo[discrete] - 1e-9)
    w = np.full_like(x, 0.5)
    w[discrete] = (v0[discrete] - lo[discrete]) / gap[discrete]
    v1 = rosenblatt_forward(zi_model, x, np.clip(w, 0.0, 1.0))
    assert np.abs(v1 - v0).max() < 1e-6


def test_atoms_map_to_atoms_exactly(zi_model):
    rng = np.random.default_rng(58)
    v = np.clip(rng.uniform(size=(2000, 3)), 1e-9, 1 - 1e-9)
    x = rosenblatt_inverse(zi_model, v)
    for j in (0, 2):
        zero_share = (x[:, j] == 0.0).mean()
        fitted = zi_model.margins[j].atom_masses[0]
        assert zero_share == pytest.approx(fitted, abs=0.03)
        # no near-zero smearing: values are either exactly zero or clearly positive
        pos = x[x[:, j] > 0.0, j]
        assert pos.min() > 1e-12
