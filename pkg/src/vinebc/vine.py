"""Regular vine models over discrete-continuous mixture margins.

The vine couples fitted margins with a tree sequence of pair copulas.  All
conditional pseudo-observations are propagated as (u, u_left) pairs so the
generalized density and the randomized Rosenblatt transform stay exact for
atoms at every tree depth.  Structure selection follows the tree-by-tree
maximum spanning tree on absolute Kendall's tau.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._util import subseed
from .copula import (
    DEFAULT_FAMILY_SET,
    BivariateCopula,
    IndependenceCopula,
    PseudoObs,
    copula_from_dict,
    fit_pair,
    gen_density,
    hfunc,
    hfunc_inverse,
    kendall_tau,
    randomize_pseudo,
)
from .errors import EstimationError, NumericsError
from .marginal import MixtureMarginal, fit_marginal, normalize_kind

_SEL_TAG = 101  # seed-derivation tags
_FIT_TAG = 202


def count_structures(d: int) -> int:
    """Number of labeled regular-vine tree sequences on d variables."""
    if d < 2:
        raise ValueError("need at least two variables")
    if d == 2:
        return 1
    exponent = (d - 2) * (d - 3) // 2 - 1
    f = math.factorial(d)
    return f << exponent if exponent >= 0 else f >> (-exponent)


@dataclass
class Edge:
    """One pair-copula edge: conditioned pair (a, b) given the set ``cond``.

    ``child_a``/``child_b`` index the previous-tree edges supplying the
    conditional pseudo-observations of a and b; both are None in tree 0.
    """

    a: int
    b: int
    cond: frozenset = field(default_factory=frozenset)
    child_a: int | None = None
    child_b: int | None = None
    copula: BivariateCopula | None = None

    @property
    def constraint(self) -> frozenset:
        return self.cond | {self.a, self.b}

    def label(self) -> str:
        if self.cond:
            return f"{self.a},{self.b}|{','.join(map(str, sorted(self.cond)))}"
        return f"{self.a},{self.b}"


@dataclass
class VineStructure:
    d: int
    trees: list  # list of list[Edge]

    def validate(self) -> None:
        """Assert tree sizes, acyclicity, and the proximity condition."""
        if len(self.trees) != max(self.d - 1, 0):
            raise ValueError(f"expected {self.d - 1} trees, got {len(self.trees)}")
        for t, tree in enumerate(self.trees):
            if len(tree) != self.d - 1 - t:
                raise ValueError(f"tree {t} must have {self.d - 1 - t} edges")
            # acyclic + spanning via union-find over this tree's node set
            if t == 0:
                node_of = lambda e, side: (e.a if side == 0 else e.b)  # noqa: E731
                n_nodes = self.d
            else:
                node_of = lambda e, side: (e.child_a if side == 0 else e.child_b)  # noqa: E731
                n_nodes = len(self.trees[t - 1])
            parent = list(range(n_nodes))

            def find(i):
                while parent[i] != i:
                    parent[i] = parent[parent[i]]
                    i = parent[i]
                return i

            for e in tree:
                i, j = node_of(e, 0), node_of(e, 1)
                if i is None or j is None:
                    raise ValueError(f"edge {e.label()} in tree {t} missing children")
                ri, rj = find(i), find(j)
                if ri == rj:
                    raise ValueError(f"cycle in tree {t}")
                parent[ri] = rj
            for e in tree:
                if len(e.constraint) != t + 2 or len(e.cond) != t:
                    raise ValueError(f"bad constraint size for edge {e.label()} in tree {t}")
                if t > 0:
                    f1 = self.trees[t - 1][e.child_a]
                    f2 = self.trees[t - 1][e.child_b]
                    if f1.constraint | f2.constraint != e.constraint:
                        raise ValueError(f"children do not span edge {e.label()}")
                    if f1.constraint & f2.constraint != e.cond:
                        raise ValueError(f"children do not intersect to the conditioning set of {e.label()}")
                    if t == 1:
                        shared = {f1.a, f1.b} & {f2.a, f2.b}
                    else:
                        shared = {f1.child_a, f1.child_b} & {f2.child_a, f2.child_b}
                    if not shared:
                        raise ValueError(f"proximity violated at edge {e.label()} in tree {t}")

    def n_edges(self) -> int:
        return sum(len(tree) for tree in self.trees)


def _max_spanning_tree(weights: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm maximizing total weight; -inf marks forbidden pairs."""
    n = weights.shape[0]
    if n == 1:
        return []
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = weights[0].copy()
    best_from = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, -np.inf, best)
        j = int(np.argmax(cand))
        if not np.isfinite(cand[j]):
            raise EstimationError("proximity graph is disconnected")
        edges.append((int(best_from[j]), j))
        in_tree[j] = True
        improve = weights[j] > best
        best = np.where(improve, weights[j], best)
        best_from = np.where(improve, j, best_from)
    return edges


@dataclass
class VineModel:
    """Margins, tree structure and one pair copula per edge."""

    margins: list
    structure: VineStructure
    var_names: list | None = None

    def __post_init__(self):
        self._order, self._diag = _diagonal_order(self.structure)

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def order(self) -> list:
        """Diagonal variable order used by the Rosenblatt transforms."""
        return list(self._order)

    @property
    def pair_copulas(self) -> dict:
        return {
            (t, i): e.copula
            for t, tree in enumerate(self.structure.trees)
            for i, e in enumerate(tree)
        }

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "vinebc-model",
            "version": 1,
            "d": self.d,
            "var_names": self.var_names,
            "margins": [m.to_dict() for m in self.margins],
            "trees": [
                [
                    {
                        "a": e.a,
                        "b": e.b,
                        "cond": sorted(e.cond),
                        "child_a": e.child_a,
                        "child_b": e.child_b,
                        "copula": e.copula.to_dict(),
                    }
                    for e in tree
                ]
                for tree in self.structure.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VineModel":
        if d.get("format") != "vinebc-model":
            raise ValueError("not a vine model record")
        margins = [MixtureMarginal.from_dict(m) for m in d["margins"]]
        trees = [
            [
                Edge(
                    a=e["a"],
                    b=e["b"],
                    cond=frozenset(e["cond"]),
                    child_a=e["child_a"],
                    child_b=e["child_b"],
                    copula=copula_from_dict(e["copula"]),
                )
                for e in tree
            ]
            for tree in d["trees"]
        ]
        return cls(margins=margins, structure=VineStructure(d=d["d"], trees=trees),
                   var_names=d.get("var_names"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "VineModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- diagonal order ----------------------------------------------------------


def _diagonal_order(structure: VineStructure):
    """Peel the structure into a sampling order.

    Returns (order, diag) where order[j] is the variable assigned at step j
    and diag maps each variable (except order[0]) to the (tree, edge, side)
    whose h-output is its conditional CDF given all earlier variables.
    """
    d = structure.d
    if d == 1:
        return [0], {}
    trees = structure.trees
    sigma = []
    diag = {}
    t = len(trees) - 1
    edge_idx = 0
    var = trees[t][edge_idx].a
    sigma.append(var)
    diag[var] = (t, edge_idx, "a")
    while t > 0:
        e = trees[t][edge_idx]
        edge_idx = e.child_b if var == e.a else e.child_a
        t -= 1
        var = trees[t][edge_idx].a
        sigma.append(var)
        diag[var] = (t, edge_idx, "a")
    sigma.append(trees[0][edge_idx].b)
    sigma.reverse()
    return sigma, diag


# -- conditional pseudo-observation recursion ---------------------------------


def _marginal_pseudo(model: VineModel, x: np.ndarray):
    n, d = x.shape
    u = np.empty((n, d))
    ul = np.empty((n, d))
    for j, m in enumerate(model.margins):
        u[:, j], ul[:, j] = m.pseudo_obs(x[:, j])
    return u, ul


def _edge_input(model, outs, t, e, side, u, ul):
    """(u, u_left) stream feeding edge side 'a' or 'b'."""
    var = e.a if side == "a" else e.b
    child = e.child_a if side == "a" else e.child_b
    if t == 0:
        return u[:, var], ul[:, var]
    prev = model.structure.trees[t - 1][child]
    ou_a, oul_a, ou_b, oul_b = outs[(t - 1, child)]
    if prev.a == var:
        return ou_a, oul_a
    if prev.b == var:
        return ou_b, oul_b
    raise NumericsError(f"edge wiring broken at tree {t}, edge {e.label()}")


def _h_with_left(cop, direction, tu, tul, cond: PseudoObs):
    out_u = hfunc(cop, direction, tu, cond)
    disc = tul < tu
    if np.any(disc):
        out_ul = out_u.copy()
        out_ul[disc] = hfunc(cop, direction, tul[disc], cond[disc])
        # a conditional CDF cannot decrease across the jump
        out_ul = np.minimum(out_ul, out_u)
    else:
        out_ul = out_u
    return out_u, out_ul


def _run_edges(model: VineModel, u: np.ndarray, ul: np.ndarray, collect_density: bool = False):
    """Evaluate all edge h-outputs (and optionally the edge log densities)."""
    outs = {}
    log_c = 0.0
    for t, tree in enumerate(model.structure.trees):
        for i, e in enumerate(tree):
            ua, ula = _edge_input(model, outs, t, e, "a", u, ul)
            ub, ulb = _edge_input(model, outs, t, e, "b", u, ul)
            pa = PseudoObs(ua, ula)
            pb = PseudoObs(ub, ulb)
            if collect_density:
                dens = gen_density(e.copula, pa, pb)
                with np.errstate(divide="ignore"):
                    log_c = log_c + np.log(dens)
            out_a = _h_with_left(e.copula, 1, ua, ula, pb)
            out_b = _h_with_left(e.copula, 2, ub, ulb, pa)
            outs[(t, i)] = (*out_a, *out_b)
    return (outs, log_c) if collect_density else outs


# -- structure selection and fitting ------------------------------------------


def _build_vine(u, ul, family_set, seed, truncation, independence_level=0.05,
                checkerboard_resolution=32):
    """Dissmann-style sequential construction; returns list-of-trees of Edges."""
    n, d = u.shape
    trees = []
    # tree-0 nodes: one per variable
    nodes = [
        {"streams": {j: (u[:, j], ul[:, j])}, "constraint": frozenset([j]), "edge_index": j}
        for j in range(d)
    ]
    for t in range(d - 1):
        k = len(nodes)
        # jitter each stream once per tree for the selection weights
        jittered = {}
        for i, node in enumerate(nodes):
            for var, (su, sul) in node["streams"].items():
                rng = np.random.default_rng(subseed(seed, _SEL_TAG, t, i, var))
                po = PseudoObs(su, sul)
                jittered[(i, var)], _ = randomize_pseudo(po, po, rng)
        weights = np.full((k, k), -np.inf)
        pair_info = {}
        for i in range(k):
            for j in range(i + 1, k):
                ci, cj = nodes[i]["constraint"], nodes[j]["constraint"]
                if t > 0:
                    ei = nodes[i]["edge_index"]
                    ej = nodes[j]["edge_index"]
                    prev_i = trees[t - 1][ei]
                    prev_j = trees[t - 1][ej]
                    if t == 1:
                        shared = {prev_i.a, prev_i.b} & {prev_j.a, prev_j.b}
                    else:
                        shared = {prev_i.child_a, prev_i.child_b} & {prev_j.child_a, prev_j.child_b}
                    if not shared:
                        continue
                sym = ci ^ cj
                if len(sym) != 2:
                    continue
                a = next(iter(sym & ci))
                b = next(iter(sym & cj))
                tau = kendall_tau(jittered[(i, a)], jittered[(j, b)])
                weights[i, j] = weights[j, i] = abs(tau)
                pair_info[(i, j)] = (a, b)
        mst = _max_spanning_tree(weights)
        tree = []
        new_nodes = []
        for e_idx, (i, j) in enumerate(sorted(tuple(sorted(p)) for p in mst)):
            a, b = pair_info[(i, j)]
            cond = nodes[i]["constraint"] & nodes[j]["constraint"]
            ua_, ula_ = nodes[i]["streams"][a]
            ub_, ulb_ = nodes[j]["streams"][b]
            pa = PseudoObs(ua_, ula_)
            pb = PseudoObs(ub_, ulb_)
            if truncation is not None and t >= truncation:
                cop = IndependenceCopula()
            else:
                cop = fit_pair(
                    pa, pb, family_set,
                    seed=subseed(seed, _FIT_TAG, t, e_idx),
                    independence_level=independence_level,
                    checkerboard_resolution=checkerboard_resolution,
                )
            edge = Edge(a=a, b=b, cond=cond,
                        child_a=nodes[i]["edge_index"] if t > 0 else None,
                        child_b=nodes[j]["edge_index"] if t > 0 else None,
                        copula=cop)
            out_a = _h_with_left(cop, 1, ua_, ula_, pb)
            out_b = _h_with_left(cop, 2, ub_, ulb_, pa)
            tree.append(edge)
            new_nodes.append(
                {
                    "streams": {a: out_a, b: out_b},
                    "constraint": edge.constraint,
                    "edge_index": e_idx,
                }
            )
        trees.append(tree)
        nodes = new_nodes
    return trees


def select_structure(u, u_left=None, method: str = "dissmann", family_set=DEFAULT_FAMILY_SET,
                     seed: int = 0) -> VineStructure:
    """Tree-by-tree maximum spanning tree on absolute Kendall's tau."""
    if method != "dissmann":
        raise ValueError(f"unknown structure selection method {method!r}")
    u = np.asarray(u, dtype=float)
    ul = u.copy() if u_left is None else np.asarray(u_left, dtype=float)
    n, d = u.shape
    if n < 30 or d < 2:
        raise EstimationError("need n >= 30 and d >= 2 for structure selection")
    trees = _build_vine(u, ul, family_set, seed, truncation=None)
    structure = VineStructure(d=d, trees=trees)
    structure.validate()
    return structure


def fit_vine(
    data,
    kinds,
    family_set=DEFAULT_FAMILY_SET,
    seed: int = 0,
    truncation: int | None = None,
    bandwidth_rule: str = "normal_reference",
    atom_threshold: float = 0.01,
    independence_level: float = 0.05,
    checkerboard_resolution: int = 32,
    var_names=None,
) -> VineModel:
    """Fit margins, select the structure and estimate all pair copulas."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise EstimationError("data must be a 2-d array (rows x variables)")
    n, d = x.shape
    kinds = [normalize_kind(k) for k in kinds]
    if len(kinds) != d:
        raise EstimationError(f"got {len(kinds)} kinds for {d} variables")
    margins = []
    for j in range(d):
        m = fit_marginal(x[:, j], kinds[j], bandwidth_rule=bandwidth_rule,
                         atom_threshold=atom_threshold)
        if m.degenerate_continuous:
            name = var_names[j] if var_names else f"variable {j}"
            raise EstimationError(f"margin of {name} has no continuous mass")
        margins.append(m)
    u = np.empty((n, d))
    ul = np.empty((n, d))
    for j, m in enumerate(margins):
        u[:, j], ul[:, j] = m.pseudo_obs(x[:, j])
    if d == 1:
        structure = VineStructure(d=1, trees=[])
    else:
        trees = _build_vine(u, ul, family_set, seed, truncation,
                            independence_level=independence_level,
                            checkerboard_resolution=checkerboard_resolution)
        structure = VineStructure(d=d, trees=trees)
        structure.validate()
    return VineModel(margins=margins, structure=structure, var_names=list(var_names) if var_names else None)


# -- density ------------------------------------------------------------------


def vine_log_density(model: VineModel, x) -> np.ndarray:
    """Log density: marginal mixed densities plus all edge generalized densities.

    Points of zero density return -inf.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.d:
        raise ValueError(f"expected {model.d} columns, got {x.shape[1]}")
    with np.errstate(divide="ignore"):
        log_f = sum(
            np.log(np.asarray(m.density(x[:, j])))
            for j, m in enumerate(model.margins)
        )
    u, ul = _marginal_pseudo(model, x)
    if model.structure.trees:
        _, log_c = _run_edges(model, u, ul, collect_density=True)
        log_f = log_f + log_c
    if np.any(~np.isfinite(log_f)):
        warnings.warn("density is zero at some evaluation points; returning -inf there")
    return log_f


# -- Rosenblatt transforms ------------------------------------------------------


def rosenblatt_forward(model: VineModel, x, noise) -> np.ndarray:
    """Randomized forward Rosenblatt transform along the vine.

    Column j of the output carries the randomized conditional CDF of
    variable j given the variables that precede it in the diagonal order:
    V = W * F + (1 - W) * F_left, with the supplied noise W in [0, 1].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.atleast_2d(np.asarray(noise, dtype=float))
    if x.shape != w.shape:
        raise ValueError("noise must match the data shape")
    if np.any((w < 0) | (w > 1)):
        raise ValueError("noise must lie in [0, 1]")
    u, ul = _marginal_pseudo(model, x)
    outs = _run_edges(model, u, ul) if model.structure.trees else {}
    v = np.empty_like(x)

    def randomize(col, cu, cul):
        # noise only acts across a jump; continuous coordinates stay exact
        v[:, col] = np.where(cul < cu, w[:, col] * cu + (1.0 - w[:, col]) * cul, cu)

    first = model._order[0]
    randomize(first, u[:, first], ul[:, first])
    for var in model._order[1:]:
        t, i, side = model._diag[var]
        ou_a, oul_a, ou_b, oul_b = outs[(t, i)]
        cu, cul = (ou_a, oul_a) if side == "a" else (ou_b, oul_b)
        randomize(var, cu, cul)
    return v


def _inverse_chain(model: VineModel, var: int):
    """Edges whose h-functions condition ``var``, from deepest tree down."""
    chain = []
    t, i, _side = model._diag[var]
    while True:
        e = model.structure.trees[t][i]
        chain.append((t, i, e))
        if t == 0:
            return chain
        i = e.child_a if e.a == var else e.child_b
        t -= 1


def rosenblatt_inverse(model: VineModel, v) -> np.ndarray:
    """Inverse Rosenblatt transform: i.i.d. uniforms to model samples.

    Levels landing inside an atom's conditional jump produce the atom value
    through the generalized marginal quantile.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != model.d:
        raise ValueError(f"expected {model.d} columns, got {v.shape[1]}")
    if np.any((v <= 0.0) | (v >= 1.0)):
        raise ValueError("uniform levels must lie strictly inside (0, 1)")
    n, d = v.shape
    x = np.empty_like(v)
    u = np.full((n, d), np.nan)
    ul = np.full((n, d), np.nan)
    outs = {}
    assigned = set()

    def propagate():
        for t, tree in enumerate(model.structure.trees):
            for i, e in enumerate(tree):
                if (t, i) in outs:
                    continue
                if not e.constraint <= assigned:
                    continue
                ua_, ula_ = _edge_input(model, outs, t, e, "a", u, ul)
                ub_, ulb_ = _edge_input(model, outs, t, e, "b", u, ul)
                out_a = _h_with_left(e.copula, 1, ua_, ula_, PseudoObs(ub_, ulb_))
                out_b = _h_with_left(e.copula, 2, ub_, ulb_, PseudoObs(ua_, ula_))
                outs[(t, i)] = (*out_a, *out_b)

    for step, var in enumerate(model._order):
        target = v[:, var].copy()
        if step > 0:
            for t, i, e in _inverse_chain(model, var):
                side = "a" if e.a == var else "b"
                cond_side = "b" if side == "a" else "a"
                cu, cul = _edge_input(model, outs, t, e, cond_side, u, ul)
                direction = 1 if side == "a" else 2
                target = hfunc_inverse(e.copula, direction, target, PseudoObs(cu, cul))
        x[:, var] = np.asarray(model.margins[var].quantile(target))
        u[:, var], ul[:, var] = model.margins[var].pseudo_obs(x[:, var])
        assigned.add(var)
        propagate()
    return x


def vine_sample(model: VineModel, n: int, seed: int = 0) -> np.ndarray:
    """Draw n rows by inverse Rosenblatt of seeded i.i.d. uniforms."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    v = np.clip(rng.uniform(size=(n, model.d)), 1e-12, 1.0 - 1e-12)
    return rosenblatt_inverse(model, v)
