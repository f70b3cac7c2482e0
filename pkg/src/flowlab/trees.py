"""Rooted tree families carrying the decay skeleton of the expansion.

A tree on the manifold has one root (or two, for the bridged variant), a set
of external vertices of coordination 1, and internal vertices of coordination
2..s.  Lines touching an external vertex are external lines and carry a
kernel factor at an external scale tau_i; the remaining lines are internal
and carry a massive kernel factor at a scale assignment t_I in [eps, t].
`enumerate_trees` produces each admissible shape exactly once, `reduce_tree`
removes a pair of externals and prunes, and the weight routines evaluate the
pointwise product, its integral over internal positions (sup over scale
assignments on a per-line grid), and the long-time variant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from . import geometry as G
from . import heatkernel as HK
from .geometry import DomainError, ManifoldKind, ManifoldModel
from .records import INCONCLUSIVE, PASS


class TreeError(ValueError):
    """Structural violation: bad coordination, bad labels, budget exceeded."""


DELTA_DEFAULT = 0.1
INTERNAL_CAP = 12   # refuse enumeration when the predicted internal count exceeds this
MIN_GRID_POINTS = 8


# ---------------------------------------------------------------- tree shapes

@dataclass(frozen=True)
class TreeClassSpec:
    """A family label: s external legs in total, loop budget l."""

    s: int
    l: int
    twice_rooted: bool = False

    def __post_init__(self):
        if self.s < 2:
            raise TreeError("a tree class needs s >= 2")
        if self.l < 0:
            raise TreeError("negative loop budget")

    @property
    def n_roots(self) -> int:
        return 2 if self.twice_rooted else 1

    def doubled_budget(self) -> int:
        # compare against 2*(v2 + root deltas); only meaningful for l >= 1
        return 6 * self.l - 4 + self.s


@dataclass(frozen=True)
class Tree:
    """One admissible shape, stored with a fixed vertex numbering.

    Ids: roots first (0, and 1 when twice rooted), then externals in slot
    order up to s-1, then internals in canonical traversal order from s on.
    `edges` is the sorted tuple of (low, high) id pairs; constructors always
    canonicalize, so equal shapes compare equal.
    """

    s: int
    l: int
    twice_rooted: bool
    edges: tuple
    n_internal: int

    @property
    def n_roots(self) -> int:
        return 2 if self.twice_rooted else 1

    @property
    def n_vertices(self) -> int:
        return self.s + self.n_internal

    @property
    def roots(self) -> tuple:
        return tuple(range(self.n_roots))

    @property
    def externals(self) -> tuple:
        return tuple(range(self.n_roots, self.s))

    @property
    def internals(self) -> tuple:
        return tuple(range(self.s, self.s + self.n_internal))

    def is_external(self, v: int) -> bool:
        return self.n_roots <= v < self.s

    def slot_of(self, v: int) -> int:
        """Paper index of external vertex v: y_k with k = v + 1."""
        if not self.is_external(v):
            raise TreeError(f"vertex {v} is not external")
        return v + 1

    def incidence(self) -> dict:
        c = {v: 0 for v in range(self.n_vertices)}
        for a, b in self.edges:
            c[a] += 1
            c[b] += 1
        return c

    def external_lines(self) -> tuple:
        """Edges holding an external vertex, ordered by external id."""
        out = []
        for e in self.externals:
            for a, b in self.edges:
                if a == e or b == e:
                    out.append((a, b))
                    break
        return tuple(out)

    def internal_lines(self) -> tuple:
        ext = set(self.external_lines())
        return tuple(e for e in self.edges if e not in ext)

    def validate(self) -> None:
        """Check coordination ranges, the counting identity, and membership."""
        if self.s == 1:
            # degenerate outcome of reduction: the bare root
            if self.edges or self.n_internal or self.twice_rooted:
                raise TreeError("an s=1 tree is a bare root")
            return
        verts = set(range(self.n_vertices))
        seen = set()
        for a, b in self.edges:
            if a == b or not (0 <= a < b < self.n_vertices):
                raise TreeError(f"bad edge ({a},{b})")
            if (a, b) in seen:
                raise TreeError(f"duplicate edge ({a},{b})")
            seen.add((a, b))
        if len(self.edges) != self.n_vertices - 1:
            raise TreeError("edge count does not match a tree")
        adj = {v: [] for v in verts}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        stack, reached = [0], {0}
        while stack:
            for w in adj[stack.pop()]:
                if w not in reached:
                    reached.add(w)
                    stack.append(w)
        if reached != verts:
            raise TreeError("tree is not connected")

        c = self.incidence()
        for r in self.roots:
            if not 1 <= c[r] <= self.s - 1:
                raise TreeError(f"root {r} has coordination {c[r]}")
        for e in self.externals:
            if c[e] != 1:
                raise TreeError(f"external {e} has coordination {c[e]}")
        for z in self.internals:
            if not 2 <= c[z] <= self.s:
                raise TreeError(f"internal {z} has coordination {c[z]}")

        deltas = sum(1 for r in self.roots if c[r] == 1)
        lhs = sum(cv - 2 for cv in c.values() if cv >= 2)
        if lhs != self.s - 2 - self.n_roots + deltas:
            raise TreeError("coordination identity violated")

        v2 = sum(1 for cv in c.values() if cv == 2)
        if self.l == 0:
            if v2 != 0:
                raise TreeError("coordination-2 vertex in an l=0 tree")
        elif 2 * (v2 + deltas) > 6 * self.l - 4 + self.s:
            raise TreeError("coordination-2 count exceeds the loop budget")

    # ---- canonical text form, one line per edge, roles in the names

    def _name(self, v: int) -> str:
        if v < self.n_roots:
            return f"x{v + 1}"
        if v < self.s:
            return f"y{v + 1}"
        return f"z{v - self.s + 1}"

    def to_text(self) -> str:
        head = f"tree s={self.s} l={self.l} roots={self.n_roots} internals={self.n_internal}"
        lines = [f"{self._name(a)} {self._name(b)}" for a, b in self.edges]
        return "\n".join([head] + lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Tree":
        rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or not rows[0].startswith("tree "):
            raise TreeError("missing tree header")
        fields = dict(tok.split("=") for tok in rows[0].split()[1:])
        s, l = int(fields["s"]), int(fields["l"])
        twice = int(fields["roots"]) == 2
        n_roots = 2 if twice else 1

        def vid(name: str) -> int:
            kind, num = name[0], int(name[1:])
            if kind == "x":
                if not 1 <= num <= n_roots:
                    raise TreeError(f"unknown root {name}")
                return num - 1
            if kind == "y":
                if not n_roots + 1 <= num <= s:
                    raise TreeError(f"external {name} out of range")
                return num - 1
            if kind == "z":
                return s + num - 1
            raise TreeError(f"bad vertex name {name}")

        edges = []
        for row in rows[1:]:
            a, b = (vid(tok) for tok in row.split())
            edges.append((min(a, b), max(a, b)))
        n_internal = int(fields["internals"])
        if s == 1:
            t = cls(1, l, False, (), 0)
        else:
            struct = _structure_of(tuple(edges), s, n_roots, n_internal)
            t = _tree_from_structure(struct, s, l, twice)
        t.validate()
        return t


# ------------------------------------------------------------- canonical form

def _set_partitions(items: tuple):
    """All partitions of items into unordered nonempty blocks."""
    if not items:
        yield ()
        return
    head, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield part + (frozenset([head]),)
        for i, block in enumerate(part):
            yield part[:i] + (block | {head},) + part[i + 1:]


def _structure_of(edges: tuple, s: int, n_roots: int, n_internal: int):
    """Nested canonical form of an edge list, rooted at vertex 0.

    Externals appear as ('e', id), the second root as ('r2', kids), internals
    as ('z', kids); child tuples are sorted, which erases the internal
    numbering.
    """
    n = s + n_internal
    adj = {v: [] for v in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)

    def build(v: int, parent: int):
        kids = tuple(sorted(build(w, v) for w in adj[v] if w != parent))
        if n_roots <= v < s:
            if kids:
                raise TreeError(f"external {v} is not a leaf")
            return ("e", v)
        if v == 1 and n_roots == 2:
            return ("r2", kids)
        return ("z", kids)

    return ("root", tuple(sorted(build(w, 0) for w in adj[0])))


def _tree_from_structure(struct, s: int, l: int, twice: bool) -> Tree:
    edges = []
    counter = [s]

    def assign(node, parent_id: int) -> None:
        tag, payload = node
        if tag == "e":
            head = payload
            kids = ()
        elif tag == "r2":
            head, kids = 1, payload
        else:
            head = counter[0]
            counter[0] += 1
            kids = payload
        edges.append((min(parent_id, head), max(parent_id, head)))
        for kid in kids:
            assign(kid, head)

    for kid in struct[1]:
        assign(kid, 0)
    return Tree(s, l, twice, tuple(sorted(edges)), counter[0] - s)


def _subtree_options(labels: frozenset, budget: int, s: int, memo: dict):
    """Canonical subtree shapes over the given leaf labels, hanging from one
    line to the parent; marker id 1 of a twice-rooted class may sit inside.

    Returns tuples (structure, v2_used, internal_count), sorted.
    """
    key = (labels, budget)
    if key in memo:
        return memo[key]
    out = []
    has_marker = 1 in labels and memo["twice"]
    if len(labels) == 1 and not has_marker:
        out.append((("e", next(iter(labels))), 0, 0))
    if has_marker:
        rest = labels - {1}
        if not rest:
            out.append((("r2", ()), 0, 0))
        else:
            for parts in _set_partitions(tuple(sorted(rest))):
                if len(parts) + 1 > s - 1:
                    continue
                v2h = 1 if len(parts) == 1 else 0
                if v2h > budget:
                    continue
                for combo, v2c, nc in _combine(parts, budget - v2h, s, memo):
                    out.append((("r2", combo), v2h + v2c, nc))
    # a fresh internal head of coordination len(parts)+1 in [2, s]
    for parts in _set_partitions(tuple(sorted(labels))):
        if not 1 <= len(parts) <= s - 1:
            continue
        v2h = 1 if len(parts) == 1 else 0
        if v2h > budget:
            continue
        for combo, v2c, nc in _combine(parts, budget - v2h, s, memo):
            out.append((("z", combo), v2h + v2c, 1 + nc))
    out = sorted(set(out))
    memo[key] = out
    return out


def _combine(parts, budget: int, s: int, memo: dict):
    """Sorted child-tuple choices across blocks with total v2 within budget."""
    blocks = sorted(parts, key=lambda b: tuple(sorted(b)))
    choices = [_subtree_options(b, budget, s, memo) for b in blocks]
    out = []
    for combo in itertools.product(*choices):
        v2 = sum(c[1] for c in combo)
        if v2 > budget:
            continue
        out.append((tuple(sorted(c[0] for c in combo)), v2, sum(c[2] for c in combo)))
    return sorted(set(out))


@lru_cache(maxsize=None)
def enumerate_trees(cls: TreeClassSpec) -> tuple:
    """Every admissible shape of the class, canonically numbered, no repeats."""
    s, l, twice = cls.s, cls.l, cls.twice_rooted
    budget = 0 if l == 0 else cls.doubled_budget() // 2
    predicted = budget + max(s - 2, 0) + (1 if twice else 0)
    if predicted > INTERNAL_CAP:
        raise TreeError(
            f"predicted internal count {predicted} exceeds cap {INTERNAL_CAP}")
    memo = {"twice": twice}
    labels = tuple(range(1, s))
    found = []
    for parts in _set_partitions(labels):
        if not 1 <= len(parts) <= s - 1:
            continue
        v2_root = 1 if len(parts) == 2 else 0
        if v2_root > budget:
            continue
        for combo, _, _ in _combine(parts, budget - v2_root, s, memo):
            tree = _tree_from_structure(("root", combo), s, l, twice)
            try:
                tree.validate()
            except TreeError:
                continue
            found.append(tree)
    found.sort(key=lambda t: (t.n_internal, t.edges))
    return tuple(found)


def reduce_tree(tree: Tree, i: int, j: int) -> Tree:
    """Remove externals y_i, y_j and prune internals left with one line.

    Indices use the paper slots 2..s.  The root survives even when pruning
    reaches it; the result may degenerate to the bare root.  The reduced tree
    is labeled with loop budget l+1.
    """
    if tree.twice_rooted:
        raise TreeError("reduction is defined on once-rooted trees")
    if i == j:
        raise TreeError("the two removed externals must differ")
    for k in (i, j):
        if not 2 <= k <= tree.s:
            raise TreeError(f"external index {k} out of range")
    adj = {v: set() for v in range(tree.n_vertices)}
    for a, b in tree.edges:
        adj[a].add(b)
        adj[b].add(a)
    doomed = [i - 1, j - 1]
    removed = set()
    while doomed:
        v = doomed.pop()
        removed.add(v)
        for w in adj[v]:
            adj[w].discard(v)
            if w >= tree.s and len(adj[w]) <= 1 and w not in removed:
                doomed.append(w)
        adj[v] = set()
    for e in tree.externals:
        if e not in (i - 1, j - 1) and not adj[e]:
            raise TreeError("pruning orphaned an external vertex")

    keep_ext = [e for e in tree.externals if e not in (i - 1, j - 1)]
    s_out = tree.s - 2
    if s_out == 1:
        if any(adj[v] for v in range(tree.n_vertices)):
            raise TreeError("unexpected survivors in a degenerate reduction")
        return Tree(1, tree.l + 1, False, (), 0)
    remap = {0: 0}
    for new, old in enumerate(keep_ext, start=1):
        remap[old] = new
    nxt = s_out
    for old in tree.internals:
        if old not in removed and adj[old]:
            remap[old] = nxt
            nxt += 1
    edges = []
    for a in list(remap):
        for b in adj[a]:
            if a < b:
                edges.append((remap[a], remap[b]))
    edges = tuple(sorted((min(a, b), max(a, b)) for a, b in edges))
    struct = _structure_of(edges, s_out, 1, nxt - s_out)
    out = _tree_from_structure(struct, s_out, tree.l + 1, False)
    out.validate()
    return out


# ------------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightFactorValue:
    """Integrated weight estimate: the sup over scale assignments."""

    value: float
    mc_error: float
    argmax_scales: tuple
    status: str = PASS

    def __post_init__(self):
        if self.value < 0 or not math.isfinite(self.value):
            raise DomainError("weight must be finite and nonnegative")


def weight_factor_pointwise(M: ManifoldModel, tree: Tree, positions,
                            t_internal, tau, m2: float = 0.0,
                            delta: float = DELTA_DEFAULT) -> float:
    """Product of line factors at fixed vertex positions.

    positions is indexed by vertex id; t_internal follows internal_lines()
    order, tau follows external slot order.  Internal lines carry the mass
    factor, external lines are plain kernels at tau_i(1+delta).
    """
    if tree.s == 1:
        return 1.0
    ilines = tree.internal_lines()
    elines = tree.external_lines()
    if len(t_internal) != len(ilines):
        raise DomainError("one scale per internal line required")
    if len(tau) != len(elines):
        raise DomainError("one tau per external slot required")
    val = 1.0
    for (a, b), tI in zip(ilines, t_internal):
        if tI <= 0:
            raise DomainError("internal scales must be positive")
        td = tI * (1.0 + delta)
        val *= math.exp(-m2 * td) * HK.eval_K(M, td, positions[a], positions[b])
    for (a, b), tu in zip(elines, tau):
        if tu <= 0:
            raise DomainError("external scales must be positive")
        e = b if tree.is_external(b) else a
        o = a if e == b else b
        val *= HK.eval_K(M, tu * (1.0 + delta), positions[o], positions[e])
    return val


# ---- batched sampling helpers

def _batch_unit_tangents(M: ManifoldModel, X: np.ndarray, rng) -> np.ndarray:
    """Isotropic unit tangents at a batch of points, ambient representation."""
    n = X.shape[0]
    if M.kind is ManifoldKind.FLAT:
        g = rng.standard_normal((n, M.dim))
        return g / np.linalg.norm(g, axis=-1, keepdims=True)
    if M.kind is ManifoldKind.SPHERE:
        g = rng.standard_normal((n, M.ambient_dim))
        v = g - M.curvature_param**2 * np.sum(g * X, axis=-1, keepdims=True) * X
        return v / np.linalg.norm(v, axis=-1, keepdims=True)
    # hyperboloid: draw at the base point, then reflect the base to X through
    # the Minkowski hyperplane between them (an isometry, so isotropy survives)
    g = rng.standard_normal((n, M.dim))
    d = np.concatenate([g / np.linalg.norm(g, axis=-1, keepdims=True),
                        np.zeros((n, 1))], axis=1)
    Xu = M.curvature_param * X
    S = Xu.copy()
    S[:, -1] -= 1.0
    ss = G.minkowski_dot(S, S)
    safe = ss > 1e-28
    coef = np.where(safe, 2.0 * G.minkowski_dot(d, S) / np.where(safe, ss, 1.0), 0.0)
    return d - coef[:, None] * S


class _RadialTable:
    """Linear-interpolation table of K(scale, r) on [0, r_cap]; 0 beyond."""

    def __init__(self, M: ManifoldModel, scale: float, r_cap: float, n: int = 1024):
        self.M, self.scale = M, scale
        if M.kind is ManifoldKind.SPHERE:
            r_cap = min(r_cap, math.pi / M.curvature_param)
        self.r = np.linspace(0.0, r_cap, n)
        self.K = np.asarray(HK.kernel_radial(M, scale, self.r), float)

    def __call__(self, d):
        return np.interp(d, self.r, self.K, right=0.0)


class _TableSampler:
    """Radial inverse-CDF sampler driven by a _RadialTable restriction."""

    def __init__(self, table: _RadialTable, r_cut: float):
        M = table.M
        mask = table.r <= r_cut
        grid = table.r[mask]
        if grid.size < 8:
            raise DomainError("sampler support too small")
        self.edges = grid
        mid = 0.5 * (grid[:-1] + grid[1:])
        prof = np.asarray(G.radial_profile(M, mid), float)
        dens = np.maximum(np.interp(mid, table.r, table.K), 0.0) * prof ** (M.dim - 1)
        mass = dens * np.diff(grid)
        total = float(np.sum(mass))
        if total <= 0:
            raise DomainError("sampler grid has no mass")
        self.pdf = dens / total
        self.cdf = np.concatenate([[0.0], np.cumsum(mass) / total])
        self.area = G.unit_sphere_area(M.dim)
        self.dim = M.dim
        self.M = M

    def sample(self, rng, n: int):
        u = rng.random(n)
        idx = np.clip(np.searchsorted(self.cdf, u, side="right") - 1,
                      0, self.pdf.size - 1)
        left, right = self.edges[idx], self.edges[idx + 1]
        frac = (u - self.cdf[idx]) / np.maximum(self.cdf[idx + 1] - self.cdf[idx], 1e-300)
        r = left + frac * (right - left)
        prof = np.asarray(G.radial_profile(self.M, r), float)
        q_point = self.pdf[idx] / np.maximum(self.area * prof ** (self.dim - 1), 1e-300)
        return r, q_point

    def pdf_at(self, r):
        idx = np.clip(np.searchsorted(self.edges, r, side="right") - 1,
                      0, self.pdf.size - 1)
        out = self.pdf[idx]
        out = np.where((r < self.edges[0]) | (r > self.edges[-1]), 0.0, out)
        prof = np.asarray(G.radial_profile(self.M, r), float)
        return out / np.maximum(self.area * prof ** (self.dim - 1), 1e-300)


class _EvalCache:
    """Per-call cache of radial tables and samplers keyed by scale."""

    def __init__(self, M: ManifoldModel, r_extra: float, n_table: int = 1024):
        self.M, self.r_extra, self.n_table = M, r_extra, n_table
        self.tables, self.samplers = {}, {}

    def table(self, scale: float) -> _RadialTable:
        key = round(scale, 15)
        if key not in self.tables:
            cap = HK._radial_cutoff(self.M, scale) + self.r_extra
            self.tables[key] = _RadialTable(self.M, scale, cap, self.n_table)
        return self.tables[key]

    def sampler(self, scale: float) -> _TableSampler:
        key = round(scale, 15)
        if key not in self.samplers:
            cut = HK._radial_cutoff(self.M, scale)
            self.samplers[key] = _TableSampler(self.table(scale), cut)
        return self.samplers[key]


def _bfs_plan(tree: Tree):
    """Sampling plan: order internals so each one's parent edge comes first.

    Returns (order, parent, eval_lines) where order lists internal vertex ids,
    parent maps them to (parent_vertex, edge), and eval_lines are internal
    lines whose deeper endpoint is fixed (the second root).
    """
    adj = {v: [] for v in range(tree.n_vertices)}
    for e in tree.internal_lines():
        a, b = e
        adj[a].append((b, e))
        adj[b].append((a, e))
    order, parent, eval_lines = [], {}, []
    seen = set(tree.roots[:1])
    queue = [0]
    while queue:
        v = queue.pop(0)
        for w, e in adj[v]:
            if w in seen:
                continue
            seen.add(w)
            if w >= tree.s:
                order.append(w)
                parent[w] = (v, e)
                queue.append(w)
            else:
                eval_lines.append((v, w, e))  # the second root reached from v
    return order, parent, eval_lines


def _line_grids(tree: Tree, eps: float, t: float, grid_points: int, scale_grid):
    ilines = tree.internal_lines()
    if scale_grid is not None:
        grids = [np.asarray(g, float) for g in scale_grid]
        if len(grids) != len(ilines):
            raise DomainError("scale_grid needs one grid per internal line")
        return grids
    if eps == t:
        return [np.array([t]) for _ in ilines]
    npts = max(grid_points, MIN_GRID_POINTS)
    return [np.geomspace(eps, t, npts) for _ in ilines]


def _refine_grids(grids, argmax_idx, n_ref: int = 7):
    out = []
    for g, k in zip(grids, argmax_idx):
        lo = g[max(k - 1, 0)]
        hi = g[min(k + 1, len(g) - 1)]
        if hi <= lo * (1 + 1e-12):
            out.append(np.array([g[k]]))
        else:
            out.append(np.geomspace(lo, hi, n_ref))
    return out


def _mc_assignment(M, tree, scales, fixed, m2, delta, cache, rng, n):
    """One assignment's Monte Carlo estimate of the internal-position integral."""
    order, parent, eval_lines = _bfs_plan(tree)
    ilines = tree.internal_lines()
    scale_of = dict(zip(ilines, scales))
    flat = M.kind is ManifoldKind.FLAT
    logw = np.zeros(n)
    pos = {v: np.broadcast_to(p, (n, p.shape[-1])) for v, p in fixed.items()}
    for v in order:
        pv, edge = parent[v]
        td = scale_of[edge] * (1.0 + delta)
        P = pos[pv]
        if flat:
            Z = P + math.sqrt(2.0 * td) * rng.standard_normal((n, M.dim))
            logw += -m2 * td
        else:
            samp = cache.sampler(td)
            r, q = samp.sample(rng, n)
            dirs = _batch_unit_tangents(M, np.asarray(P, float), rng)
            Z = G.project_to_manifold(M, G.exp_map(M, P, dirs, r))
            num = cache.table(td)(r)
            logw += -m2 * td + np.log(np.maximum(num, 1e-300)) - np.log(q)
        pos[v] = Z
    for a, b, edge in eval_lines:
        td = scale_of[edge] * (1.0 + delta)
        d = G.distance(M, pos[a], pos[b])
        if flat:
            K = HK.kernel_radial(M, td, d)
        else:
            K = cache.table(td)(d)
        logw += -m2 * td + np.log(np.maximum(K, 1e-300))
    return logw, pos


def _assignment_value(M, tree, scales, fixed, tau, m2, delta, cache, seed, n):
    rng = np.random.default_rng(seed)
    logw, pos = _mc_assignment(M, tree, scales, fixed, m2, delta, cache, rng, n)
    flat = M.kind is ManifoldKind.FLAT
    for (a, b), tu in zip(tree.external_lines(), tau):
        e = b if tree.is_external(b) else a
        o = a if e == b else b
        td = tu * (1.0 + delta)
        d = G.distance(M, pos[o], pos[e])
        if flat:
            K = HK.kernel_radial(M, td, np.atleast_1d(np.asarray(d, float)))
        else:
            K = cache.table(td)(d)
        logw = logw + np.log(np.maximum(np.broadcast_to(K, logw.shape), 1e-300))
    w = np.exp(logw)
    est = float(np.mean(w))
    err = float(np.std(w) / math.sqrt(len(w)))
    return est, err


def _flat_exact_values(M, tree, grids, fixed, tau, m2, delta):
    """All assignment values at once by Gaussian elimination along the tree.

    Flat lines compose in closed form, so the integral over internal
    positions is a product of widened kernels; vectorized over the full
    product grid of scale assignments.
    """
    ilines = tree.internal_lines()
    shape = tuple(len(g) for g in grids)
    axes = []
    for k, g in enumerate(grids):
        sh = [1] * len(grids)
        sh[k] = len(g)
        axes.append(np.asarray(g, float).reshape(sh) * (1.0 + delta))
    scale_of = dict(zip(ilines, axes))
    order, parent, eval_lines = _bfs_plan(tree)
    children = {v: [] for v in range(tree.n_vertices)}
    for v in order:
        pv, edge = parent[v]
        children[pv].append((v, edge))

    dim = M.dim
    zeros = np.zeros(shape)

    def message(v):
        """Gaussian message (logA, mu, w) from v's subtree toward its parent."""
        comps = []
        for w_, edge in children[v]:
            la, mu, wid = message(w_)
            td = scale_of[edge]
            comps.append((la - m2 * td, mu, wid + td))
        for a, b, edge in eval_lines:
            if a == v:
                td = scale_of[edge]
                comps.append((-m2 * td + zeros, fixed[b][None], td + zeros))
        for (a, b), tu in zip(tree.external_lines(), tau):
            e = b if tree.is_external(b) else a
            o = a if e == b else b
            if o == v:
                td = tu * (1.0 + delta)
                comps.append((zeros, fixed[e][None], td + zeros))
        # combine the Gaussian factors at v and integrate v out
        inv = sum(1.0 / c[2] for c in comps)
        wstar = 1.0 / inv
        mustar = wstar[..., None] * sum(c[1] / c[2][..., None] for c in comps)
        q = sum(np.sum(c[1] ** 2, axis=-1) / c[2] for c in comps)
        q = q - np.sum(mustar**2, axis=-1) * inv
        la = sum(c[0] for c in comps)
        la = la - (dim / 2.0) * sum(np.log(4.0 * math.pi * c[2]) for c in comps)
        la = la + (dim / 2.0) * np.log(4.0 * math.pi * wstar) - q / 4.0
        return la, mustar, wstar

    logv = zeros.copy()
    x1 = fixed[0]
    for v, edge in children[0]:
        la, mu, wid = message(v)
        td = scale_of[edge]
        wtot = wid + td
        d2 = np.sum((mu - x1[None]) ** 2, axis=-1)
        logv += la - m2 * td - (dim / 2.0) * np.log(4.0 * math.pi * wtot) - d2 / (4.0 * wtot)
    for a, b, edge in eval_lines:
        if a == 0:
            td = scale_of[edge]
            d2 = float(np.sum((fixed[b] - x1) ** 2))
            logv += -m2 * td - (dim / 2.0) * np.log(4.0 * math.pi * td) - d2 / (4.0 * td)
    for (a, b), tu in zip(tree.external_lines(), tau):
        e = b if tree.is_external(b) else a
        o = a if e == b else b
        if o == 0:
            td = tu * (1.0 + delta)
            d2 = float(np.sum((fixed[e] - x1) ** 2))
            logv += -(dim / 2.0) * math.log(4.0 * math.pi * td) - d2 / (4.0 * td)
    return np.exp(logv)


def integrated_weight(M: ManifoldModel, tree: Tree, *, m2: float, eps: float,
                      t: float, tau, x1, ys, x2=None,
                      delta: float = DELTA_DEFAULT, mc_samples: int = 2000,
                      grid_points: int = MIN_GRID_POINTS, refine_levels: int = 2,
                      seed: int = 0, err_request: float | None = None,
                      method: str = "auto", scale_grid=None) -> WeightFactorValue:
    """Sup over scale assignments of the internal-position integral.

    Scales run on a logarithmic per-line grid over [eps, t], refined around
    the argmax; the joint sup is over the product grid.  Assignments share
    their random draws, so the sup acts on strongly correlated estimates.
    method "exact" (flat only) replaces Monte Carlo by Gaussian composition.
    """
    if not (0 < eps <= t):
        raise DomainError("need 0 < eps <= t")
    if tree.twice_rooted and x2 is None:
        raise DomainError("twice-rooted weight needs x2")
    if method not in ("auto", "mc", "exact"):
        raise DomainError(f"unknown method {method!r}")
    flat = M.kind is ManifoldKind.FLAT
    use_exact = method == "exact" or (method == "auto" and flat)
    if use_exact and not flat:
        raise DomainError("exact composition is a flat-space method")

    fixed = {0: np.asarray(G.as_vec(x1), float)}
    if tree.twice_rooted:
        fixed[1] = np.asarray(G.as_vec(x2), float)
    for v, y in zip(tree.externals, ys):
        fixed[v] = np.asarray(G.as_vec(y), float)
    if len(fixed) != tree.s:
        raise DomainError("one position per root and external required")
    tau = tuple(float(u) for u in tau)
    if any(u <= 0 for u in tau):
        raise DomainError("external scales must be positive")
    if len(tau) != len(tree.externals):
        raise DomainError("one tau per external slot required")

    if tree.s == 1:
        return WeightFactorValue(1.0, 0.0, ())
    grids = _line_grids(tree, eps, t, grid_points, scale_grid)
    if not grids:
        val = weight_factor_pointwise(M, tree, fixed, (), tau, m2, delta)
        return WeightFactorValue(val, 0.0, ())

    pairs = [max(G.distance(M, a, b) for a in fixed.values()) for b in fixed.values()]
    cache = _EvalCache(M, float(max(pairs)) + 1.0)
    best = (-math.inf, 0.0, None)

    def sweep(cur_grids):
        nonlocal best
        n_assign = 1
        for g in cur_grids:
            n_assign *= len(g)
        if n_assign > 100000:
            raise DomainError("assignment grid too large; coarsen the scale grid")
        if use_exact:
            vals = _flat_exact_values(M, tree, cur_grids, fixed, tau, m2, delta)
            k = np.unravel_index(int(np.argmax(vals)), vals.shape)
            v = float(vals[k])
            if v > best[0]:
                best = (v, 0.0, tuple(float(g[i]) for g, i in zip(cur_grids, k)))
            return k
        arg, arg_idx = None, None
        for idx in itertools.product(*(range(len(g)) for g in cur_grids)):
            scales = tuple(float(g[i]) for g, i in zip(cur_grids, idx))
            est, err = _assignment_value(M, tree, scales, fixed, tau, m2, delta,
                                         cache, seed, mc_samples)
            if est > best[0]:
                best = (est, err, scales)
                arg, arg_idx = scales, idx
        return arg_idx if arg_idx is not None else tuple(0 for _ in cur_grids)

    idx = sweep(grids)
    cur = grids
    for _ in range(refine_levels):
        cur = _refine_grids(cur, idx)
        idx = sweep(cur)

    value, err, scales = best
    status = PASS
    if err_request is not None and err > err_request * max(value, 1e-300):
        status = INCONCLUSIVE
    return WeightFactorValue(max(value, 0.0), err, scales, status)


def global_weight(M: ManifoldModel, cls: TreeClassSpec, *, m2: float,
                  eps: float, t: float, tau, x1, ys, x2=None,
                  breakdown: list | None = None, **kw) -> WeightFactorValue:
    """Sum of integrated weights over every shape in the class."""
    total, var = 0.0, 0.0
    for tree in enumerate_trees(cls):
        w = integrated_weight(M, tree, m2=m2, eps=eps, t=t, tau=tau,
                              x1=x1, ys=ys, x2=x2, **kw)
        if breakdown is not None:
            breakdown.append((tree, w))
        total += w.value
        var += w.mc_error**2
    return WeightFactorValue(total, math.sqrt(var), ())


# ---- two-point closed forms

def _sup_unimodal(fn, lo: float, hi: float, n_coarse: int = 96):
    """Deterministic sup of a smooth positive function on [lo, hi]."""
    if hi <= lo * (1 + 1e-15):
        return fn(lo), lo
    grid = np.geomspace(lo, hi, n_coarse) if lo > 0 else np.linspace(lo, hi, n_coarse)
    vals = np.array([fn(u) for u in grid])
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_coarse - 1)]
    if b <= a * (1 + 1e-14):
        return float(vals[k]), float(grid[k])
    res = minimize_scalar(lambda u: -fn(u), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12 * b})
    best = max(float(vals[k]), float(-res.fun))
    arg = float(res.x) if -res.fun >= vals[k] else float(grid[k])
    return best, arg


def two_point_chain_weight(M: ManifoldModel, n_links: int, *, m2: float,
                           eps: float, t: float, tau: float, x, y,
                           delta: float = DELTA_DEFAULT):
    """Closed form for the chain with n_links internal lines.

    The chain collapses by the semigroup law to a single kernel at total
    scale tau_d + sum of internal scales; the sup is one dimensional.
    Returns (value, argmax_total_internal_scale).
    """
    if n_links < 0:
        raise DomainError("chain length must be nonnegative")
    if not (0 < eps <= t) or tau <= 0:
        raise DomainError("need 0 < eps <= t and tau > 0")
    taud = tau * (1.0 + delta)
    d = float(G.distance(M, x, y))

    def g(u):
        return math.exp(-m2 * u) * float(HK.kernel_radial(M, taud + u, d))

    if n_links == 0:
        return float(HK.kernel_radial(M, taud, d)), 0.0
    lo = n_links * eps * (1.0 + delta)
    hi = n_links * t * (1.0 + delta)
    return _sup_unimodal(g, lo, hi)


def two_point_global_weight(M: ManifoldModel, l: int, *, m2: float, eps: float,
                            t: float, tau: float, x, y,
                            delta: float = DELTA_DEFAULT) -> float:
    """Sum of the chain closed forms over the whole two-point class."""
    n_max = max(3 * l - 2, 0)
    return sum(two_point_chain_weight(M, n, m2=m2, eps=eps, t=t, tau=tau,
                                      x=x, y=y, delta=delta)[0]
               for n in range(n_max + 1))


def two_point_bridge_weight(M: ManifoldModel, l: int, *, m2: float, eps: float,
                            t: float, x1, x2,
                            delta: float = DELTA_DEFAULT) -> float:
    """Twice-rooted two-point class: chains of k internal lines joining the
    roots, no external line; k runs to 3l-2 (one line when l = 0)."""
    if not (0 < eps <= t):
        raise DomainError("need 0 < eps <= t")
    d = float(G.distance(M, x1, x2))
    total = 0.0
    for k in range(1, max(3 * l - 2, 1) + 1):
        def g(u):
            return math.exp(-m2 * u) * float(HK.kernel_radial(M, u, d))
        val, _ = _sup_unimodal(g, k * eps * (1.0 + delta), k * t * (1.0 + delta))
        total += val
    return total


# ---- long-time weight

def long_time_weight(M: ManifoldModel, tree: Tree, *, m2: float, eps: float,
                     t: float, tau, x1, ys, delta: float = DELTA_DEFAULT,
                     mc_samples: int = 4000, seed: int = 0,
                     err_request: float | None = None,
                     sup_points: int = 24) -> WeightFactorValue:
    """Long-time variant: each internal line carries the short-scale sup plus
    the tail integral over scales beyond 1, and the sup sits inside the
    integral over internal positions (pointwise in the sampled vertices).

    t may be infinite when m2 > 0; without mass the tail integral diverges.
    """
    if t < 1.0:
        raise DomainError("the long-time form needs t >= 1")
    if math.isinf(t) and m2 <= 0:
        raise DomainError("the tail integral diverges without mass")
    if tree.twice_rooted:
        raise DomainError("long-time weight implemented for once-rooted trees")
    if not 0 < eps <= 1.0:
        raise DomainError("need 0 < eps <= 1")

    fixed = {0: np.asarray(G.as_vec(x1), float)}
    for v, y in zip(tree.externals, ys):
        fixed[v] = np.asarray(G.as_vec(y), float)
    tau = tuple(float(u) for u in tau)
    if tree.s == 1:
        return WeightFactorValue(1.0, 0.0, ())

    pairs = [max(G.distance(M, a, b) for a in fixed.values()) for b in fixed.values()]
    r_extra = float(max(pairs)) + 1.0
    flat = M.kind is ManifoldKind.FLAT
    cache = _EvalCache(M, r_extra)

    # per-line factor as a radial table: sup_{t' in [eps,1]} C_{t'(1+d)}(r)
    # plus the tail integral of C over [1, t]
    t_mix = min(t, 1.0 + (6.0 / m2 if m2 > 0 else 0.0))
    cap = HK._radial_cutoff(M, max(1.0 + delta, t_mix)) + r_extra
    if M.kind is ManifoldKind.SPHERE:
        cap = min(cap, math.pi / M.curvature_param)
    r_grid = np.linspace(0.0, cap, 384)
    sup_part = np.zeros_like(r_grid)
    for tp in np.geomspace(eps, 1.0, sup_points):
        td = tp * (1.0 + delta)
        vals = math.exp(-m2 * td) * np.asarray(HK.kernel_radial(M, td, r_grid), float)
        sup_part = np.maximum(sup_part, vals)
    tail = np.zeros_like(r_grid)
    if t > 1.0:
        for i, r in enumerate(r_grid):
            tail[i] = quad(
                lambda u: math.exp(-m2 * u) * float(HK.kernel_radial(M, u, float(r))),
                1.0, t, epsabs=1e-300, epsrel=1e-8, limit=200)[0]
    factor = sup_part + tail

    def line_factor(d):
        return np.interp(d, r_grid, factor, right=0.0)

    order, parent, eval_lines = _bfs_plan(tree)
    if not order and not eval_lines:
        val = 1.0
        for (a, b), tu in zip(tree.external_lines(), tau):
            e = b if tree.is_external(b) else a
            o = a if e == b else b
            val *= float(HK.kernel_radial(M, tu * (1.0 + delta),
                                          float(G.distance(M, fixed[o], fixed[e]))))
        return WeightFactorValue(val, 0.0, ())

    rng = np.random.default_rng(seed)
    n = mc_samples
    wa, wb = 1.0 + delta, t_mix * (1.0 + delta)
    logw = np.zeros(n)
    pos = {v: np.broadcast_to(p, (n, p.shape[-1])) for v, p in fixed.items()}
    for v in order:
        pv, _ = parent[v]
        P = np.asarray(pos[pv], float)
        pick = rng.random(n) < 0.5
        if flat:
            sig = np.where(pick, math.sqrt(2.0 * wa), math.sqrt(2.0 * wb))
            Z = P + sig[:, None] * rng.standard_normal((n, M.dim))
            d = np.linalg.norm(Z - P, axis=-1)
            qa = np.asarray(HK.kernel_radial(M, wa, d), float)
            qb = np.asarray(HK.kernel_radial(M, wb, d), float)
            q = 0.5 * (qa + qb)
        else:
            sa, sb = cache.sampler(wa), cache.sampler(wb)
            r = np.empty(n)
            na = int(np.sum(pick))
            r[pick] = sa.sample(rng, na)[0]
            r[~pick] = sb.sample(rng, n - na)[0]
            dirs = _batch_unit_tangents(M, P, rng)
            Z = G.project_to_manifold(M, G.exp_map(M, P, dirs, r))
            q = 0.5 * (sa.pdf_at(r) + sb.pdf_at(r))
            d = r
        logw += np.log(np.maximum(line_factor(d), 1e-300)) - np.log(np.maximum(q, 1e-300))
        pos[v] = Z
    for a, b, _ in eval_lines:
        d = G.distance(M, pos[a], pos[b])
        logw += np.log(np.maximum(line_factor(d), 1e-300))
    for (a, b), tu in zip(tree.external_lines(), tau):
        e = b if tree.is_external(b) else a
        o = a if e == b else b
        td = tu * (1.0 + delta)
        d = G.distance(M, pos[o], pos[e])
        if flat:
            K = np.asarray(HK.kernel_radial(M, td, np.atleast_1d(np.asarray(d, float))), float)
        else:
            K = cache.table(td)(d)
        logw = logw + np.log(np.maximum(np.broadcast_to(K, logw.shape), 1e-300))
    w = np.exp(logw)
    est = float(np.mean(w))
    err = float(np.std(w) / math.sqrt(n))
    status = PASS
    if err_request is not None and err > err_request * max(est, 1e-300):
        status = INCONCLUSIVE
    return WeightFactorValue(est, err, (), status)
