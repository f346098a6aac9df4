"""Factor graph over pixel disparities and loopy belief propagation.

Nodes
-----
* one variable per pixel, carrying a contiguous label support;
* one evidence factor per pixel, whose message to its variable is always the
  prior vector;
* one dependency factor per pixel with an equality-indicator potential over
  its members (1 when all members share a label, 0 otherwise).

Messages live on the edges between variables and dependency factors.  Edge
``e`` is position ``e`` of the neighbourhood CSR ``members`` array, i.e. the
pair (factor owning slot ``e``, ``members[e]``).  Both message directions are
stored as rows of an (E, L) array aligned with the member variable's support.

With the indicator potential the factor-to-variable sum collapses to a
product: ``mu_{f->i}(d) = prod_{j != i} mu_{j->f}(d)``, where a member whose
support lacks ``d`` contributes ``message_floor``.  Every message is floored
and normalised to sum 1 after each update.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np

from . import _accel
from ._accel import njit, prange
from .cost_volume import LabelField, initial_disparity


@dataclass(frozen=True)
class LbpConfig:
    tau: float = 0.5
    max_iter: int = 60
    damping: float = 0.0
    message_floor: float = 1e-12
    min_iter: int = 1

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.max_iter < 1 or self.min_iter < 1:
            raise ValueError("max_iter and min_iter must be >= 1")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if not self.message_floor > 0:
            raise ValueError("message_floor must be positive")


@dataclass
class FactorGraph:
    shape: tuple
    lo: np.ndarray  # (n,) first label of each variable's support
    size: np.ndarray  # (n,) support length
    prior: np.ndarray  # (n, L) evidence message, zero padded
    fac_ptr: np.ndarray  # (n + 1,) dependency factor k owns edges fac_ptr[k]:fac_ptr[k + 1]
    fac_members: np.ndarray  # (E,) variable at each edge
    var_ptr: np.ndarray  # (n + 1,) variable i appears on edges var_edges[var_ptr[i]:var_ptr[i + 1]]
    var_edges: np.ndarray  # (E,)
    edge_factor: np.ndarray  # (E,) owning factor of each edge

    @property
    def n(self):
        return self.lo.shape[0]

    @property
    def n_edges(self):
        return self.fac_members.shape[0]

    @property
    def width(self):
        return self.prior.shape[1]

    def members(self, f):
        return self.fac_members[self.fac_ptr[f]:self.fac_ptr[f + 1]]

    def factors_of(self, i):
        """Factors attached to variable ``i``: ("evidence", i) then its dependency factors."""
        edges = self.var_edges[self.var_ptr[i]:self.var_ptr[i + 1]]
        return [("evidence", int(i))] + [("dependency", int(f)) for f in self.edge_factor[edges]]

    def edge(self, f, i):
        """Edge id joining dependency factor ``f`` and variable ``i``."""
        a, b = self.fac_ptr[f], self.fac_ptr[f + 1]
        hit = np.nonzero(self.fac_members[a:b] == i)[0]
        if hit.size == 0:
            raise KeyError(f"variable {i} is not a member of factor {f}")
        return int(a + hit[0])


@dataclass
class MessageStore:
    var_to_fac: np.ndarray  # (E, L)
    fac_to_var: np.ndarray  # (E, L)
    iteration: int = 0


@dataclass
class LbpTrace:
    rows: list = field(default_factory=list)  # (iteration, epsilon, seconds)

    def write_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("iteration,epsilon,wall_time\n")
            for t, eps, sec in self.rows:
                fh.write(f"{t},{eps!r},{sec!r}\n")


def build_graph(prior, nbrs):
    """Assemble the graph from a prior field and a neighbourhood structure."""
    if tuple(prior.shape) != tuple(nbrs.shape):
        raise ValueError(f"prior grid {prior.shape} != neighbourhood grid {nbrs.shape}")
    size = np.asarray(prior.size, dtype=np.int64)
    if (size < 1).any():
        raise ValueError("every variable needs a non-empty label support")
    members = np.asarray(nbrs.members, dtype=np.int64)
    n = size.shape[0]
    if members.size and (members.min() < 0 or members.max() >= n):
        raise ValueError("neighbourhood member out of bounds")
    fac_ptr = np.asarray(nbrs.ptr, dtype=np.int64)
    edge_factor = np.repeat(np.arange(n, dtype=np.int64), np.diff(fac_ptr))
    var_edges = np.argsort(members, kind="stable").astype(np.int64)
    var_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(members, minlength=n), out=var_ptr[1:])
    mask = np.arange(prior.values.shape[1])[None, :] < size[:, None]
    p = np.where(mask, np.asarray(prior.values, dtype=np.float64), 0.0)
    return FactorGraph(tuple(prior.shape), np.asarray(prior.lo, dtype=np.int64), size,
                       np.ascontiguousarray(p), fac_ptr, members, var_ptr, var_edges, edge_factor)


def init_messages(graph):
    """Uniform messages on every edge (zero beyond each support)."""
    size = graph.size[graph.fac_members]
    mask = np.arange(graph.width)[None, :] < size[:, None]
    uni = np.where(mask, 1.0 / size[:, None], 0.0)
    return MessageStore(uni.copy(), uni.copy(), 0)


def _finish(vec, floor):
    vec = np.maximum(vec, floor)
    return vec / vec.sum()


# ------------------------------------------------ single-edge reference form

def msg_var_to_factor(graph, store, i, f, floor=1e-12):
    """Prior times every incoming dependency message except the one from ``f``."""
    k = int(graph.size[i])
    out = graph.prior[i, :k].copy()
    skip = graph.edge(f, i)
    for e in graph.var_edges[graph.var_ptr[i]:graph.var_ptr[i + 1]]:
        if e != skip:
            out *= store.fac_to_var[e, :k]
    return _finish(out, floor)


def msg_factor_to_var(graph, store, f, i, floor=1e-12):
    """Equality-indicator factor message: product of the other members' messages."""
    k = int(graph.size[i])
    labels = graph.lo[i] + np.arange(k)
    out = np.ones(k)
    target = graph.edge(f, i)
    for e in range(graph.fac_ptr[f], graph.fac_ptr[f + 1]):
        if e == target:
            continue
        j = graph.fac_members[e]
        off = labels - graph.lo[j]
        inside = (off >= 0) & (off < graph.size[j])
        out *= np.where(inside, store.var_to_fac[e, np.clip(off, 0, graph.size[j] - 1)], floor)
    return _finish(out, floor)


# ------------------------------------------------------------ numba sweeps

@njit(parallel=True, cache=True)
def _var_sweep_nb(prior, f2v, var_ptr, var_edges, size, floor, out, belief):
    n = size.shape[0]
    width = prior.shape[1]
    for i in prange(n):
        a = var_ptr[i]
        k = var_ptr[i + 1] - a
        m = size[i]
        # prefix[q] = prior * prod of the first q incoming messages
        prefix = np.empty((k + 1, m))
        for l in range(m):
            prefix[0, l] = prior[i, l]
        for q in range(k):
            e = var_edges[a + q]
            for l in range(m):
                prefix[q + 1, l] = prefix[q, l] * f2v[e, l]
        suffix = np.ones(m)
        for q in range(k - 1, -1, -1):
            e = var_edges[a + q]
            total = 0.0
            for l in range(m):
                v = prefix[q, l] * suffix[l]
                if v < floor:
                    v = floor
                out[e, l] = v
                total += v
            for l in range(m):
                out[e, l] /= total
            for l in range(m, width):
                out[e, l] = 0.0
            for l in range(m):
                suffix[l] *= f2v[e, l]
        total = 0.0
        for l in range(m):
            v = prefix[k, l]
            if v < floor:
                v = floor
            belief[i, l] = v
            total += v
        for l in range(m):
            belief[i, l] /= total
        for l in range(m, width):
            belief[i, l] = 0.0


@njit(parallel=True, cache=True)
def _fac_sweep_nb(v2f, fac_ptr, fac_members, lo, size, floor, out):
    nf = fac_ptr.shape[0] - 1
    width = v2f.shape[1]
    for f in prange(nf):
        a = fac_ptr[f]
        k = fac_ptr[f + 1] - a
        if k == 0:
            continue
        base = lo[fac_members[a]]
        top = base + size[fac_members[a]]
        for q in range(1, k):
            j = fac_members[a + q]
            if lo[j] < base:
                base = lo[j]
            if lo[j] + size[j] > top:
                top = lo[j] + size[j]
        span = top - base
        # leave-one-out products over the factor's union label range
        prefix = np.empty((k + 1, span))
        for g in range(span):
            prefix[0, g] = 1.0
        for q in range(k):
            j = fac_members[a + q]
            for g in range(span):
                off = base + g - lo[j]
                if off >= 0 and off < size[j]:
                    prefix[q + 1, g] = prefix[q, g] * v2f[a + q, off]
                else:
                    prefix[q + 1, g] = prefix[q, g] * floor
        suffix = np.ones(span)
        for q in range(k - 1, -1, -1):
            j = fac_members[a + q]
            m = size[j]
            shift = lo[j] - base
            total = 0.0
            for l in range(m):
                v = prefix[q, shift + l] * suffix[shift + l]
                if v < floor:
                    v = floor
                out[a + q, l] = v
                total += v
            for l in range(m):
                out[a + q, l] /= total
            for l in range(m, width):
                out[a + q, l] = 0.0
            for g in range(span):
                off = base + g - lo[j]
                if off >= 0 and off < m:
                    suffix[g] *= v2f[a + q, off]
                else:
                    suffix[g] *= floor


# ------------------------------------------------------------ numpy sweeps

def _normalize_rows(x, mask, floor):
    x = np.where(mask, np.maximum(x, floor), 0.0)
    return x / x.sum(axis=1, keepdims=True)


def _var_sweep_np(g, f2v, floor):
    width = g.width
    esize = g.size[g.fac_members]
    emask = np.arange(width)[None, :] < esize[:, None]
    total = np.zeros((g.n, width))
    logs = np.log(np.where(emask, f2v, 1.0))
    np.add.at(total, g.fac_members, logs)
    with np.errstate(divide="ignore"):
        logp = np.log(g.prior)
    vmask = np.arange(width)[None, :] < g.size[:, None]
    full = np.where(vmask, logp + total, -np.inf)
    belief = _normalize_rows(np.exp(full), vmask, floor)
    out = np.exp(full[g.fac_members] - logs)
    return _normalize_rows(out, emask, floor), belief


def _fac_sweep_np(g, v2f, floor):
    width = g.width
    members = g.fac_members
    esize = g.size[members]
    elo = g.lo[members]
    emask = np.arange(width)[None, :] < esize[:, None]
    base = np.minimum.reduceat(elo, g.fac_ptr[:-1]) if g.n_edges else elo
    top = np.maximum.reduceat(elo + esize, g.fac_ptr[:-1]) if g.n_edges else elo
    span = int((top - base).max())
    # union-range log sums per factor: every member contributes log(floor) outside its support
    logfloor = math.log(floor)
    deg = np.diff(g.fac_ptr)
    total = np.full((g.n, span), 0.0)
    total += (deg * logfloor)[:, None]
    eb = base[g.edge_factor]
    logs = np.log(np.where(emask, v2f, 1.0))
    rows = np.repeat(g.edge_factor, width)
    cols = (elo - eb)[:, None] + np.arange(width)[None, :]
    valid = emask.ravel()
    np.add.at(total, (rows[valid], cols.ravel()[valid]), (logs - logfloor).ravel()[valid])
    own = np.clip(cols, 0, span - 1)
    out = np.exp(total[g.edge_factor[:, None], own] - logs)
    return _normalize_rows(out, emask, floor)


# ------------------------------------------------------------------ sweeps

def var_sweep(graph, store, floor):
    """All variable-to-factor messages plus the current beliefs."""
    if _accel.use_numba():
        out = np.empty_like(store.var_to_fac)
        belief = np.empty_like(graph.prior)
        _var_sweep_nb(graph.prior, store.fac_to_var, graph.var_ptr, graph.var_edges,
                      graph.size, floor, out, belief)
        return out, belief
    return _var_sweep_np(graph, store.fac_to_var, floor)


def fac_sweep(graph, store, floor):
    """All dependency-factor-to-variable messages."""
    if _accel.use_numba():
        out = np.empty_like(store.fac_to_var)
        _fac_sweep_nb(store.var_to_fac, graph.fac_ptr, graph.fac_members,
                      graph.lo, graph.size, floor, out)
        return out
    return _fac_sweep_np(graph, store.var_to_fac, floor)


def beliefs(graph, store, floor):
    """Posterior field: prior times every incoming dependency message, normalised."""
    _, belief = var_sweep(graph, store, floor)
    return LabelField(graph.shape, graph.lo, graph.size, belief)


def run_lbp(graph, cfg=LbpConfig(), trace=None, callback=None, store=None):
    """Synchronous flooding LBP.

    Each iteration recomputes every variable-to-factor message from the
    previous factor-to-variable messages, then every factor-to-variable
    message.  After each iteration the MAP map is decoded and the L2 change
    against the previous map is compared to ``cfg.tau`` (the initial map is the
    prior argmax).

    Returns ``(posterior, iterations, converged)``.  ``trace`` (an
    :class:`LbpTrace`) collects per-iteration rows; ``callback(t, store,
    posterior)`` is invoked after every iteration.
    """
    floor = cfg.message_floor
    lam = cfg.damping
    if store is None:
        store = init_messages(graph)
    prev = initial_disparity(LabelField(graph.shape, graph.lo, graph.size, graph.prior)).astype(np.float64)
    start = time.perf_counter()
    converged = False
    posterior = None
    t = 0
    for t in range(1, cfg.max_iter + 1):
        v2f, _ = var_sweep(graph, store, floor)
        if lam > 0:
            v2f = (1.0 - lam) * v2f + lam * store.var_to_fac
        store.var_to_fac = v2f
        f2v = fac_sweep(graph, store, floor)
        if lam > 0:
            f2v = (1.0 - lam) * f2v + lam * store.fac_to_var
        store.fac_to_var = f2v
        store.iteration = t
        posterior = beliefs(graph, store, floor)
        current = map_disparity(posterior).astype(np.float64)
        eps = float(np.linalg.norm(current - prev))
        if trace is not None:
            trace.rows.append((t, eps, time.perf_counter() - start))
        if callback is not None:
            callback(t, store, posterior)
        prev = current
        if eps <= cfg.tau and t >= cfg.min_iter:
            converged = True
            break
    return posterior, t, converged


def map_disparity(post):
    """Per-pixel support label with the largest posterior; ties go to the smaller label."""
    return initial_disparity(post)
