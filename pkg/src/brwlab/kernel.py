"""Translation-invariant reproduction kernels on Z^d and their finite restrictions.

A :class:`Kernel` is a finite stencil ``offset -> rate``: a particle at ``x``
sends offspring to ``x + offset`` at that rate. A :class:`FiniteGraph` is the
kernel restricted to a finite vertex set (and possibly a subset of its edges),
stored in CSR form over source vertices. Restrictions are always free
boundary: an edge is either kept at its full rate or dropped.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidKernelError, InvalidPathError, InvalidRateError, InvalidSubgraphError

Point = tuple[int, ...]


def _as_point(p, d: int) -> Point:
    if isinstance(p, (int, np.integer)):
        p = (int(p),)
    p = tuple(int(v) for v in p)
    if len(p) != d:
        raise ValueError(f"point {p} does not have dimension {d}")
    return p


@dataclass(frozen=True)
class Kernel:
    """Finite-range translation-invariant kernel ``mu(x, x+o) = rate(o)``."""

    d: int
    entries: tuple[tuple[Point, float], ...]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([o for o, _ in self.entries], dtype=np.int64).reshape(-1, self.d)

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([r for _, r in self.entries], dtype=np.float64)

    @cached_property
    def zeta_full(self) -> float:
        """Total rate out of a site with all neighbours present."""
        return float(sum(r for _, r in self.entries))

    @property
    def K(self) -> float:
        # every restriction has zeta(x) <= zeta_full
        return self.zeta_full

    @cached_property
    def radius(self) -> int:
        """Largest sup-norm of an offset in the support."""
        return int(np.abs(self.offsets).max()) if len(self.entries) else 0

    def rate(self, offset) -> float:
        o = _as_point(offset, self.d)
        return dict(self.entries).get(o, 0.0)

    @property
    def loop_rate(self) -> float:
        return self.rate((0,) * self.d)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        m = dict(self.entries)
        for o, r in m.items():
            neg = tuple(-v for v in o)
            if abs(m.get(neg, 0.0) - r) > atol:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "entries": [{"offset": list(o), "rate": r} for o, r in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: Mapping) -> Kernel:
        d = obj["d"]
        entries = {tuple(e["offset"]): float(e["rate"]) for e in obj["entries"]}
        return make_stencil_kernel(d, entries)

    @classmethod
    def from_json(cls, text: str) -> Kernel:
        return cls.from_dict(json.loads(text))


def make_stencil_kernel(d: int, entries: Mapping) -> Kernel:
    """Build a kernel from an ``offset -> rate`` map.

    Offsets may be ints when ``d == 1``. Zero rates are dropped; loops
    (the zero offset) are allowed.
    """
    if int(d) != d or d < 1:
        raise InvalidKernelError(f"dimension must be a positive integer, got {d}")
    d = int(d)
    clean: dict[Point, float] = {}
    for off, rate in entries.items():
        o = _as_point(off, d)
        rate = float(rate)
        if not np.isfinite(rate):
            raise InvalidRateError(f"rate for offset {o} is not finite")
        if rate < 0:
            raise InvalidRateError(f"negative rate {rate} for offset {o}")
        if rate > 0:
            clean[o] = clean.get(o, 0.0) + rate
    if not clean:
        raise InvalidKernelError("kernel has no positive rate")
    return Kernel(d=d, entries=tuple(sorted(clean.items())))


def blz_kernel(d: int, alpha: float, beta: float) -> Kernel:
    """Loop rate ``alpha`` plus ``beta / 2d`` to each nearest neighbour."""
    entries: dict[Point, float] = {(0,) * d: alpha}
    for i in range(d):
        for s in (1, -1):
            o = [0] * d
            o[i] = s
            entries[tuple(o)] = beta / (2 * d)
    return make_stencil_kernel(d, entries)


def nearest_neighbor_kernel(d: int, rate: float = 1.0) -> Kernel:
    """``rate`` to each of the 2d nearest neighbours, no loop."""
    entries: dict[Point, float] = {}
    for i in range(d):
        for s in (1, -1):
            o = [0] * d
            o[i] = s
            entries[tuple(o)] = rate
    return make_stencil_kernel(d, entries)


@dataclass(frozen=True, eq=False)
class FiniteGraph:
    """A kernel restricted to a finite vertex set, as a CSR adjacency.

    Edges out of vertex ``i`` are ``targets[indptr[i]:indptr[i+1]]`` with
    rates ``rates[...]`` and the stencil entry they came from in
    ``offset_ids[...]``.
    """

    kernel: Kernel
    coords: np.ndarray
    indptr: np.ndarray
    targets: np.ndarray
    rates: np.ndarray
    offset_ids: np.ndarray
    origin: int
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        for a in (self.coords, self.indptr, self.targets, self.rates, self.offset_ids):
            a.setflags(write=False)

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.targets)

    @cached_property
    def sources(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))

    @cached_property
    def zeta(self) -> np.ndarray:
        """Per-vertex total outgoing rate."""
        z = np.zeros(self.n_vertices)
        np.add.at(z, self.sources, self.rates)
        return z

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Sparse ``M[x, y] = mu(x, y)``."""
        return sp.csr_matrix(
            (self.rates, self.targets, self.indptr), shape=(self.n_vertices, self.n_vertices)
        )

    @cached_property
    def _index(self) -> dict[Point, int]:
        return {tuple(int(v) for v in c): i for i, c in enumerate(self.coords)}

    def index(self, point) -> int:
        p = _as_point(point, self.d)
        try:
            return self._index[p]
        except KeyError:
            raise IndexError(f"point {p} is not a vertex of the graph") from None

    def __contains__(self, point) -> bool:
        return _as_point(point, self.d) in self._index

    def point(self, i: int) -> Point:
        return tuple(int(v) for v in self.coords[i])

    @property
    def origin_point(self) -> Point:
        return self.point(self.origin)

    def rate(self, x, y) -> float:
        i, j = self.index(x), self.index(y)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        hit = np.nonzero(self.targets[lo:hi] == j)[0]
        return float(self.rates[lo + hit[0]]) if len(hit) else 0.0

    def is_bipartite(self) -> bool:
        color = np.full(self.n_vertices, -1, dtype=np.int64)
        adj = (self.matrix + self.matrix.T).tocsr()
        for s in range(self.n_vertices):
            if color[s] >= 0:
                continue
            color[s] = 0
            stack = [s]
            while stack:
                u = stack.pop()
                for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                    if color[v] < 0:
                        color[v] = 1 - color[u]
                        stack.append(v)
                    elif color[v] == color[u]:
                        return False
        return True

    def with_origin(self, point) -> FiniteGraph:
        return FiniteGraph(
            self.kernel, self.coords, self.indptr, self.targets, self.rates,
            self.offset_ids, self.index(point),
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.kernel.to_json().encode())
        for a in (self.coords, self.indptr, self.targets, self.rates):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(str(self.origin).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        """Offset-list serialization: each vertex lists its retained stencil entries."""
        per_vertex = [
            self.offset_ids[self.indptr[i]:self.indptr[i + 1]].tolist()
            for i in range(self.n_vertices)
        ]
        return {
            "kernel": self.kernel.to_dict(),
            "vertices": self.coords.tolist(),
            "origin": self.origin,
            "retained_offsets": per_vertex,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> FiniteGraph:
        kernel = Kernel.from_dict(obj["kernel"])
        coords = np.asarray(obj["vertices"], dtype=np.int64).reshape(-1, kernel.d)
        lookup = _Lookup(coords, kernel.radius)
        src, tgt, oid = [], [], []
        for i, ids in enumerate(obj["retained_offsets"]):
            for k in ids:
                j = lookup.find(coords[i] + kernel.offsets[k])
                if j < 0:
                    raise InvalidSubgraphError(f"retained offset {k} of vertex {i} leaves the vertex set")
                src.append(i)
                tgt.append(j)
                oid.append(k)
        return _assemble(kernel, coords, np.array(src, dtype=np.int64),
                         np.array(tgt, dtype=np.int64), np.array(oid, dtype=np.int64),
                         int(obj["origin"]))


class _Lookup:
    """Dense point -> index table over the bounding box of a vertex set."""

    def __init__(self, coords: np.ndarray, pad: int):
        self.lo = coords.min(axis=0) - pad
        self.shape = tuple(int(s) for s in coords.max(axis=0) + pad - self.lo + 1)
        self.table = np.full(self.shape, -1, dtype=np.int64)
        self.table[tuple((coords - self.lo).T)] = np.arange(len(coords))

    def find_many(self, pts: np.ndarray) -> np.ndarray:
        rel = pts - self.lo
        ok = np.all((rel >= 0) & (rel < np.array(self.shape)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        out[ok] = self.table[tuple(rel[ok].T)]
        return out

    def find(self, pt) -> int:
        return int(self.find_many(np.asarray(pt, dtype=np.int64).reshape(1, -1))[0])


def _assemble(kernel, coords, src, tgt, oid, origin) -> FiniteGraph:
    order = np.lexsort((oid, src))
    src, tgt, oid = src[order], tgt[order], oid[order]
    indptr = np.zeros(len(coords) + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return FiniteGraph(
        kernel=kernel,
        coords=np.ascontiguousarray(coords, dtype=np.int64),
        indptr=indptr,
        targets=tgt.astype(np.int64),
        rates=kernel.rates[oid].astype(np.float64),
        offset_ids=oid.astype(np.int64),
        origin=int(origin),
    )


EdgeMask = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def _build(kernel: Kernel, coords: np.ndarray, origin: int, edge_mask: EdgeMask | None = None) -> FiniteGraph:
    lookup = _Lookup(coords, kernel.radius)
    srcs, tgts, oids = [], [], []
    idx = np.arange(len(coords))
    for k, off in enumerate(kernel.offsets):
        tgt = lookup.find_many(coords + off)
        keep = tgt >= 0
        if edge_mask is not None:
            keep &= edge_mask(idx, tgt, k)
        srcs.append(idx[keep])
        tgts.append(tgt[keep])
        oids.append(np.full(int(keep.sum()), k, dtype=np.int64))
    return _assemble(kernel, coords, np.concatenate(srcs), np.concatenate(tgts),
                     np.concatenate(oids), origin)


def closest_to_zero(coords: np.ndarray) -> int:
    """Index of the vertex nearest the lattice origin (Euclidean), ties lexicographic."""
    dist = (coords.astype(np.int64) ** 2).sum(axis=1)
    best = np.nonzero(dist == dist.min())[0]
    if len(best) == 1:
        return int(best[0])
    sub = coords[best]
    order = np.lexsort(sub.T[::-1])
    return int(best[order[0]])


def box_coords(d: int, center, m: int) -> np.ndarray:
    """Points of ``center + [-m, m]^d`` in row-major order (last axis fastest)."""
    grid = np.indices((2 * m + 1,) * d).reshape(d, -1).T - m
    return grid + np.asarray(center, dtype=np.int64)


def box_graph(kernel: Kernel, center=None, m: int = 0) -> FiniteGraph:
    """The kernel restricted to ``center + B(m)``; edges leaving the box are dropped."""
    if m < 0:
        raise InvalidSubgraphError(f"box radius must be >= 0, got {m}")
    center = _as_point(center if center is not None else (0,) * kernel.d, kernel.d)
    coords = box_coords(kernel.d, center, m)
    # centre of a row-major box is the middle index
    return _build(kernel, coords, origin=len(coords) // 2)


def _vertex_array(vertices, d: int) -> np.ndarray:
    if isinstance(vertices, np.ndarray):
        arr = vertices.astype(np.int64).reshape(-1, d)
    else:
        arr = np.array([_as_point(v, d) for v in vertices], dtype=np.int64).reshape(-1, d)
    if len(arr) == 0:
        raise InvalidSubgraphError("vertex set is empty")
    arr = np.unique(arr, axis=0)
    return arr


def restrict(
    kernel: Kernel,
    vertices: Iterable,
    open_edges: Callable[[Point, Point], bool] | None = None,
    origin=None,
) -> FiniteGraph:
    """Restrict ``kernel`` to ``vertices``, keeping edges where ``open_edges(x, y)`` holds.

    Vertices are stored in lexicographic order. ``origin`` defaults to the
    vertex closest to the lattice origin.
    """
    coords = _vertex_array(vertices, kernel.d)
    o = closest_to_zero(coords) if origin is None else None
    mask = None
    if open_edges is not None:
        def mask(src, tgt, k):
            out = np.zeros(len(src), dtype=bool)
            for n, (i, j) in enumerate(zip(src, tgt)):
                if j >= 0:
                    out[n] = bool(open_edges(tuple(coords[i].tolist()), tuple(coords[j].tolist())))
            return out
    g = _build(kernel, coords, origin=o if o is not None else 0, edge_mask=mask)
    if origin is not None:
        g = g.with_origin(origin)
    return g


def restrict_mask(kernel: Kernel, coords: np.ndarray, edge_mask: EdgeMask, origin: int | None = None) -> FiniteGraph:
    """Vectorized :func:`restrict`: ``edge_mask(src_idx, tgt_idx, offset_id)`` returns a bool array.

    ``coords`` must already be unique; row order is preserved.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if len(coords) == 0:
        raise InvalidSubgraphError("vertex set is empty")
    return _build(kernel, coords, closest_to_zero(coords) if origin is None else origin, edge_mask)


def lattice_path(start, steps: Sequence) -> list[Point]:
    """Walk from ``start`` applying each step offset in turn."""
    cur = np.asarray(start, dtype=np.int64)
    path = [tuple(cur.tolist())]
    for s in steps:
        cur = cur + np.asarray(s, dtype=np.int64)
        path.append(tuple(cur.tolist()))
    return path


def box_with_paths(kernel: Kernel, center, m: int, paths: Sequence[Sequence]) -> FiniteGraph:
    """The kernel restricted to ``(center + B(m))`` union the given paths.

    Inside the box every stencil edge is kept. A path contributes only its
    consecutive edges (both directions) plus loops at its vertices.
    """
    d = kernel.d
    center = _as_point(center, d)
    support = {tuple(o) for o in kernel.offsets.tolist()}
    path_edges: set[tuple[Point, Point]] = set()
    pts = [tuple(p) for p in box_coords(d, center, m).tolist()]
    for path in paths:
        path = [_as_point(p, d) for p in path]
        if not path or path[0] != center:
            raise InvalidPathError(f"path must start at {center}")
        for a, b in zip(path, path[1:]):
            step = tuple(bb - aa for aa, bb in zip(a, b))
            if step not in support:
                raise InvalidPathError(f"step {a} -> {b} is not an edge of the kernel")
            path_edges.add((a, b))
            path_edges.add((b, a))
        pts.extend(path)
    coords = _vertex_array(pts, d)
    lo = np.array(center) - m
    hi = np.array(center) + m
    in_box = np.all((coords >= lo) & (coords <= hi), axis=1)
    loop_id = -1
    for k, o in enumerate(kernel.offsets.tolist()):
        if not any(o):
            loop_id = k

    def mask(src, tgt, k):
        out = in_box[src] & in_box[np.maximum(tgt, 0)] & (tgt >= 0)
        if k == loop_id:
            return tgt >= 0
        for n in np.nonzero((tgt >= 0) & ~out)[0]:
            a = tuple(coords[src[n]].tolist())
            b = tuple(coords[tgt[n]].tolist())
            out[n] = (a, b) in path_edges
        return out

    lookup = _Lookup(coords, 0)
    origin = lookup.find(center)
    return _build(kernel, coords, origin, mask)


def kernel_matvec(graph: FiniteGraph, v):
    """One step of ``mu^(n+1)(x, .) = sum_w mu^(n)(x, w) mu(w, .)``: returns ``v M``.

    ``v`` is either a dense array over vertices or a ``point -> value`` mapping
    (returned as a mapping of the nonzero entries).
    """
    if isinstance(v, Mapping):
        dense = np.zeros(graph.n_vertices)
        for p, val in v.items():
            dense[graph.index(p)] += val
        out = graph.matrix.T @ dense
        return {graph.point(i): float(out[i]) for i in np.nonzero(out)[0]}
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (graph.n_vertices,):
        raise IndexError(f"vector has shape {v.shape}, graph has {graph.n_vertices} vertices")
    return graph.matrix.T @ v


def delta(graph: FiniteGraph, x: int | None = None) -> np.ndarray:
    v = np.zeros(graph.n_vertices)
    v[graph.origin if x is None else x] = 1.0
    return v
