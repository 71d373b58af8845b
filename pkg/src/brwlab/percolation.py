"""Bernoulli bond percolation on boxes of Z^d.

Bonds are the nearest-neighbour edges of ``B(L) = [-L, L]^d``. Bond ``(v, i)``
joins vertex ``v`` (row-major index) to ``v + e_i`` and has id ``v * d + i``;
bonds that would leave the box exist in the layout but are always closed.
Bond ``b`` is open iff ``U_b < p`` where ``U_b`` is the ``b``-th uniform of the
sample's counter-based stream, so samples with the same seed are coupled
monotonically in ``p``.
"""

from __future__ import annotations

import csv
import dataclasses
import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import InvalidParameterError, NoChainError
from .kernel import FiniteGraph, Kernel, Point, box_coords, closest_to_zero, restrict_mask
from .rng import TAG_BONDS, check_seed, uniforms

_MAGIC = b"BRWP"
_HEADER = struct.Struct("<4sIIdQ")


@dataclass(frozen=True, eq=False)
class PercolationSample:
    d: int
    L: int
    p: float
    seed: int
    open_bonds: np.ndarray  # bool, length n_vertices * d
    labels: np.ndarray  # canonical cluster label per vertex
    largest: int

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def n_vertices(self) -> int:
        return self.side ** self.d

    @cached_property
    def coords(self) -> np.ndarray:
        return box_coords(self.d, (0,) * self.d, self.L)

    @cached_property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)

    @cached_property
    def giant_mask(self) -> np.ndarray:
        return self.labels == self.largest

    @property
    def giant_size(self) -> int:
        return int(self.cluster_sizes[self.largest])

    @property
    def giant_density(self) -> float:
        return self.giant_size / self.n_vertices

    def vertex_index(self, point) -> int:
        rel = np.asarray(point, dtype=np.int64) + self.L
        if rel.shape != (self.d,) or np.any(rel < 0) or np.any(rel >= self.side):
            raise IndexError(f"point {tuple(point)} outside the box")
        return int(np.ravel_multi_index(tuple(rel), self.shape))

    def bond_id(self, x, y) -> int:
        """Id of the nearest-neighbour bond between points ``x`` and ``y``."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ValueError(f"{tuple(x)} and {tuple(y)} are not nearest neighbours")
        axis = int(np.nonzero(diff)[0][0])
        low = x if diff[axis] > 0 else y
        return self.vertex_index(low) * self.d + axis

    def is_open(self, x, y) -> bool:
        try:
            return bool(self.open_bonds[self.bond_id(x, y)])
        except IndexError:
            return False

    def bond_endpoints(self, bond: int) -> tuple[Point, Point]:
        v, axis = divmod(int(bond), self.d)
        x = self.coords[v]
        y = x.copy()
        y[axis] += 1
        return tuple(x.tolist()), tuple(y.tolist())

    def with_bond(self, x, y, is_open: bool) -> PercolationSample:
        """Copy of the sample with one bond forced, clusters relabelled."""
        bonds = self.open_bonds.copy()
        bonds[self.bond_id(x, y)] = is_open
        return _from_bonds(self.d, self.L, self.p, self.seed, bonds)

    def bond_graph(self) -> sp.csr_matrix:
        """Symmetric adjacency of the open bonds."""
        ids = np.nonzero(self.open_bonds)[0]
        v, axis = np.divmod(ids, self.d)
        stride = np.array([self.side ** (self.d - 1 - i) for i in range(self.d)])
        w = v + stride[axis]
        n = self.n_vertices
        a = sp.coo_matrix((np.ones(len(v)), (v, w)), shape=(n, n))
        return (a + a.T).tocsr()

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(_MAGIC, self.d, self.L, float(self.p), self.seed)
        return head + np.packbits(self.open_bonds, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> PercolationSample:
        magic, d, L, p, seed = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ValueError("not a percolation sample file")
        n_bonds = (2 * L + 1) ** d * d
        bits = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
        bonds = np.unpackbits(bits, count=n_bonds, bitorder="little").astype(bool)
        return _from_bonds(d, L, p, seed, bonds)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> PercolationSample:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def stats(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "p": self.p,
            "seed": self.seed,
            "n_vertices": self.n_vertices,
            "n_open_bonds": int(self.open_bonds.sum()),
            "n_clusters": self.n_clusters,
            "giant_size": self.giant_size,
            "giant_density": self.giant_density,
        }


def _in_box_bonds(d: int, L: int) -> np.ndarray:
    """Mask of bond ids whose far endpoint lies inside the box."""
    side = 2 * L + 1
    grid = np.indices((side,) * d).reshape(d, -1).T
    return (grid < side - 1).reshape(-1)


def canonical_labels(raw: np.ndarray) -> np.ndarray:
    """Relabel clusters 0, 1, ... in order of their smallest vertex index."""
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(order), dtype=np.int64)
    remap[order] = np.arange(len(order))
    _, inv = np.unique(raw, return_inverse=True)
    return remap[inv]


def _from_bonds(d: int, L: int, p: float, seed: int, bonds: np.ndarray) -> PercolationSample:
    bonds = np.asarray(bonds, dtype=bool) & _in_box_bonds(d, L)
    proto = PercolationSample(d, L, p, seed, bonds, np.zeros(0, dtype=np.int64), 0)
    _, raw = connected_components(proto.bond_graph(), directed=False)
    labels = canonical_labels(raw)
    sizes = np.bincount(labels)
    # argmax returns the first maximum, i.e. the smallest label
    largest = int(np.argmax(sizes))
    bonds.setflags(write=False)
    labels.setflags(write=False)
    return PercolationSample(d, L, float(p), seed, bonds, labels, largest)


def sample_percolation(d: int, L: int, p: float, seed: int) -> PercolationSample:
    """Open each nearest-neighbour bond of ``B(L)`` independently with probability ``p``."""
    if d < 1 or L < 1:
        raise InvalidParameterError(f"need d >= 1 and L >= 1, got d={d}, L={L}")
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"p must lie in [0, 1], got {p}")
    seed = check_seed(seed)
    n_bonds = (2 * L + 1) ** d * d
    u = uniforms(seed, TAG_BONDS, n_bonds)
    return _from_bonds(d, L, p, seed, u < p)


def giant_cluster_graph(sample: PercolationSample, kernel: Kernel) -> FiniteGraph:
    """The kernel restricted to the largest cluster and its open bonds.

    Loops are kept at every cluster vertex; nearest-neighbour offsets are kept
    when the bond is open; longer-range offsets are not percolation bonds and
    are dropped.
    """
    if kernel.d != sample.d:
        raise InvalidParameterError("kernel and sample dimensions differ")
    members = np.nonzero(sample.giant_mask)[0]
    coords = sample.coords[members]
    offsets = kernel.offsets
    l1 = np.abs(offsets).sum(axis=1)
    stride = np.array([sample.side ** (sample.d - 1 - i) for i in range(sample.d)])

    def mask(src, tgt, k):
        if l1[k] == 0:
            return tgt >= 0
        if l1[k] != 1:
            return np.zeros(len(src), dtype=bool)
        axis = int(np.nonzero(offsets[k])[0][0])
        ok = tgt >= 0
        a = members[src]
        low = a if offsets[k][axis] > 0 else a - stride[axis]
        out = np.zeros(len(src), dtype=bool)
        out[ok] = sample.open_bonds[low[ok] * sample.d + axis]
        return out

    notes: tuple[str, ...] = ()
    nonloop = bool(np.any(l1 > 0))
    if len(members) < 2 and nonloop:
        notes = ("degenerate-cluster: largest cluster has fewer than 2 vertices",)
    g = restrict_mask(kernel, coords, mask, origin=closest_to_zero(coords))
    return dataclasses.replace(g, notes=notes)


@dataclass(frozen=True)
class SeedChain:
    m: int
    M: int
    centers: tuple[Point, ...]
    paths: tuple[tuple[Point, ...], ...]

    def __len__(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "M": self.M,
            "centers": [list(c) for c in self.centers],
            "paths": [[list(p) for p in path] for path in self.paths],
        }


@dataclass
class ChainCheck:
    ok: bool
    violation: str | None = None
    detail: tuple = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return self.ok


def seed_centers(sample: PercolationSample, m: int) -> np.ndarray:
    """Row-major indices of centres ``c`` whose box ``c + B(m)`` is a seed in the giant cluster.

    A seed has every bond with both endpoints in the box open.
    """
    d, side = sample.d, sample.side
    bonds = sample.open_bonds.reshape(sample.shape + (d,))
    w = 2 * m + 1
    ok = np.ones((side - 2 * m,) * d, dtype=bool) if side > 2 * m else np.zeros((0,) * d, dtype=bool)
    if ok.size == 0:
        return np.zeros(0, dtype=np.int64)
    for axis in range(d):
        window = [w] * d
        window[axis] = 2 * m
        if m == 0:
            continue
        views = np.lib.stride_tricks.sliding_window_view(bonds[..., axis], tuple(window))
        allopen = views.reshape(views.shape[:d] + (-1,)).all(axis=-1)
        sl = tuple(slice(0, side - 2 * m) for _ in range(d))
        ok &= allopen[sl]
    lows = np.argwhere(ok)
    centers = lows + m
    idx = np.ravel_multi_index(tuple(centers.T), sample.shape) if len(centers) else np.zeros(0, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    return idx[sample.giant_mask[idx]]


def build_seed_chain(
    sample: PercolationSample,
    m: int,
    M: int | None = None,
    direction: int = 0,
    max_starts: int = 3,
) -> SeedChain:
    """Greedy chain of disjoint seeds ``x_j + B(m)`` linked by open paths of length <= ``M``.

    From the current seed, a breadth-first search of radius ``M`` over open
    bonds finds the nearest seed lying at least ``2m + 1`` further along
    ``direction`` (so every new box is disjoint from all earlier ones). The
    scan starts from seeds in the first block of the ``N``-partition,
    ``N = 4m + 3``, along ``direction``; the longest chain found is returned.
    """
    N = 4 * m + 3
    if M is None:
        M = 2 * N ** sample.d
    cand = seed_centers(sample, m)
    if len(cand) == 0:
        raise NoChainError("no seed box in the giant cluster")
    coords = sample.coords
    along = coords[cand, direction]
    is_seed = np.zeros(sample.n_vertices, dtype=bool)
    is_seed[cand] = True
    adj = sample.bond_graph()

    block = (along + sample.L) // (2 * N)
    first_block = block.min()
    starts = cand[block == first_block]
    starts = starts[np.lexsort(coords[starts].T[::-1])][:max_starts]

    best: tuple[list[int], list[list[int]]] | None = None
    for start in starts:
        chain, paths = [int(start)], []
        cur = int(start)
        while True:
            dist, pred = dijkstra(adj, indices=cur, unweighted=True, limit=M + 0.5,
                                  return_predecessors=True)
            reach = np.nonzero(np.isfinite(dist) & is_seed)[0]
            reach = reach[coords[reach, direction] >= coords[cur, direction] + 2 * m + 1]
            if len(reach) == 0:
                break
            key = np.lexsort(tuple(coords[reach].T[::-1]) + (coords[reach, direction], dist[reach]))
            nxt = int(reach[key[0]])
            path = [nxt]
            while path[-1] != cur:
                path.append(int(pred[path[-1]]))
            paths.append(path[::-1])
            chain.append(nxt)
            cur = nxt
        if best is None or len(chain) > len(best[0]):
            best = (chain, paths)
    chain, paths = best
    if len(chain) < 2:
        raise NoChainError("no chain of two or more seeds within the path bound")
    pt = lambda i: tuple(int(v) for v in coords[i])  # noqa: E731
    return SeedChain(
        m=m,
        M=int(M),
        centers=tuple(pt(c) for c in chain),
        paths=tuple(tuple(pt(v) for v in path) for path in paths),
    )


def verify_chain(sample: PercolationSample, chain: SeedChain) -> ChainCheck:
    """Check every seed-chain property directly against the bond field."""
    m, d, L = chain.m, sample.d, sample.L
    if len(chain.centers) == 0:
        return ChainCheck(False, "empty chain")
    if len(chain.paths) != len(chain.centers) - 1:
        return ChainCheck(False, "need one path per consecutive pair of seeds")
    centers = np.array(chain.centers, dtype=np.int64).reshape(-1, d)
    if np.any(np.abs(centers) > L - m):
        return ChainCheck(False, "seed box leaves the sample box")
    for a in range(len(centers)):
        for b in range(a + 1, len(centers)):
            if np.all(np.abs(centers[a] - centers[b]) <= 2 * m):
                return ChainCheck(False, "overlapping seed boxes", (a, b))
    giant = sample.giant_mask
    for j, c in enumerate(centers):
        pts = box_coords(d, c, m)
        for v in pts:
            if not giant[sample.vertex_index(v)]:
                return ChainCheck(False, "seed vertex outside the giant cluster", (j, tuple(v.tolist())))
            for axis in range(d):
                if v[axis] < c[axis] + m:
                    w = v.copy()
                    w[axis] += 1
                    if not sample.is_open(v, w):
                        return ChainCheck(False, "closed bond inside seed box",
                                          (j, tuple(v.tolist()), tuple(w.tolist())))
    for j, path in enumerate(chain.paths):
        if tuple(path[0]) != tuple(chain.centers[j]) or tuple(path[-1]) != tuple(chain.centers[j + 1]):
            return ChainCheck(False, "path endpoints do not match seed centres", (j,))
        if len(path) - 1 > chain.M:
            return ChainCheck(False, "path longer than the bound", (j, len(path) - 1))
        for a, b in zip(path, path[1:]):
            if np.abs(np.subtract(b, a)).sum() != 1 or not sample.is_open(a, b):
                return ChainCheck(False, "closed or non-lattice bond on path", (j, tuple(a), tuple(b)))
    return ChainCheck(True)


def write_cluster_csv(path, samples: Iterable[PercolationSample]) -> None:
    cols = ["d", "L", "p", "seed", "n_vertices", "n_open_bonds", "n_clusters", "giant_size", "giant_density"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\r\n")
        w.writeheader()
        for s in samples:
            w.writerow(s.stats())
