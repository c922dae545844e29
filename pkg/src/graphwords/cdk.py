"""Context Dependent Kernel between attributed graphs and the derived dissimilarity.

For two graphs A (m nodes) and B (n nodes) the union kernel is propagated as

    K0 = exp(-D / beta) / |exp(-D / beta)|_1
    Kt = exp(-D / beta + (alpha / beta) T K(t-1) T) / |...|_1

where D holds squared descriptor distances over the union and T is the
block-diagonal union adjacency. Because T has no cross-graph block, the
kernel stays block symmetric and only the AA, AB and BB blocks need to be
propagated. The engine below works on stacks of pairs at once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .graphs import GraphFeature


@dataclass(frozen=True)
class CdkParams:
    alpha: float = 0.0001
    beta: float = 0.1
    iterations: int = 2

    def __post_init__(self):
        if not self.alpha >= 0 or not np.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not self.beta > 0 or not np.isfinite(self.beta):
            raise ValueError(f"beta must be finite and > 0, got {self.beta}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be an integer >= 0, got {self.iterations}")


@dataclass
class UnionMatrices:
    m: int
    n: int
    D: np.ndarray
    T: np.ndarray


def _check_pair(a: GraphFeature, b: GraphFeature) -> None:
    if a.layer != b.layer:
        raise ValueError(f"layer mismatch: {a.layer} vs {b.layer}")
    if a.nodes.shape[1] != b.nodes.shape[1]:
        raise ValueError(f"descriptor dimension mismatch: {a.nodes.shape[1]} vs {b.nodes.shape[1]}")


def build_union_matrices(a: GraphFeature, b: GraphFeature) -> UnionMatrices:
    _check_pair(a, b)
    if a.layer == 0:
        raise ValueError("union matrices are defined for layers > 0 only")
    x = np.vstack([a.nodes, b.nodes])
    diff = x[:, None, :] - x[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    m, n = a.n_nodes, b.n_nodes
    t = np.zeros((m + n, m + n))
    t[:m, :m] = a.adjacency()
    t[m:, m:] = b.adjacency()
    return UnionMatrices(m, n, d, t)


def _propagate(eaa, eab, ebb, ta, tb, params: CdkParams):
    """Run the kernel iteration on stacked blocks.

    ``e**`` are the exponents -D/beta per block, shaped (batch, rows, cols);
    any leading dimension may be 1 and broadcasts. Returns the normalised
    blocks and their sums.
    """
    c = params.alpha / params.beta
    kaa, kab, kbb = np.exp(eaa), np.exp(eab), np.exp(ebb)
    for step in range(params.iterations + 1):
        saa = kaa.sum(axis=(1, 2))
        sab = kab.sum(axis=(1, 2))
        sbb = kbb.sum(axis=(1, 2))
        norm = saa + sbb + 2.0 * sab
        if not np.all(np.isfinite(norm)) or not np.all(norm > 0):
            raise FloatingPointError("non-finite or vanishing kernel normalisation")
        inv = (1.0 / norm)[:, None, None]
        kaa, kab, kbb = kaa * inv, kab * inv, kbb * inv
        if step == params.iterations:
            break
        kaa = np.exp(eaa + c * np.matmul(np.matmul(ta, kaa), ta))
        kab = np.exp(eab + c * np.matmul(np.matmul(ta, kab), tb))
        kbb = np.exp(ebb + c * np.matmul(np.matmul(tb, kbb), tb))
    scale = 1.0 / norm
    return kaa, kab, kbb, saa * scale, sab * scale, sbb * scale


def cdk_kernel(u: UnionMatrices, params: CdkParams = CdkParams()) -> np.ndarray:
    m = u.m
    if np.any(u.T[:m, m:]) or np.any(u.T[m:, :m]):
        raise ValueError("topology matrix must not connect the two graphs")
    inv_beta = -1.0 / params.beta
    kaa, kab, kbb, *_ = _propagate(
        (u.D[:m, :m] * inv_beta)[None], (u.D[:m, m:] * inv_beta)[None], (u.D[m:, m:] * inv_beta)[None],
        u.T[:m, :m][None], u.T[m:, m:][None], params,
    )
    k = np.empty_like(u.D)
    k[:m, :m] = kaa[0]
    k[:m, m:] = kab[0]
    k[m:, :m] = kab[0].T
    k[m:, m:] = kbb[0]
    return k


def _layer0_rho(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return max(0.0, float(np.dot(d, d)) / 4.0)


def graph_dissimilarity(a: GraphFeature, b: GraphFeature, params: CdkParams = CdkParams()) -> float:
    """rho(A, B) = s(A,A) + s(B,B) - 2 s(A,B), in [0, 1].

    Layer-0 graphs compare their single descriptors by squared L2 distance / 4.
    The pair is evaluated in a canonical content order so rho(A,B) == rho(B,A).
    """
    _check_pair(a, b)
    if a.layer == 0:
        return _layer0_rho(a.nodes[0], b.nodes[0])
    if b.sort_key() < a.sort_key():
        a, b = b, a
    u = build_union_matrices(a, b)
    m = u.m
    inv_beta = -1.0 / params.beta
    *_, saa, sab, sbb = _propagate(
        (u.D[:m, :m] * inv_beta)[None], (u.D[:m, m:] * inv_beta)[None], (u.D[m:, m:] * inv_beta)[None],
        u.T[:m, :m][None], u.T[m:, m:][None], params,
    )
    return max(0.0, float(saa[0] + sbb[0] - 2.0 * sab[0]))


# ---------------------------------------------------------------------------
# batched evaluation


def _run(fn: Callable[[int], None], jobs: Iterable[int], workers: int) -> None:
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        for j in jobs:
            fn(j)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _ in pool.map(fn, jobs):
            pass


class _Stack:
    """Dense arrays for a list of same-layer graphs."""

    def __init__(self, items: Sequence[GraphFeature]):
        self.x = np.stack([g.nodes for g in items]).astype(np.float64, copy=False)
        self.n, self.k, self.dim = self.x.shape
        self.flat = self.x.reshape(self.n * self.k, self.dim)
        self.sq = np.einsum("ijk,ijk->ij", self.x, self.x)
        self.t = np.stack([g.adjacency() for g in items])
        gram = np.matmul(self.x, self.x.transpose(0, 2, 1))
        d = np.maximum(self.sq[:, :, None] + self.sq[:, None, :] - 2.0 * gram, 0.0)
        d = 0.5 * (d + d.transpose(0, 2, 1))
        idx = np.arange(self.k)
        d[:, idx, idx] = 0.0
        self.dself = d

    def cross_d(self, i: int, other: "_Stack", js) -> np.ndarray:
        """Squared distances between nodes of item i and items ``js`` of other, (len(js), k, k')."""
        xo = other.x[js]
        g = np.matmul(self.x[i][None], xo.transpose(0, 2, 1))
        d = self.sq[i][None, :, None] + other.sq[js][:, None, :] - 2.0 * g
        return np.maximum(d, 0.0)


def _same_layer(items: Sequence[GraphFeature]) -> int:
    layers = {g.layer for g in items}
    if len(layers) != 1:
        raise ValueError(f"items span several layers: {sorted(layers)}")
    dims = {g.nodes.shape[1] for g in items}
    if len(dims) != 1:
        raise ValueError(f"items have mixed descriptor dimensions: {sorted(dims)}")
    return layers.pop()


def _layer0_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sx = np.einsum("ij,ij->i", x, x)
    sy = np.einsum("ij,ij->i", y, y)
    return np.maximum(sx[:, None] + sy[None, :] - 2.0 * (x @ y.T), 0.0) / 4.0


def pairwise_dissimilarities(items: Sequence[GraphFeature], params: CdkParams = CdkParams(),
                             workers: int = 1, dtype=np.float64) -> np.ndarray:
    """Symmetric matrix of rho over all pairs of ``items`` (one evaluation per unordered pair)."""
    n = len(items)
    if n == 0:
        raise ValueError("no items")
    layer = _same_layer(items)
    out = np.zeros((n, n), dtype=dtype)
    if layer == 0:
        x = np.stack([g.nodes[0] for g in items]).astype(np.float64, copy=False)
        block = 1024

        def fill0(r0: int) -> None:
            r1 = min(n, r0 + block)
            vals = _layer0_matrix(x[r0:r1], x[r0:])
            for i in range(r0, r1):
                row = vals[i - r0, i - r0 + 1:]
                out[i, i + 1:] = row
                out[i + 1:, i] = row

        _run(fill0, range(0, n, block), workers)
        return out

    order = sorted(range(n), key=lambda i: items[i].sort_key())
    st = _Stack([items[i] for i in order])
    inv_beta = -1.0 / params.beta
    pos = np.array(order)

    def fill(p: int) -> None:
        js = np.arange(p + 1, n)
        eab = st.cross_d(p, st, js) * inv_beta
        *_, saa, sab, sbb = _propagate(
            (st.dself[p] * inv_beta)[None], eab, st.dself[p + 1:] * inv_beta,
            st.t[p][None], st.t[p + 1:], params,
        )
        rho = np.maximum(saa + sbb - 2.0 * sab, 0.0)
        i = pos[p]
        out[i, pos[p + 1:]] = rho
        out[pos[p + 1:], i] = rho

    _run(fill, range(n - 1), workers)
    return out


def cross_dissimilarities(queries: Sequence[GraphFeature], targets: Sequence[GraphFeature],
                          params: CdkParams = CdkParams(), workers: int = 1) -> np.ndarray:
    """rho between every query (rows) and every target (columns)."""
    if not queries or not targets:
        raise ValueError("queries and targets must be non-empty")
    layer = _same_layer(list(queries) + list(targets))
    if layer == 0:
        xq = np.stack([g.nodes[0] for g in queries]).astype(np.float64, copy=False)
        xt = np.stack([g.nodes[0] for g in targets]).astype(np.float64, copy=False)
        return _layer0_matrix(xq, xt)

    sq, stt = _Stack(queries), _Stack(targets)
    tkeys = [g.sort_key() for g in targets]
    inv_beta = -1.0 / params.beta
    out = np.empty((len(queries), len(targets)))

    def fill(i: int) -> None:
        qk = queries[i].sort_key()
        first = np.array([qk <= k for k in tkeys])
        js = np.flatnonzero(first)
        if js.size:
            eab = sq.cross_d(i, stt, js) * inv_beta
            *_, saa, sab, sbb = _propagate(
                (sq.dself[i] * inv_beta)[None], eab, stt.dself[js] * inv_beta,
                sq.t[i][None], stt.t[js], params,
            )
            out[i, js] = saa + sbb - 2.0 * sab
        js = np.flatnonzero(~first)
        if js.size:
            eab = sq.cross_d(i, stt, js).transpose(0, 2, 1) * inv_beta
            *_, saa, sab, sbb = _propagate(
                stt.dself[js] * inv_beta, eab, (sq.dself[i] * inv_beta)[None],
                stt.t[js], sq.t[i][None], params,
            )
            out[i, js] = saa + sbb - 2.0 * sab

    _run(fill, range(len(queries)), workers)
    return np.maximum(out, 0.0)
