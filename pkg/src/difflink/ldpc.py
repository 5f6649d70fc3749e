"""LDPC codes over GF(2): construction, systematic encoding, BP decoding.

The parity-check matrix is the primary object; the generator is derived
from it by Gaussian elimination. Decoding is flooding-schedule belief
propagation with the tanh (sum-product) check rule by default and an
optional min-sum rule. LLR convention throughout: positive favours bit 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

_TANH_CLIP = 1.0 - 1e-12


class CodeConstructionError(ValueError):
    """Requested code parameters cannot be realized."""


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Sparse GF(2) parity-check matrix with per-row/column index lists."""

    matrix: np.ndarray  # uint8, shape [m, n]
    row_indices: tuple  # row -> np.ndarray of column indices with a 1
    col_indices: tuple  # col -> np.ndarray of row indices with a 1

    @classmethod
    def from_dense(cls, dense) -> "ParityCheckMatrix":
        h = (np.asarray(dense) & 1).astype(np.uint8)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise CodeConstructionError("parity-check matrix must be 2-D and nonempty")
        rows = tuple(np.flatnonzero(h[i]) for i in range(h.shape[0]))
        cols = tuple(np.flatnonzero(h[:, j]) for j in range(h.shape[1]))
        return cls(matrix=h, row_indices=rows, col_indices=cols)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def construct_regular(n: int, col_weight: int, row_weight: int, seed: int,
                      max_attempts: int = 100,
                      retries_per_column: int = 200) -> ParityCheckMatrix:
    """Random (col_weight, row_weight)-regular parity-check matrix.

    Socket-exact: every column gets exactly `col_weight` ones and every row
    exactly `row_weight`. Column connections are rejection-resampled to
    avoid 4-cycles (two columns sharing two rows); after the retry budget a
    4-cycle is accepted, so avoidance is best effort. Deterministic for a
    given seed.
    """
    if col_weight < 2:
        raise CodeConstructionError("column weight must be at least 2")
    if row_weight < 2:
        raise CodeConstructionError("row weight must be at least 2")
    if (n * col_weight) % row_weight != 0:
        raise CodeConstructionError(
            f"n*col_weight = {n * col_weight} not divisible by row_weight = {row_weight}")
    m = n * col_weight // row_weight
    if col_weight > m:
        raise CodeConstructionError("column weight exceeds number of rows")
    rng = np.random.default_rng(seed)

    for _ in range(max_attempts):
        slots = np.full(m, row_weight, dtype=np.int64)
        linked = set()  # row pairs already sharing some column
        chosen_rows: list[np.ndarray] = []
        dead_end = False
        for _col in range(n):
            avail = np.flatnonzero(slots > 0)
            if avail.size < col_weight:
                dead_end = True
                break
            pick = None
            for _try in range(retries_per_column):
                p = slots[avail] / slots[avail].sum()
                cand = rng.choice(avail, size=col_weight, replace=False, p=p)
                pairs = {(min(a, b), max(a, b))
                         for a, b in combinations(cand.tolist(), 2)}
                if not pairs & linked:
                    pick = cand
                    break
            if pick is None:  # best effort: accept the last candidate
                pick = cand
            linked |= {(min(a, b), max(a, b))
                       for a, b in combinations(pick.tolist(), 2)}
            slots[pick] -= 1
            chosen_rows.append(np.sort(pick))
        if dead_end:
            continue
        h = np.zeros((m, n), dtype=np.uint8)
        for col, rows in enumerate(chosen_rows):
            h[rows, col] = 1
        return ParityCheckMatrix.from_dense(h)

    raise CodeConstructionError(
        f"could not place sockets for ({col_weight},{row_weight})-regular "
        f"code with n={n} in {max_attempts} attempts")


@dataclass(frozen=True)
class LdpcCode:
    """Parity-check matrix plus derived systematic generator.

    `systematic_cols` are the codeword positions that carry the info bits,
    in info-bit order; the remaining (pivot) positions hold parity. The
    generator satisfies G . H^T = 0 over GF(2).
    """

    pcm: ParityCheckMatrix
    generator: np.ndarray       # uint8, shape [k, n]
    systematic_cols: np.ndarray  # int, shape [k]
    parity_cols: np.ndarray      # int, shape [n - k]

    @property
    def n(self) -> int:
        return self.pcm.n

    @property
    def k(self) -> int:
        return self.generator.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    def extract_info(self, codeword_bits: np.ndarray) -> np.ndarray:
        """Info bits sitting at the systematic positions of a codeword."""
        return np.asarray(codeword_bits)[..., self.systematic_cols]


def derive_generator(pcm: ParityCheckMatrix) -> LdpcCode:
    """Systematic generator via GF(2) Gaussian elimination.

    Pivots are searched from the rightmost column inward, so parity lands
    on high positions and info bits occupy the leftmost free columns
    whenever the matrix allows it. Rank-deficient rows reduce the check
    count, enlarging k = n - rank accordingly.
    """
    a = pcm.matrix.copy()
    m, n = a.shape
    pivot_cols: list[int] = []
    r = 0
    for c in range(n - 1, -1, -1):
        if r >= m:
            break
        hot = np.flatnonzero(a[r:, c]) + r
        if hot.size == 0:
            continue
        if hot[0] != r:
            a[[r, hot[0]]] = a[[hot[0], r]]
        others = np.flatnonzero(a[:, c])
        others = others[others != r]
        if others.size:
            a[others] ^= a[r]
        pivot_cols.append(c)
        r += 1
    rank = r
    if rank < 1:
        raise CodeConstructionError("parity-check matrix has rank 0")
    pivots = np.array(pivot_cols, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), pivots)
    k = n - rank

    # codeword constraint per pivot row t: c[pivot_t] = sum_f A[t, f] * c[f]
    gen = np.zeros((k, n), dtype=np.uint8)
    gen[np.arange(k), free] = 1
    for t in range(rank):
        gen[:, pivots[t]] = a[t, free]
    return LdpcCode(pcm=pcm, generator=gen,
                    systematic_cols=free, parity_cols=np.sort(pivots))


def encode(code: LdpcCode, bits) -> np.ndarray:
    """Map k info bits to an n-bit codeword with zero syndrome."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.shape != (code.k,):
        raise ValueError(f"expected {code.k} info bits, got shape {b.shape}")
    return (b @ code.generator) % 2


def syndrome(pcm: ParityCheckMatrix, bits: np.ndarray) -> np.ndarray:
    return (pcm.matrix @ np.asarray(bits, dtype=np.uint8)) % 2


@dataclass
class DecodeResult:
    bits: np.ndarray        # hard decisions, length n
    iterations: int
    converged: bool         # hard decisions satisfy every check
    llrs: np.ndarray        # final posterior LLRs, length n
    info_bits: np.ndarray = field(default=None)  # systematic positions


class _BpGraph:
    """Padded edge-index matrices for vectorized flooding BP.

    Edge e connects check `edge_row[e]` to variable `edge_col[e]`. The
    per-check and per-variable matrices are padded with a sentinel edge id
    (the last slot of every message array) that stays at the rule-neutral
    value, so irregular degrees vectorize cleanly.
    """

    def __init__(self, pcm: ParityCheckMatrix):
        rows = []
        cols = []
        for i, cs in enumerate(pcm.row_indices):
            rows.extend([i] * len(cs))
            cols.extend(cs.tolist())
        self.num_edges = len(rows)
        self.edge_row = np.array(rows, dtype=np.int64)
        self.edge_col = np.array(cols, dtype=np.int64)
        pad = self.num_edges  # sentinel slot
        dr = max((len(c) for c in pcm.row_indices), default=0)
        dc = max((len(r) for r in pcm.col_indices), default=0)
        self.check_edges = np.full((pcm.m, dr), pad, dtype=np.int64)
        self.var_edges = np.full((pcm.n, dc), pad, dtype=np.int64)
        rpos = np.zeros(pcm.m, dtype=np.int64)
        cpos = np.zeros(pcm.n, dtype=np.int64)
        for e in range(self.num_edges):
            i, j = self.edge_row[e], self.edge_col[e]
            self.check_edges[i, rpos[i]] = e
            rpos[i] += 1
            self.var_edges[j, cpos[j]] = e
            cpos[j] += 1


_GRAPH_CACHE: dict[int, _BpGraph] = {}


def _graph_for(pcm: ParityCheckMatrix) -> _BpGraph:
    key = id(pcm)
    g = _GRAPH_CACHE.get(key)
    if g is None:
        g = _BpGraph(pcm)
        if len(_GRAPH_CACHE) > 16:
            _GRAPH_CACHE.clear()
        _GRAPH_CACHE[key] = g
    return g


def _leave_one_out_product(t: np.ndarray) -> np.ndarray:
    m, d = t.shape
    pref = np.ones((m, d + 1))
    np.cumprod(t, axis=1, out=pref[:, 1:])
    suff = np.ones((m, d + 1))
    suff[:, :-1] = np.cumprod(t[:, ::-1], axis=1)[:, ::-1]
    return pref[:, :d] * suff[:, 1:]


def _leave_one_out_min(mag: np.ndarray) -> np.ndarray:
    m, d = mag.shape
    pref = np.full((m, d + 1), np.inf)
    np.minimum.accumulate(mag, axis=1, out=pref[:, 1:])
    suff = np.full((m, d + 1), np.inf)
    suff[:, :-1] = np.minimum.accumulate(mag[:, ::-1], axis=1)[:, ::-1]
    return np.minimum(pref[:, :d], suff[:, 1:])


def bp_decode(code: LdpcCode, llrs, max_iters: int = 20,
              rule: str = "sumproduct") -> DecodeResult:
    """Flooding belief propagation with early syndrome exit.

    Check-to-variable messages use the tanh rule
    beta = 2*atanh(prod tanh(v2c/2)) (or sign*min for `rule="minsum"`);
    variable totals are channel LLR plus all incoming betas. Hard decision:
    bit 1 iff the total is negative (ties decode to 0). Non-convergence
    after `max_iters` is reported via the flag, never raised.
    """
    llr = np.asarray(llrs, dtype=np.float64)
    if llr.shape != (code.n,):
        raise ValueError(f"expected {code.n} LLRs, got shape {llr.shape}")
    if not np.all(np.isfinite(llr)):
        raise ValueError("input LLRs must be finite")
    if rule not in ("sumproduct", "minsum"):
        raise ValueError(f"unknown BP rule: {rule!r}")
    pcm = code.pcm
    graph = _graph_for(pcm)
    ne = graph.num_edges

    def finish(total, iters, ok):
        hard = (total < 0).astype(np.uint8)
        return DecodeResult(bits=hard, iterations=iters, converged=ok,
                            llrs=total, info_bits=code.extract_info(hard))

    hard = (llr < 0).astype(np.uint8)
    if not syndrome(pcm, hard).any():
        return finish(llr.copy(), 0, True)

    v2c = np.zeros(ne + 1)
    v2c[:ne] = llr[graph.edge_col]
    c2v = np.zeros(ne + 1)
    total = llr.copy()
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        if rule == "sumproduct":
            t = np.tanh(0.5 * v2c)
            np.clip(t, -_TANH_CLIP, _TANH_CLIP, out=t)
            t[ne] = 1.0  # product-neutral pad
            loo = _leave_one_out_product(t[graph.check_edges])
            np.clip(loo, -_TANH_CLIP, _TANH_CLIP, out=loo)
            beta = 2.0 * np.arctanh(loo)
        else:
            sgn = np.where(v2c < 0, -1.0, 1.0)
            sgn[ne] = 1.0
            mag = np.abs(v2c)
            mag[ne] = np.inf
            s = sgn[graph.check_edges]
            sign_loo = np.prod(s, axis=1, keepdims=True) * s  # /s == *s for +-1
            beta = sign_loo * _leave_one_out_min(mag[graph.check_edges])
        c2v[graph.check_edges.ravel()] = beta.ravel()
        c2v[ne] = 0.0  # sum-neutral pad

        incoming = c2v[graph.var_edges].sum(axis=1)
        total = llr + incoming
        hard = (total < 0).astype(np.uint8)
        if not syndrome(pcm, hard).any():
            converged = True
            break
        v2c[:ne] = total[graph.edge_col] - c2v[:ne]
    return finish(total, iters, converged)
