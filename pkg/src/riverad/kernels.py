"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba
(``*_loops``) and a vectorised numpy version (``*_numpy``). The public name
is bound to one of them at import time according to
:data:`riverad._accel.USE_NUMBA`. Both versions must agree to rounding;
``tests/test_kernels.py`` checks this and ``benchmarks/bench_kernels.py``
times them against each other.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "river_pair_matrices",
    "masked_softmax",
    "masked_softmax_backward",
    "trailing_mean",
    "topk_mask",
    "pooled_percentiles",
    "IMPLEMENTATIONS",
]


# ---------------------------------------------------------------------------
# stream distances / flow connectivity on a rooted tree of segments


def _river_pairs_loops(parent, seg_len, down_len, depth, pt_seg, pt_off):
    m = pt_seg.shape[0]
    dist = np.zeros((m, m))
    conn = np.zeros((m, m), dtype=np.bool_)
    for i in range(m):
        si = pt_seg[i]
        di = seg_len[si] - pt_off[i] + down_len[si]
        for j in range(i, m):
            sj = pt_seg[j]
            dj = seg_len[sj] - pt_off[j] + down_len[sj]
            a = si
            b = sj
            while depth[a] > depth[b]:
                a = parent[a]
            while depth[b] > depth[a]:
                b = parent[b]
            while a != b:
                a = parent[a]
                b = parent[b]
            if a == si or a == sj:
                h = abs(di - dj)
                c = True
            else:
                h = di + dj - 2.0 * (seg_len[a] + down_len[a])
                c = False
            dist[i, j] = h
            dist[j, i] = h
            conn[i, j] = c
            conn[j, i] = c
    return dist, conn


def _river_pairs_numpy(parent, seg_len, down_len, depth, pt_seg, pt_off):
    n_seg = parent.shape[0]
    anc = np.zeros((n_seg, n_seg), dtype=bool)
    for s in range(n_seg):
        a = s
        while a >= 0:
            anc[s, a] = True
            a = parent[a]
    d_out = seg_len[pt_seg] - pt_off + down_len[pt_seg]
    common = anc[pt_seg][:, None, :] & anc[pt_seg][None, :, :]
    lca = np.argmax(np.where(common, depth[None, None, :], -1), axis=-1)
    conn = (lca == pt_seg[:, None]) | (lca == pt_seg[None, :])
    junction = seg_len[lca] + down_len[lca]
    dist = np.where(
        conn,
        np.abs(d_out[:, None] - d_out[None, :]),
        d_out[:, None] + d_out[None, :] - 2.0 * junction,
    )
    return dist, conn


# ---------------------------------------------------------------------------
# softmax restricted to a neighbourhood mask, batched over the leading axis


def _masked_softmax_loops(logits, mask):
    bsz, n, m = logits.shape
    out = np.zeros_like(logits)
    for b in range(bsz):
        for i in range(n):
            top = -np.inf
            for j in range(m):
                if mask[i, j] and logits[b, i, j] > top:
                    top = logits[b, i, j]
            total = 0.0
            for j in range(m):
                if mask[i, j]:
                    e = np.exp(logits[b, i, j] - top)
                    out[b, i, j] = e
                    total += e
            if total > 0.0:
                for j in range(m):
                    out[b, i, j] /= total
    return out


def _masked_softmax_numpy(logits, mask):
    shifted = np.where(mask, logits, -np.inf)
    top = shifted.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(np.where(mask, logits - top, -np.inf))
    total = e.sum(axis=-1, keepdims=True)
    return e / np.where(total > 0.0, total, 1.0)


def _masked_softmax_backward_loops(alpha, grad):
    bsz, n, m = alpha.shape
    out = np.empty_like(alpha)
    for b in range(bsz):
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += alpha[b, i, j] * grad[b, i, j]
            for j in range(m):
                out[b, i, j] = alpha[b, i, j] * (grad[b, i, j] - dot)
    return out


def _masked_softmax_backward_numpy(alpha, grad):
    return alpha * (grad - (alpha * grad).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# trailing simple moving average along axis 0 (partial windows at the start)


def _trailing_mean_loops(x, window):
    t_len, n = x.shape
    out = np.empty_like(x)
    for i in range(n):
        acc = 0.0
        for t in range(t_len):
            acc += x[t, i]
            if t >= window:
                acc -= x[t - window, i]
            out[t, i] = acc / min(t + 1, window)
    return out


def _trailing_mean_numpy(x, window):
    csum = np.cumsum(x, axis=0)
    out = csum.copy()
    out[window:] = csum[window:] - csum[:-window]
    counts = np.minimum(np.arange(1, x.shape[0] + 1), window)
    return out / counts[:, None]


# ---------------------------------------------------------------------------
# per-row top-K selection among allowed entries, lowest index wins ties


def _topk_mask_loops(scores, allowed, k):
    n, m = scores.shape
    out = np.zeros((n, m), dtype=np.bool_)
    for r in range(n):
        for _ in range(k):
            best = -1
            for c in range(m):
                if allowed[r, c] and not out[r, c]:
                    if best < 0 or scores[r, c] > scores[r, best]:
                        best = c
            if best < 0:
                break
            out[r, best] = True
    return out


def _topk_mask_numpy(scores, allowed, k):
    n, m = scores.shape
    order = np.argsort(np.where(allowed, -scores, np.inf), axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(m)[None, :]
    return allowed & (ranks < k)


# ---------------------------------------------------------------------------
# per-node percentile of validation scores pooled over an in-neighbourhood


def _pooled_percentiles_loops(scores, adjacency, q):
    t_len, n = scores.shape
    out = np.empty(n)
    for i in range(n):
        count = 0
        for j in range(n):
            if adjacency[j, i]:
                count += t_len
        pool = np.empty(count)
        pos = 0
        for j in range(n):
            if adjacency[j, i]:
                for t in range(t_len):
                    pool[pos] = scores[t, j]
                    pos += 1
        pool.sort()
        h = (count - 1) * q / 100.0
        lo = int(np.floor(h))
        hi = min(lo + 1, count - 1)
        out[i] = pool[lo] + (h - lo) * (pool[hi] - pool[lo])
    return out


def _pooled_percentiles_numpy(scores, adjacency, q):
    n = scores.shape[1]
    out = np.empty(n)
    for i in range(n):
        out[i] = np.percentile(scores[:, adjacency[:, i]], q, method="linear")
    return out


IMPLEMENTATIONS = {
    "river_pair_matrices": (njit(_river_pairs_loops), _river_pairs_numpy),
    "masked_softmax": (njit(_masked_softmax_loops), _masked_softmax_numpy),
    "masked_softmax_backward": (njit(_masked_softmax_backward_loops), _masked_softmax_backward_numpy),
    "trailing_mean": (njit(_trailing_mean_loops), _trailing_mean_numpy),
    "topk_mask": (njit(_topk_mask_loops), _topk_mask_numpy),
    "pooled_percentiles": (njit(_pooled_percentiles_loops), _pooled_percentiles_numpy),
}

_pick = 0 if USE_NUMBA else 1


def river_pair_matrices(parent, seg_len, down_len, depth, pt_seg, pt_off):
    """Pairwise along-network distance and flow connectivity between points.

    Args:
        parent: (S,) downstream segment of each segment, -1 at the outlet.
        seg_len: (S,) segment lengths.
        down_len: (S,) distance from each segment's downstream end to the outlet.
        depth: (S,) number of hops from each segment to the outlet.
        pt_seg: (m,) segment of each point.
        pt_off: (m,) offset of each point measured from its segment's upstream end.

    Returns:
        ``(dist, connected)``, both (m, m) and symmetric.
    """
    fn = IMPLEMENTATIONS["river_pair_matrices"][_pick]
    return fn(
        np.ascontiguousarray(parent, dtype=np.int64),
        np.ascontiguousarray(seg_len, dtype=np.float64),
        np.ascontiguousarray(down_len, dtype=np.float64),
        np.ascontiguousarray(depth, dtype=np.int64),
        np.ascontiguousarray(pt_seg, dtype=np.int64),
        np.ascontiguousarray(pt_off, dtype=np.float64),
    )


def masked_softmax(logits, mask):
    """Softmax over the last axis of (B, n, m) ``logits`` restricted to ``mask`` (n, m).

    Masked-out entries are exactly 0; a row with no allowed entry is all 0.
    """
    fn = IMPLEMENTATIONS["masked_softmax"][_pick]
    return fn(np.ascontiguousarray(logits, dtype=np.float64), np.ascontiguousarray(mask, dtype=np.bool_))


def masked_softmax_backward(alpha, grad):
    fn = IMPLEMENTATIONS["masked_softmax_backward"][_pick]
    return fn(np.ascontiguousarray(alpha, dtype=np.float64), np.ascontiguousarray(grad, dtype=np.float64))


def trailing_mean(x, window: int):
    """Trailing mean of length ``window`` down each column of (T, n) ``x``."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    fn = IMPLEMENTATIONS["trailing_mean"][_pick]
    return fn(np.ascontiguousarray(x, dtype=np.float64), int(window))


def topk_mask(scores, allowed, k: int):
    """Boolean mask of the ``k`` largest allowed entries in every row of ``scores``.

    Rows with fewer than ``k`` allowed entries select all of them.
    """
    fn = IMPLEMENTATIONS["topk_mask"][_pick]
    return fn(np.ascontiguousarray(scores, dtype=np.float64), np.ascontiguousarray(allowed, dtype=np.bool_), int(k))


def pooled_percentiles(scores, adjacency, q: float):
    """For each node i, the q-th percentile of ``scores[:, j]`` pooled over ``{j: adjacency[j, i]}``."""
    fn = IMPLEMENTATIONS["pooled_percentiles"][_pick]
    return fn(np.ascontiguousarray(scores, dtype=np.float64), np.ascontiguousarray(adjacency, dtype=np.bool_), float(q))
