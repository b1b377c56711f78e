"""Pure numpy / Python fallbacks for the hot kernels.

Semantics match ``_numba`` exactly. Tree growing takes fixed-point integer
gradients, so its sums are exact and both backends produce identical trees.
"""
import heapq

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

_BG, _BORDER, _BONE = 0, 1, 2
_HU_SHIFT = 40
_HU_MAX = 32767
_OFFSETS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]


def median3(a, chunk=16):
    padded = np.pad(a, 1, mode="edge")
    win = sliding_window_view(padded, (3, 3, 3))
    out = np.empty_like(a)
    for x0 in range(0, a.shape[0], chunk):
        block = win[x0:x0 + chunk].reshape(-1, 27)
        med = np.partition(block, 13, axis=1)[:, 13]
        out[x0:x0 + chunk] = med.reshape(out[x0:x0 + chunk].shape)
    return out


def watershed_flood(hu, classes):
    nx, ny, nz = hu.shape
    out = classes.copy()
    border = out == _BORDER
    if not border.any():
        return out
    seeds = border & ndimage.binary_dilation(~border, structure=np.ones((3, 3, 3), bool))
    queued = seeds.copy()
    hu64 = hu.astype(np.int64)
    heap = []
    for x, y, z in zip(*np.nonzero(seeds)):
        lin = (int(x) * ny + int(y)) * nz + int(z)
        heap.append(((_HU_MAX - int(hu64[x, y, z])) << _HU_SHIFT) | lin)
    heapq.heapify(heap)
    mask = (1 << _HU_SHIFT) - 1
    while heap:
        key = heapq.heappop(heap)
        lin = key & mask
        z = lin % nz
        y = (lin // nz) % ny
        x = lin // (nz * ny)
        best_hu = None
        best_cls = _BG
        nbrs = []
        for dx, dy, dz in _OFFSETS:
            xi, yi, zi = x + dx, y + dy, z + dz
            if 0 <= xi < nx and 0 <= yi < ny and 0 <= zi < nz:
                nbrs.append((xi, yi, zi))
                c = out[xi, yi, zi]
                if c != _BORDER:
                    v = hu64[xi, yi, zi]
                    if best_hu is None or v > best_hu:
                        best_hu = v
                        best_cls = c
        out[x, y, z] = best_cls
        for xi, yi, zi in nbrs:
            if out[xi, yi, zi] == _BORDER and not queued[xi, yi, zi]:
                queued[xi, yi, zi] = True
                nlin = (xi * ny + yi) * nz + zi
                heapq.heappush(heap, ((_HU_MAX - int(hu64[xi, yi, zi])) << _HU_SHIFT) | nlin)
    out[out == _BORDER] = _BG
    return out


def _segment_sums(flat_idx, weights, size):
    out = np.zeros(size, dtype=weights.dtype)
    np.add.at(out, flat_idx, weights)
    return out


def grow_round(X, sorted_idx, g, h, max_depth, min_gain_rel):
    n, d = X.shape
    K = g.shape[1]
    M = 2 ** (max_depth + 1) - 1
    feat = np.full((K, M), -1, dtype=np.int32)
    thr = np.zeros((K, M))
    val = np.zeros((K, M))
    exists = np.zeros((K, M), dtype=bool)
    node = np.zeros((n, K), dtype=np.int64)
    leaf_of = np.zeros((n, K), dtype=np.int32)
    exists[:, 0] = True
    cls = np.arange(K)
    for depth in range(max_depth + 1):
        base = 2 ** depth - 1
        width = 2 ** depth
        active = node >= 0
        seg = cls[None, :] * width + (node - base)
        flat = seg[active]
        G = _segment_sums(flat, g[active], K * width).reshape(K, width)
        H = _segment_sums(flat, h[active], K * width).reshape(K, width)
        cnt = np.bincount(flat, minlength=K * width).reshape(K, width)
        has = cnt > 0
        Gf = G.astype(float)
        Hf = H.astype(float)
        val[:, base:base + width][has] = -Gf[has] / Hf[has]
        if depth == max_depth:
            leaf_of[active] = node[active]
            break
        parent = np.zeros((K, width))
        parent[has] = Gf[has] * Gf[has] / Hf[has]
        best_gain = np.zeros(K * width)
        best_feat = np.full(K * width, -1, dtype=np.int32)
        best_thr = np.zeros(K * width)
        pflat = parent.ravel()
        Gflat = G.ravel()
        Hflat = H.ravel()
        for f in range(d):
            order = sorted_idx[f]
            xs = X[order, f]
            nd = node[order]
            perm = np.argsort(nd, axis=0, kind="stable")
            nd_s = np.take_along_axis(nd, perm, 0)
            g_s = np.take_along_axis(g[order], perm, 0)
            h_s = np.take_along_axis(h[order], perm, 0)
            x_s = xs[perm]
            cg = np.cumsum(g_s, axis=0)
            ch = np.cumsum(h_s, axis=0)
            start = np.ones((n, K), dtype=bool)
            start[1:] = nd_s[1:] != nd_s[:-1]
            pos = np.arange(n)[:, None]
            first = np.maximum.accumulate(np.where(start, pos, 0), axis=0)
            prev_g = np.where(first > 0, np.take_along_axis(cg, np.maximum(first - 1, 0), 0), 0)
            prev_h = np.where(first > 0, np.take_along_axis(ch, np.maximum(first - 1, 0), 0), 0)
            gl = (cg - prev_g)[:-1]
            hl = (ch - prev_h)[:-1]
            cand = (nd_s[:-1] >= 0) & (nd_s[1:] == nd_s[:-1]) & (x_s[1:] != x_s[:-1])
            if not cand.any():
                continue
            pi, ki = np.nonzero(cand)
            sid = ki * width + (nd_s[pi, ki] - base)
            gr_c = (Gflat[sid] - gl[pi, ki]).astype(float)
            hr_c = (Hflat[sid] - hl[pi, ki]).astype(float)
            gl_c = gl[pi, ki].astype(float)
            hl_c = hl[pi, ki].astype(float)
            ok = (hl_c > 0) & (hr_c > 0)
            gain = np.full(gl_c.shape, -np.inf)
            gain[ok] = gl_c[ok] * gl_c[ok] / hl_c[ok] + gr_c[ok] * gr_c[ok] / hr_c[ok] - pflat[sid[ok]]
            segmax = np.full(K * width, -np.inf)
            np.maximum.at(segmax, sid, gain)
            hit = gain == segmax[sid]
            firstpos = np.full(K * width, np.iinfo(np.int64).max)
            np.minimum.at(firstpos, sid[hit], pi[hit])
            upd = np.nonzero(firstpos != np.iinfo(np.int64).max)[0]
            sel_p = firstpos[upd]
            sel_k = upd // width
            fg = segmax[upd]
            good = (fg > best_gain[upd]) & (fg > min_gain_rel * pflat[upd])
            upd, sel_p, sel_k, fg = upd[good], sel_p[good], sel_k[good], fg[good]
            lo = x_s[sel_p, sel_k]
            hi = x_s[sel_p + 1, sel_k]
            t = 0.5 * (lo + hi)
            t = np.where(t > lo, t, hi)
            best_gain[upd] = fg
            best_feat[upd] = f
            best_thr[upd] = t
        bf = best_feat.reshape(K, width)
        bt = best_thr.reshape(K, width)
        level_exists = exists[:, base:base + width]
        split = level_exists & (bf >= 0)
        kk, ll = np.nonzero(split)
        jj = base + ll
        feat[kk, jj] = bf[kk, ll]
        thr[kk, jj] = bt[kk, ll]
        exists[kk, 2 * jj + 1] = True
        exists[kk, 2 * jj + 2] = True
        ii, kk = np.nonzero(active)
        jj = node[ii, kk]
        fj = feat[kk, jj]
        is_split = fj >= 0
        go_left = np.zeros(ii.shape, dtype=bool)
        go_left[is_split] = X[ii[is_split], fj[is_split]] < thr[kk[is_split], jj[is_split]]
        new = np.where(go_left, 2 * jj + 1, 2 * jj + 2)
        leaf_of[ii[~is_split], kk[~is_split]] = jj[~is_split]
        node[ii, kk] = np.where(is_split, new, -1)
    return feat, thr, val, exists, leaf_of


def compact_trees(feat, thr, val, exists):
    K, M = feat.shape
    rank = np.cumsum(exists, axis=1) - 1
    sizes = exists.sum(axis=1).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    kk, jj = np.nonzero(exists)
    p = offsets[kk] + rank[kk, jj]
    total = int(sizes.sum())
    feature = np.full(total, -1, dtype=np.int32)
    threshold = np.zeros(total)
    left = np.full(total, -1, dtype=np.int32)
    right = np.full(total, -1, dtype=np.int32)
    value = np.zeros(total)
    value[p] = val[kk, jj]
    is_split = feat[kk, jj] >= 0
    ps, ks, js = p[is_split], kk[is_split], jj[is_split]
    feature[ps] = feat[ks, js]
    threshold[ps] = thr[ks, js]
    left[ps] = rank[ks, 2 * js + 1]
    right[ps] = rank[ks, 2 * js + 2]
    return feature, threshold, left, right, value, sizes


def predict_raw(X, feature, threshold, left, right, value, tree_offset, n_classes):
    n = X.shape[0]
    out = np.zeros((n, n_classes))
    rows = np.arange(n)
    for t in range(tree_offset.shape[0] - 1):
        off = tree_offset[t]
        j = np.zeros(n, dtype=np.int64)
        while True:
            f = feature[off + j]
            inner = f >= 0
            if not inner.any():
                break
            ri = rows[inner]
            ji = j[inner]
            go_left = X[ri, f[inner]] < threshold[off + ji]
            j[inner] = np.where(go_left, left[off + ji], right[off + ji])
        out[:, t % n_classes] += value[off + j]
    return out
