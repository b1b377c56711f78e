"""numba implementations of the hot kernels (see package docstring)."""
import heapq

import numpy as np
from numba import njit

from ._network import MEDIAN27

_BG, _BORDER, _BONE = 0, 1, 2
_HU_SHIFT = 40
_HU_MAX = 32767


def median3(a):
    return _median3_rows(a, MEDIAN27)


@njit(cache=True)
def _median3_rows(a, net):
    # one (x, y) column at a time: the 27 shifted z-rows go through the
    # comparator network elementwise, which LLVM vectorizes along z
    nx, ny, nz = a.shape
    out = np.empty_like(a)
    top = np.iinfo(a.dtype).max
    rows = np.empty((32, nz), dtype=a.dtype)
    for x in range(nx):
        for y in range(ny):
            c = 0
            for dx in range(-1, 2):
                xi = min(max(x + dx, 0), nx - 1)
                for dy in range(-1, 2):
                    yi = min(max(y + dy, 0), ny - 1)
                    src = a[xi, yi]
                    for dz in range(-1, 2):
                        r = rows[c]
                        for z in range(nz):
                            r[z] = src[min(max(z + dz, 0), nz - 1)]
                        c += 1
            for q in range(27, 32):
                rows[q, :] = top
            for p in range(net.shape[0]):
                ri = rows[net[p, 0]]
                rj = rows[net[p, 1]]
                for z in range(nz):
                    u = ri[z]
                    w = rj[z]
                    ri[z] = min(u, w)
                    rj[z] = max(u, w)
            out[x, y, :] = rows[13]
    return out


@njit(cache=True)
def watershed_flood(hu, classes):
    nx, ny, nz = hu.shape
    out = classes.copy()
    queued = np.zeros(hu.shape, dtype=np.bool_)
    heap = [np.int64(0)]
    heap.pop()
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if out[x, y, z] != _BORDER:
                    continue
                seeded = False
                for dx in range(-1, 2):
                    xi = x + dx
                    if xi < 0 or xi >= nx:
                        continue
                    for dy in range(-1, 2):
                        yi = y + dy
                        if yi < 0 or yi >= ny:
                            continue
                        for dz in range(-1, 2):
                            zi = z + dz
                            if zi < 0 or zi >= nz:
                                continue
                            if out[xi, yi, zi] != _BORDER:
                                seeded = True
                if seeded:
                    lin = (np.int64(x) * ny + y) * nz + z
                    key = (np.int64(_HU_MAX - np.int64(hu[x, y, z])) << _HU_SHIFT) | lin
                    heapq.heappush(heap, key)
                    queued[x, y, z] = True
    mask = (np.int64(1) << _HU_SHIFT) - 1
    while len(heap) > 0:
        key = heapq.heappop(heap)
        lin = key & mask
        z = lin % nz
        y = (lin // nz) % ny
        x = lin // (nz * ny)
        best_hu = -(1 << 20)
        best_cls = _BG
        # neighbor offsets enumerate in lexicographic coordinate order,
        # so the strict comparison keeps the smallest coordinate on HU ties
        for dx in range(-1, 2):
            xi = x + dx
            if xi < 0 or xi >= nx:
                continue
            for dy in range(-1, 2):
                yi = y + dy
                if yi < 0 or yi >= ny:
                    continue
                for dz in range(-1, 2):
                    zi = z + dz
                    if zi < 0 or zi >= nz:
                        continue
                    if out[xi, yi, zi] != _BORDER and hu[xi, yi, zi] > best_hu:
                        best_hu = hu[xi, yi, zi]
                        best_cls = out[xi, yi, zi]
        out[x, y, z] = best_cls
        for dx in range(-1, 2):
            xi = x + dx
            if xi < 0 or xi >= nx:
                continue
            for dy in range(-1, 2):
                yi = y + dy
                if yi < 0 or yi >= ny:
                    continue
                for dz in range(-1, 2):
                    zi = z + dz
                    if zi < 0 or zi >= nz:
                        continue
                    if out[xi, yi, zi] == _BORDER and not queued[xi, yi, zi]:
                        nlin = (np.int64(xi) * ny + yi) * nz + zi
                        nkey = (np.int64(_HU_MAX - np.int64(hu[xi, yi, zi])) << _HU_SHIFT) | nlin
                        heapq.heappush(heap, nkey)
                        queued[xi, yi, zi] = True
    # border regions with no classified voxel anywhere in reach
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if out[x, y, z] == _BORDER:
                    out[x, y, z] = _BG
    return out


@njit(cache=True)
def grow_round(X, sorted_idx, g, h, max_depth, min_gain_rel):
    n, d = X.shape
    K = g.shape[1]
    M = 2 ** (max_depth + 1) - 1
    feat = np.full((K, M), -1, dtype=np.int32)
    thr = np.zeros((K, M))
    val = np.zeros((K, M))
    exists = np.zeros((K, M), dtype=np.bool_)
    node = np.zeros((n, K), dtype=np.int64)
    leaf_of = np.zeros((n, K), dtype=np.int32)
    exists[:, 0] = True
    for depth in range(max_depth + 1):
        base = 2 ** depth - 1
        width = 2 ** depth
        G = np.zeros((K, width), dtype=np.int64)
        H = np.zeros((K, width), dtype=np.int64)
        cnt = np.zeros((K, width), dtype=np.int64)
        for i in range(n):
            for k in range(K):
                j = node[i, k]
                if j >= 0:
                    l = j - base
                    G[k, l] += g[i, k]
                    H[k, l] += h[i, k]
                    cnt[k, l] += 1
        for k in range(K):
            for l in range(width):
                if cnt[k, l] > 0:
                    val[k, base + l] = -float(G[k, l]) / float(H[k, l])
        if depth == max_depth:
            for i in range(n):
                for k in range(K):
                    if node[i, k] >= 0:
                        leaf_of[i, k] = node[i, k]
            break
        parent = np.empty((K, width))
        for k in range(K):
            for l in range(width):
                gt = float(G[k, l])
                parent[k, l] = gt * gt / float(H[k, l]) if cnt[k, l] > 0 else 0.0
        best_gain = np.zeros((K, width))
        best_feat = np.full((K, width), -1, dtype=np.int32)
        best_thr = np.zeros((K, width))
        for f in range(d):
            GL = np.zeros((K, width), dtype=np.int64)
            HL = np.zeros((K, width), dtype=np.int64)
            lastx = np.zeros((K, width))
            seen = np.zeros((K, width), dtype=np.bool_)
            for pos in range(n):
                i = sorted_idx[f, pos]
                x = X[i, f]
                for k in range(K):
                    j = node[i, k]
                    if j < 0:
                        continue
                    l = j - base
                    if seen[k, l] and x != lastx[k, l]:
                        gl = float(GL[k, l])
                        hl = float(HL[k, l])
                        gr = float(G[k, l] - GL[k, l])
                        hr = float(H[k, l] - HL[k, l])
                        if hl > 0.0 and hr > 0.0:
                            gain = gl * gl / hl + gr * gr / hr - parent[k, l]
                            if gain > best_gain[k, l] and gain > min_gain_rel * parent[k, l]:
                                best_gain[k, l] = gain
                                best_feat[k, l] = f
                                t = 0.5 * (lastx[k, l] + x)
                                if not t > lastx[k, l]:
                                    t = x
                                best_thr[k, l] = t
                    GL[k, l] += g[i, k]
                    HL[k, l] += h[i, k]
                    lastx[k, l] = x
                    seen[k, l] = True
        for k in range(K):
            for l in range(width):
                j = base + l
                if exists[k, j] and best_feat[k, l] >= 0:
                    feat[k, j] = best_feat[k, l]
                    thr[k, j] = best_thr[k, l]
                    exists[k, 2 * j + 1] = True
                    exists[k, 2 * j + 2] = True
        for i in range(n):
            for k in range(K):
                j = node[i, k]
                if j < 0:
                    continue
                fj = feat[k, j]
                if fj >= 0:
                    if X[i, fj] < thr[k, j]:
                        node[i, k] = 2 * j + 1
                    else:
                        node[i, k] = 2 * j + 2
                else:
                    leaf_of[i, k] = j
                    node[i, k] = -1
    return feat, thr, val, exists, leaf_of


@njit(cache=True)
def compact_trees(feat, thr, val, exists):
    K, M = feat.shape
    total = 0
    for k in range(K):
        for j in range(M):
            if exists[k, j]:
                total += 1
    feature = np.full(total, -1, dtype=np.int32)
    threshold = np.zeros(total)
    left = np.full(total, -1, dtype=np.int32)
    right = np.full(total, -1, dtype=np.int32)
    value = np.zeros(total)
    sizes = np.zeros(K, dtype=np.int64)
    rank = np.full(M, -1, dtype=np.int64)
    pos = 0
    for k in range(K):
        r = 0
        for j in range(M):
            if exists[k, j]:
                rank[j] = r
                r += 1
            else:
                rank[j] = -1
        sizes[k] = r
        for j in range(M):
            if not exists[k, j]:
                continue
            p = pos + rank[j]
            value[p] = val[k, j]
            if feat[k, j] >= 0:
                feature[p] = feat[k, j]
                threshold[p] = thr[k, j]
                left[p] = rank[2 * j + 1]
                right[p] = rank[2 * j + 2]
        pos += r
    return feature, threshold, left, right, value, sizes


@njit(cache=True)
def predict_raw(X, feature, threshold, left, right, value, tree_offset, n_classes):
    n = X.shape[0]
    T = tree_offset.shape[0] - 1
    out = np.zeros((n, n_classes))
    for t in range(T):
        k = t % n_classes
        off = tree_offset[t]
        for i in range(n):
            j = 0
            while feature[off + j] >= 0:
                if X[i, feature[off + j]] < threshold[off + j]:
                    j = left[off + j]
                else:
                    j = right[off + j]
            out[i, k] += value[off + j]
    return out
