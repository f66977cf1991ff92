# cython: language_level=3
"""Compiled inner loops: im2col/col2im, 2x2 max pooling, binary morphology,
connected-component labeling and pairwise point distances.

Every function here has a twin in ``_pykernels`` with identical semantics;
``plaqueseg.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int padding,
           int dilation, int ho, int wo):
    """NCHW input -> (N*Ho*Wo, kh*kw*C) patch matrix, column order (i, j, c).

    The input is first copied into a zero-padded NHWC buffer so each patch
    tap is a contiguous run of C values.
    """
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t hp = h + 2 * padding, wp = w + 2 * padding
    cdef Py_ssize_t k = kh * kw * c
    dtype = np.float32 if real is float else np.float64
    buf = np.zeros((n, hp, wp, c), dtype=dtype)
    out = np.empty((n * ho * wo, k), dtype=dtype)
    cdef real[:, :, :, ::1] xp = buf
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col0, r, q
    with nogil:
        for b in range(n):
            for ch in range(c):
                for r in range(h):
                    for q in range(w):
                        xp[b, r + padding, q + padding, ch] = x[b, ch, r, q]
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    row = (b * ho + oh) * wo + ow
                    for i in range(kh):
                        r = oh * stride + i * dilation
                        for j in range(kw):
                            q = ow * stride + j * dilation
                            col0 = (i * kw + j) * c
                            for ch in range(c):
                                cols[row, col0 + ch] = xp[b, r, q, ch]
    return out


def col2im(real[:, ::1] cols, int n, int c, int h, int w, int kh, int kw,
           int stride, int padding, int dilation, int ho, int wo):
    """Adjoint of :func:`im2col`: scatter-add patches back into NCHW (unpadded)."""
    cdef Py_ssize_t hp = h + 2 * padding, wp = w + 2 * padding
    dtype = np.float32 if real is float else np.float64
    buf = np.zeros((n, hp, wp, c), dtype=dtype)
    out = np.empty((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] dxp = buf
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col0, r, q
    with nogil:
        for b in range(n):
            for oh in range(ho):
                for ow in range(wo):
                    row = (b * ho + oh) * wo + ow
                    for i in range(kh):
                        r = oh * stride + i * dilation
                        for j in range(kw):
                            q = ow * stride + j * dilation
                            col0 = (i * kw + j) * c
                            for ch in range(c):
                                dxp[b, r, q, ch] += cols[row, col0 + ch]
        for b in range(n):
            for ch in range(c):
                for r in range(h):
                    for q in range(w):
                        dx[b, ch, r, q] = dxp[b, r + padding, q + padding, ch]
    return out


def maxpool2x2(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef uint8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, ch, i, j
    cdef real best, v
    cdef uint8_t k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        # strict > keeps the first maximum in row-major scan order
                        best = x[b, ch, 2 * i, 2 * j]
                        k = 0
                        v = x[b, ch, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[b, ch, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[b, ch, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[b, ch, i, j] = best
                        arg[b, ch, i, j] = k
    return out_arr, arg_arr


def maxpool2x2_backward(real[:, :, :, ::1] gout, uint8_t[:, :, :, ::1] arg):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, 2 * ho, 2 * wo), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, i, j
    cdef uint8_t k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = arg[b, ch, i, j]
                        dx[b, ch, 2 * i + (k >> 1), 2 * j + (k & 1)] = gout[b, ch, i, j]
    return dx_arr


def erode(uint8_t[:, ::1] mask, uint8_t[:, ::1] kernel):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ch = kh // 2, cw = kw // 2
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, i, j, rr, cc
    cdef bint keep
    with nogil:
        for r in range(h):
            for c in range(w):
                if not mask[r, c]:
                    continue
                keep = True
                for i in range(kh):
                    for j in range(kw):
                        if not kernel[i, j]:
                            continue
                        rr = r + i - ch
                        cc = c + j - cw
                        if rr < 0 or rr >= h or cc < 0 or cc >= w or not mask[rr, cc]:
                            keep = False
                            break
                    if not keep:
                        break
                if keep:
                    out[r, c] = 1
    return out_arr


cdef inline int32_t _find(int32_t[::1] parent, int32_t a) noexcept nogil:
    cdef int32_t root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        parent[a], a = root, parent[a]
    return root


cdef inline void _union(int32_t[::1] parent, int32_t a, int32_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label(uint8_t[:, ::1] mask, int connectivity=8):
    """Two-pass union-find labeling; labels numbered by first row-major encounter."""
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int32_t[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w + 2, dtype=np.int32)
    cdef int32_t[::1] parent = parent_arr
    cdef int32_t nxt = 1, cur, nb
    cdef Py_ssize_t r, c
    cdef bint diag = connectivity == 8
    with nogil:
        for r in range(h):
            for c in range(w):
                if not mask[r, c]:
                    continue
                cur = 0
                # already-visited neighbours: W, NW, N, NE
                if c > 0 and labels[r, c - 1]:
                    cur = labels[r, c - 1]
                if r > 0:
                    if labels[r - 1, c]:
                        nb = labels[r - 1, c]
                        if cur:
                            _union(parent, cur, nb)
                        else:
                            cur = nb
                    if diag and c > 0 and labels[r - 1, c - 1]:
                        nb = labels[r - 1, c - 1]
                        if cur:
                            _union(parent, cur, nb)
                        else:
                            cur = nb
                    if diag and c + 1 < w and labels[r - 1, c + 1]:
                        nb = labels[r - 1, c + 1]
                        if cur:
                            _union(parent, cur, nb)
                        else:
                            cur = nb
                if not cur:
                    cur = nxt
                    parent[cur] = cur
                    nxt += 1
                labels[r, c] = cur
    remap_arr = np.zeros(nxt, dtype=np.int32)
    cdef int32_t[::1] remap = remap_arr
    cdef int32_t count = 0, root
    with nogil:
        for r in range(h):
            for c in range(w):
                if labels[r, c]:
                    root = _find(parent, labels[r, c])
                    if not remap[root]:
                        count += 1
                        remap[root] = count
                    labels[r, c] = remap[root]
    return labels_arr, int(count)


def fill_holes(uint8_t[:, ::1] mask):
    """Background not 4-connected to the border becomes foreground."""
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    outside_arr = np.zeros((h, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] outside = outside_arr
    stack_arr = np.empty(h * w + 1, dtype=np.int64)
    cdef int64_t[::1] stack = stack_arr
    cdef Py_ssize_t top = 0, r, c, idx
    with nogil:
        for r in range(h):
            for c in range(w):
                if (r == 0 or c == 0 or r == h - 1 or c == w - 1) and not mask[r, c] and not outside[r, c]:
                    outside[r, c] = 1
                    stack[top] = r * w + c
                    top += 1
        while top > 0:
            top -= 1
            idx = stack[top]
            r = idx // w
            c = idx % w
            if r > 0 and not mask[r - 1, c] and not outside[r - 1, c]:
                outside[r - 1, c] = 1
                stack[top] = idx - w
                top += 1
            if r + 1 < h and not mask[r + 1, c] and not outside[r + 1, c]:
                outside[r + 1, c] = 1
                stack[top] = idx + w
                top += 1
            if c > 0 and not mask[r, c - 1] and not outside[r, c - 1]:
                outside[r, c - 1] = 1
                stack[top] = idx - 1
                top += 1
            if c + 1 < w and not mask[r, c + 1] and not outside[r, c + 1]:
                outside[r, c + 1] = 1
                stack[top] = idx + 1
                top += 1
        for r in range(h):
            for c in range(w):
                outside[r, c] = 0 if outside[r, c] else 1
    return outside_arr


def min_sq_dists(int64_t[:, ::1] a, int64_t[:, ::1] b):
    """For each point of ``a`` the squared distance to its nearest point of ``b``."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    out_arr = np.empty(na, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef int64_t best, dr, dc, d
    with nogil:
        for i in range(na):
            best = -1
            for j in range(nb):
                dr = a[i, 0] - b[j, 0]
                dc = a[i, 1] - b[j, 1]
                d = dr * dr + dc * dc
                if best < 0 or d < best:
                    best = d
            out[i] = best
    return out_arr
