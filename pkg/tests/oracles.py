"""Slow, direct reference implementations used only by the tests.

None of these share code with the package: they are written from the
definitions with plain loops so disagreements point at the fast paths.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_direct(x, w, b, stride, padding, dilation):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                rr = r * stride - padding + i * dilation
                                cc = c * stride - padding + j * dilation
                                if 0 <= rr < h and 0 <= cc < wd:
                                    acc += x[bi, ci, rr, cc] * w[co, ci, i, j]
                    out[bi, co, r, c] = acc
    return out


def transposed_scatter(x, w, b):
    """Stride-2, 2x2 transposed convolution by explicit scatter; w is [Cin, Cout, 2, 2]."""
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    out = np.zeros((n, cout, 2 * h, 2 * wd))
    for bi in range(n):
        for ci in range(cin):
            for r in range(h):
                for c in range(wd):
                    for co in range(cout):
                        out[bi, co, 2 * r:2 * r + 2, 2 * c:2 * c + 2] += x[bi, ci, r, c] * w[ci, co]
    if b is not None:
        out += np.asarray(b)[None, :, None, None]
    return out


def flood_label(mask, connectivity=8):
    """Depth-first flood fill, labels numbered in row-major first-encounter order."""
    mask = np.asarray(mask).tolist()
    h, w = len(mask), len(mask[0])
    labels = [[0] * w for _ in range(h)]
    if connectivity == 8:
        nbrs = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    count = 0
    for r in range(h):
        for c in range(w):
            if mask[r][c] and not labels[r][c]:
                count += 1
                stack = [(r, c)]
                labels[r][c] = count
                while stack:
                    pr, pc = stack.pop()
                    for dr, dc in nbrs:
                        rr, cc = pr + dr, pc + dc
                        if 0 <= rr < h and 0 <= cc < w and mask[rr][cc] and not labels[rr][cc]:
                            labels[rr][cc] = count
                            stack.append((rr, cc))
    return np.array(labels, dtype=np.int64), count


def erode_direct(mask, kernel):
    h, w = mask.shape
    kh, kw = kernel.shape
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            keep = True
            for i in range(kh):
                for j in range(kw):
                    if kernel[i, j]:
                        rr, cc = r + i - kh // 2, c + j - kw // 2
                        if not (0 <= rr < h and 0 <= cc < w and mask[rr, cc]):
                            keep = False
            out[r, c] = 1 if keep else 0
    return out


def fill_holes_direct(mask):
    """Background reachable from the border (4-connected) stays background."""
    h, w = mask.shape
    outside = np.zeros((h, w), dtype=bool)
    frontier = [(r, c) for r in range(h) for c in range(w)
                if (r in (0, h - 1) or c in (0, w - 1)) and not mask[r, c]]
    for r, c in frontier:
        outside[r, c] = True
    while frontier:
        nxt = []
        for r, c in frontier:
            for rr, cc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                if 0 <= rr < h and 0 <= cc < w and not mask[rr, cc] and not outside[rr, cc]:
                    outside[rr, cc] = True
                    nxt.append((rr, cc))
        frontier = nxt
    return (~outside).astype(np.uint8)


def boundary_direct(mask):
    h, w = mask.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            n = 0
            for rr, cc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                if 0 <= rr < h and 0 <= cc < w and mask[rr, cc]:
                    n += 1
            if n < 4:
                pts.append((r, c))
    return pts


def mhd_brute(A, B):
    def directed(P, Q):
        return math.fsum(min(math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) for q in Q) for p in P) / len(P)
    return max(directed(A, B), directed(B, A))


def confusion_direct(L, S):
    tp = tn = fp = fn = 0
    for l, s in zip(np.ravel(L), np.ravel(S)):
        if l and s:
            tp += 1
        elif l and not s:
            fn += 1
        elif s:
            fp += 1
        else:
            tn += 1
    return tp, tn, fp, fn


# ------------------------------------------------------------ Philox4x64-10

_M0 = 0xD2E7470EE14C6C93
_M1 = 0xCA5A826395121157
_W0 = 0x9E3779B97F4A7C15
_W1 = 0xBB67AE8584CAA73B
_MASK = (1 << 64) - 1


def _mulhilo(a, b):
    p = a * b
    return p >> 64, p & _MASK


def philox4x64_block(counter, key):
    c0, c1, c2, c3 = counter
    k0, k1 = key
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0, k1 = (k0 + _W0) & _MASK, (k1 + _W1) & _MASK
    return [c0, c1, c2, c3]


def philox_stream(key, n):
    """Raw 64-bit outputs; the first block uses counter 1 (counter 0 is never emitted)."""
    out, ctr = [], 0
    while len(out) < n:
        ctr += 1
        out.extend(philox4x64_block((ctr & _MASK, ctr >> 64, 0, 0), key))
    return out[:n]


def param_count(base, enable_pdc=True, enable_se=True, reduction=16):
    """Trainable parameter count derived from the layer recipe, not from the model code."""
    conv3 = lambda ci, co: 9 * ci * co + co  # noqa: E731
    bn = lambda c: 2 * c  # noqa: E731
    total = 0
    cin = 1
    widths = [base * m for m in (1, 2, 4, 8, 16)]
    for w in widths:
        total += conv3(cin, w) + bn(w) + conv3(w, w) + bn(w)
        cin = w
    taps = {8: widths[2], 16: widths[3], 32: widths[4]}
    stages = {8: 3, 16: 4, 32: 5}
    if enable_pdc:
        for c in taps.values():
            total += 3 * conv3(c, c) + (3 * c * c + c)
    for s, c in taps.items():
        for _ in range(stages[s]):
            half = c // 2
            total += 4 * c * half + half + conv3(half, half) + bn(half)
            c = half
    fused = 3 * (base // 2)
    if enable_se:
        hidden = max(fused // reduction, 4)
        total += 2 * fused * hidden + hidden + fused
    total += 2 * fused + 2
    return total
