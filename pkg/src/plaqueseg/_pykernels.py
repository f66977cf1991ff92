"""Pure numpy/Python versions of the compiled kernels in ``_ckernels.pyx``.

Semantics (argument order, dtypes, tie rules, label numbering) match the
compiled module exactly so either backend can be selected at import.
"""
from collections import deque

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad_nhwc(x, padding):
    xh = x.transpose(0, 2, 3, 1)
    if padding:
        return np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    return np.ascontiguousarray(xh)


def im2col(x, kh, kw, stride, padding, dilation, ho, wo):
    n, c = x.shape[:2]
    xp = _pad_nhwc(x, padding)
    sn, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh * dilation, sw * dilation, sc),
        writeable=False,
    )
    return view.reshape(n * ho * wo, kh * kw * c)


def col2im(cols, n, c, h, w, kh, kw, stride, padding, dilation, ho, wo):
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    blocks = cols.reshape(n, ho, wo, kh, kw, c)
    r_span = stride * (ho - 1) + 1
    c_span = stride * (wo - 1) + 1
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            dxp[:, r0:r0 + r_span:stride, c0:c0 + c_span:stride, :] += blocks[:, :, :, i, j, :]
    dx = dxp[:, padding:padding + h, padding:padding + w, :]
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def maxpool2x2(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. row-major scan order inside the block
    arg = blocks.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(gout, arg):
    n, c, ho, wo = gout.shape
    onehot = np.zeros((n, c, ho, wo, 4), dtype=gout.dtype)
    np.put_along_axis(onehot, arg[..., None].astype(np.intp), gout[..., None], axis=-1)
    return np.ascontiguousarray(
        onehot.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )


def erode(mask, kernel):
    h, w = mask.shape
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    padded = np.zeros((h + 2 * ch, w + 2 * cw), dtype=bool)
    padded[ch:ch + h, cw:cw + w] = mask.astype(bool)
    out = mask.astype(bool).copy()
    for i, j in zip(*np.nonzero(kernel)):
        out &= padded[i:i + h, j:j + w]
    return out.astype(np.uint8)


def label(mask, connectivity=8):
    """Breadth-first labeling; labels numbered by first row-major encounter."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if connectivity == 8:
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        steps = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    fg = mask.astype(bool)
    count = 0
    for r, c in zip(*np.nonzero(fg)):
        if labels[r, c]:
            continue
        count += 1
        labels[r, c] = count
        queue = deque([(r, c)])
        while queue:
            pr, pc = queue.popleft()
            for dr, dc in steps:
                rr, cc = pr + dr, pc + dc
                if 0 <= rr < h and 0 <= cc < w and fg[rr, cc] and not labels[rr, cc]:
                    labels[rr, cc] = count
                    queue.append((rr, cc))
    return labels, count


def fill_holes(mask):
    h, w = mask.shape
    fg = mask.astype(bool)
    outside = np.zeros((h, w), dtype=bool)
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    seeds = border & ~fg
    outside[seeds] = True
    stack = list(zip(*np.nonzero(seeds)))
    while stack:
        r, c = stack.pop()
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < h and 0 <= cc < w and not fg[rr, cc] and not outside[rr, cc]:
                outside[rr, cc] = True
                stack.append((rr, cc))
    return (~outside).astype(np.uint8)


def min_sq_dists(a, b, chunk=2048):
    out = np.empty(len(a), dtype=np.int64)
    for start in range(0, len(a), chunk):
        block = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = (block * block).sum(axis=-1).min(axis=1)
    return out
