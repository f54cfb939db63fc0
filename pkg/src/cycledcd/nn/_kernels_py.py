"""Pure-numpy unfold/fold kernels, used when the compiled extension is unavailable."""
import numpy as np


def im2col(x, kh, kw, sh, sw, ph, pw, dh, dw, ho, wo):
    nb, nc, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((nb, nc, kh, kw, ho, wo), dtype=x.dtype)
    for a in range(kh):
        t0 = a * dh
        for e in range(kw):
            f0 = e * dw
            cols[:, :, a, e] = xp[:, :, t0:t0 + sh * (ho - 1) + 1:sh, f0:f0 + sw * (wo - 1) + 1:sw]
    return cols.reshape(nb, nc * kh * kw, ho * wo)


def col2im(cols, nc, h, w, kh, kw, sh, sw, ph, pw, dh, dw, ho, wo):
    nb = cols.shape[0]
    # one extra row/column of slack so a stride-overhanging tap never falls off the buffer
    xp = np.zeros((nb, nc, h + 2 * ph + sh, w + 2 * pw + sw), dtype=cols.dtype)
    c6 = cols.reshape(nb, nc, kh, kw, ho, wo)
    for a in range(kh):
        t0 = a * dh
        for e in range(kw):
            f0 = e * dw
            xp[:, :, t0:t0 + sh * (ho - 1) + 1:sh, f0:f0 + sw * (wo - 1) + 1:sw] += c6[:, :, a, e]
    return np.ascontiguousarray(xp[:, :, ph:ph + h, pw:pw + w])
