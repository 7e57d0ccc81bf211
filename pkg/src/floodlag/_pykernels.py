"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def _clip(xs, ys, axis, bound, keep_above):
    out_x, out_y = [], []
    n = len(xs)
    if n == 0:
        return out_x, out_y
    px, py = xs[-1], ys[-1]
    for i in range(n):
        ex, ey = xs[i], ys[i]
        vs, ve = (px, ex) if axis == 0 else (py, ey)
        if keep_above:
            ins, ine = vs >= bound, ve >= bound
        else:
            ins, ine = vs <= bound, ve <= bound
        if ine:
            if not ins:
                t = (bound - vs) / (ve - vs)
                out_x.append(px + t * (ex - px))
                out_y.append(py + t * (ey - py))
            out_x.append(ex)
            out_y.append(ey)
        elif ins:
            t = (bound - vs) / (ve - vs)
            out_x.append(px + t * (ex - px))
            out_y.append(py + t * (ey - py))
        px, py = ex, ey
    return out_x, out_y


def clipped_signed_area(xs, ys, xmin, ymin, xmax, ymax):
    """Signed area of a ring clipped to an axis-aligned box (Sutherland-Hodgman)."""
    xs, ys = _clip(xs, ys, 0, xmin, True)
    xs, ys = _clip(xs, ys, 0, xmax, False)
    xs, ys = _clip(xs, ys, 1, ymin, True)
    xs, ys = _clip(xs, ys, 1, ymax, False)
    m = len(xs)
    if m < 3:
        return 0.0
    area = 0.0
    j = m - 1
    for i in range(m):
        area += xs[j] * ys[i] - xs[i] * ys[j]
        j = i
    return 0.5 * area


def coverage_block(verts, ring_ptr, origin_x, origin_y, pixel_size, row0, row1, col0, col1):
    nr, nc = row1 - row0, col1 - col0
    out = np.zeros((max(nr, 0), max(nc, 0)))
    if nr <= 0 or nc <= 0:
        return out
    pix_area = pixel_size * pixel_size
    for k in range(len(ring_ptr) - 1):
        ring = verts[ring_ptr[k]:ring_ptr[k + 1]]
        xs, ys = ring[:, 0].tolist(), ring[:, 1].tolist()
        bx0, by0 = ring.min(axis=0)
        bx1, by1 = ring.max(axis=0)
        for r in range(nr):
            ymax = origin_y - (row0 + r) * pixel_size
            ymin = ymax - pixel_size
            if ymin >= by1 or ymax <= by0:
                continue
            for c in range(nc):
                xmin = origin_x + (col0 + c) * pixel_size
                xmax = xmin + pixel_size
                if xmin >= bx1 or xmax <= bx0:
                    continue
                out[r, c] += clipped_signed_area(xs, ys, xmin, ymin, xmax, ymax) / pix_area
    return out


def cond_poisson_derivs(X, y, offset, ptr, beta):
    """Vectorised conditional Poisson log-likelihood, score, information, fitted."""
    n, p = X.shape
    eta = X @ beta + offset
    sizes = np.diff(ptr)
    nonempty = sizes > 0
    starts = ptr[:-1][nonempty]
    sid = np.repeat(np.arange(len(sizes)), sizes)
    emax = np.full(len(sizes), -np.inf)
    emax[nonempty] = np.maximum.reduceat(eta, starts)
    z = np.exp(eta - emax[sid])
    tot = np.zeros(len(sizes))
    tot[nonempty] = np.add.reduceat(z, starts)
    ysum = np.zeros(len(sizes))
    ysum[nonempty] = np.add.reduceat(y, starts)
    logtot = np.log(np.where(tot > 0, tot, 1.0)) + emax
    w = np.exp(eta - logtot[sid])
    fitted = ysum[sid] * w
    pos = y > 0
    ll = float(np.sum(y[pos] * (eta[pos] - logtot[sid][pos])))
    score = X.T @ (y - fitted)
    xbar = np.zeros((len(sizes), p))
    xbar[nonempty] = np.add.reduceat(w[:, None] * X, starts, axis=0)
    info = (X * fitted[:, None]).T @ X - (xbar * ysum[:, None]).T @ xbar
    info = 0.5 * (info + info.T)
    return ll, score, info, fitted
