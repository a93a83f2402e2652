"""Pure numpy implementation of the DEM kernels.

Same signatures and status codes as the compiled ``_kernels`` module, and the
same floating-point operation order, so both backends produce identical
trajectories. The broadphase is a vectorised uniform bucket grid built for
all cells of the batch at once.
"""

import numpy as np

BACKEND = "python"

OK = 0
BOX_TOO_SMALL = 1
ENGULFED = 2
NONFINITE = 3
NOMEM = 4
TOO_MANY_PAIRS = 5


def _buckets(u, u0, bw, nb):
    b = np.floor((u - u0) / bw)
    b = np.where(u < u0, -1, b)
    return np.clip(b, 0, nb - 1).astype(np.int64)


def _batch_pairs(x, y, r, offsets, boxes, periodic):
    """Overlapping pairs for all cells, sorted lexicographically by (l, j).

    Returns ``(status, bad_cell, l, j)``.
    """
    ncell = len(offsets) - 1
    counts = np.diff(offsets)
    cell = np.repeat(np.arange(ncell), counts)
    empty = np.empty(0, dtype=np.intp)
    if len(x) < 2:
        return OK, -1, empty, empty

    rmax = np.zeros(ncell)
    nonempty = counts > 0
    if nonempty.any():
        rmax[nonempty] = np.maximum.reduceat(r, offsets[:-1][nonempty])
    lx = boxes[:, 2] - boxes[:, 0]
    ly = boxes[:, 3] - boxes[:, 1]
    px = periodic[:, 0].astype(bool)
    py = periodic[:, 1].astype(bool)
    small = (counts >= 2) & ((px & (lx < 4.0 * rmax)) | (py & (ly < 4.0 * rmax)))
    if small.any():
        return BOX_TOO_SMALL, int(np.argmax(small)), empty, empty

    with np.errstate(divide="ignore", invalid="ignore"):
        nbx = np.where(rmax > 0, np.floor(lx / (2.0 * rmax)), 1).astype(np.int64)
        nby = np.where(rmax > 0, np.floor(ly / (2.0 * rmax)), 1).astype(np.int64)
    nbx = np.maximum(nbx, 1)
    nby = np.maximum(nby, 1)
    nbx = np.where(px & (nbx < 3), 1, nbx)
    nby = np.where(py & (nby < 3), 1, nby)
    bwx = lx / nbx
    bwy = ly / nby
    base = np.concatenate(([0], np.cumsum(nbx * nby)))

    fx_n, fy_n = nbx[cell], nby[cell]
    bx = _buckets(x, boxes[cell, 0], bwx[cell], fx_n)
    by = _buckets(y, boxes[cell, 1], bwy[cell], fy_n)
    key = base[cell] + bx * fy_n + by
    order = np.argsort(key, kind="stable")
    nkeys = int(base[-1])
    bstart = np.searchsorted(key[order], np.arange(nkeys + 1), side="left")

    fpx, fpy = px[cell], py[cell]
    lxf, lyf = lx[cell], ly[cell]
    ls, js = [], []
    idx = np.arange(len(x))
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            cx = bx + ox
            cy = by + oy
            valid = np.ones(len(x), dtype=bool)
            if ox != 0:
                valid &= fx_n > 1
            if oy != 0:
                valid &= fy_n > 1
            outx = (cx < 0) | (cx >= fx_n)
            outy = (cy < 0) | (cy >= fy_n)
            valid &= ~(outx & ~fpx) & ~(outy & ~fpy)
            cx = np.mod(cx, fx_n)
            cy = np.mod(cy, fy_n)
            nkey = base[cell] + cx * fy_n + cy
            src = idx[valid]
            nk = nkey[valid]
            cnt = bstart[nk + 1] - bstart[nk]
            li = np.repeat(src, cnt)
            first = np.repeat(bstart[nk], cnt)
            within = np.arange(len(li)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            ji = order[first + within]
            keep = ji > li
            ls.append(li[keep])
            js.append(ji[keep])
    l = np.concatenate(ls)
    j = np.concatenate(js)
    dx, dy = _min_image(x[l] - x[j], y[l] - y[j], lxf[l], lyf[l], fpx[l], fpy[l])
    rs = r[l] + r[j]
    hit = dx * dx + dy * dy < rs * rs
    l, j = l[hit], j[hit]
    srt = np.lexsort((j, l))
    return OK, -1, l[srt].astype(np.intp), j[srt].astype(np.intp)


def _min_image(dx, dy, lx, ly, px, py):
    dx = np.where(px & (dx > 0.5 * lx), dx - lx, np.where(px & (dx < -0.5 * lx), dx + lx, dx))
    dy = np.where(py & (dy > 0.5 * ly), dy - ly, np.where(py & (dy < -0.5 * ly), dy + ly, dy))
    return dx, dy


def find_pairs(x, y, r, box, periodic):
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    offsets = np.array([0, len(x)], dtype=np.int64)
    boxes = np.asarray([box], dtype=float)
    per = np.asarray([periodic], dtype=np.uint8)
    status, _, l, j = _batch_pairs(x, y, r, offsets, boxes, per)
    return status, l, j


def step_cells(
    x, y, theta, vx, vy, w, r, m, inertia, uox, uoy, curl,
    offsets, boxes, periodic,
    E, G, mu, d_o, rho_o, dt,
    strict=True, semi_implicit=False, acc=None,
):
    ncell = len(offsets) - 1
    counts = np.diff(offsets)
    cell = np.repeat(np.arange(ncell), counts)
    kd = d_o * rho_o * np.pi

    rx = uox - vx
    ry = uoy - vy
    sp = np.sqrt(rx * rx + ry * ry)
    alpha = kd * r * r
    rw = 0.5 * curl - w
    beta = kd * r * r * r * r
    fx = alpha * rx * sp
    fy = alpha * ry * sp
    tq = beta * rw * np.abs(rw)
    if acc is not None:
        for col, arr in enumerate((vx, vy, w, fx, fy, tq)):
            np.add.at(acc[:, col], cell, arr)

    status, bad, l, j = _batch_pairs(x, y, r, offsets, boxes, periodic)
    if status != OK:
        return status, bad, -1

    if len(l):
        lx = (boxes[:, 2] - boxes[:, 0])[cell[l]]
        ly = (boxes[:, 3] - boxes[:, 1])[cell[l]]
        px = periodic[cell[l], 0].astype(bool)
        py = periodic[cell[l], 1].astype(bool)
        dx, dy = _min_image(x[l] - x[j], y[l] - y[j], lx, ly, px, py)
        d2 = dx * dx + dy * dy
        d = np.sqrt(d2)
        rl = r[l]
        rj = r[j]
        bad_pair = (d <= np.abs(rl - rj)) | (d == 0.0)
        if bad_pair.any():
            if strict:
                k = int(np.argmax(bad_pair))
                return ENGULFED, int(l[k]), int(j[k])
            keep = d != 0.0
            l, j, dx, dy, d2, d, rl, rj, bad_pair = (
                a[keep] for a in (l, j, dx, dy, d2, d, rl, rj, bad_pair)
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            a = (d2 + rl * rl - rj * rj) / (2.0 * d)
            h2 = np.maximum(rl * rl - a * a, 0.0)
            cc = np.where(bad_pair, 2.0 * np.minimum(rl, rj), 2.0 * np.sqrt(h2))
        nx_ = dx / d
        ny_ = dy / d
        tx = -ny_
        ty = nx_
        delta = d - (rl + rj)
        fn = cc * E * (-delta)
        al = 0.5 * (d + rl - rj)
        aj = 0.5 * (d - rl + rj)
        vlx = vx[l] + w[l] * (al * ny_)
        vly = vy[l] - w[l] * (al * nx_)
        vjx = vx[j] - w[j] * (aj * ny_)
        vjy = vy[j] + w[j] * (aj * nx_)
        vt = (vjx - vlx) * tx + (vjy - vly) * ty
        ft = cc * G * vt
        cap_t = mu * fn
        ft = np.where(np.abs(ft) > cap_t, np.copysign(cap_t, ft), ft)
        Fx = fn * nx_ + ft * tx
        Fy = fn * ny_ + ft * ty
        # interleaved (l, j, l, j, ...) so the accumulation order matches the
        # sequential loop of the compiled kernel
        who = np.empty(2 * len(l), dtype=np.intp)
        who[0::2] = l
        who[1::2] = j
        vals = np.empty(2 * len(l))
        vals[0::2] = Fx
        vals[1::2] = -Fx
        np.add.at(fx, who, vals)
        vals[0::2] = Fy
        vals[1::2] = -Fy
        np.add.at(fy, who, vals)
        vals[0::2] = -al * ft
        vals[1::2] = -aj * ft
        np.add.at(tq, who, vals)

    if semi_implicit:
        vx[:] = vx + (fx / m) * dt
        vy[:] = vy + (fy / m) * dt
        w[:] = w + (tq / inertia) * dt
        xn = x + vx * dt
        yn = y + vy * dt
        theta[:] = theta + w * dt
    else:
        xn = x + vx * dt
        yn = y + vy * dt
        theta[:] = theta + w * dt
        vx[:] = vx + (fx / m) * dt
        vy[:] = vy + (fy / m) * dt
        w[:] = w + (tq / inertia) * dt

    x0 = boxes[cell, 0]
    y0 = boxes[cell, 1]
    x1 = boxes[cell, 2]
    y1 = boxes[cell, 3]
    px = periodic[cell, 0].astype(bool)
    py = periodic[cell, 1].astype(bool)
    x[:] = _wrap(xn, x0, x1, px)
    y[:] = _wrap(yn, y0, y1, py)

    finite = (np.isfinite(x) & np.isfinite(y) & np.isfinite(vx) & np.isfinite(vy)
              & np.isfinite(w) & np.isfinite(theta))
    if not finite.all():
        return NONFINITE, int(np.argmin(finite)), -1
    return OK, -1, -1


def _wrap(u, u0, u1, per):
    lu = u1 - u0
    hi = per & (u >= u1)
    lo = per & (u < u0)
    out = np.where(hi, u - lu, np.where(lo, u + lu, u))
    out = np.where(hi & (out < u0), u0, out)
    out = np.where(lo & (out >= u1), u0, out)
    return out
