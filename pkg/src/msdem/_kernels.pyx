# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DEM kernels: broadphase, contact/drag forces, Euler update.

Every routine works on a batch of independent cells stored contiguously
(``offsets[c]:offsets[c+1]`` are the floes of cell ``c``) and releases the
GIL, so disjoint cell ranges can be stepped from several threads.

The arithmetic mirrors ``_kernels_py`` operation by operation; keep the two
in sync.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign, isfinite, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()

# status codes shared with the python fallback
cpdef enum:
    OK = 0
    BOX_TOO_SMALL = 1
    ENGULFED = 2
    NONFINITE = 3
    NOMEM = 4
    TOO_MANY_PAIRS = 5

BACKEND = "cython"


cdef inline int _bucket(double x, double x0, double bw, int nb) noexcept nogil:
    cdef int b = <int>((x - x0) / bw)
    if x < x0:
        b = -1
    if b < 0:
        b = 0
    elif b >= nb:
        b = nb - 1
    return b


cdef int _cell_pairs(
    const double[::1] x, const double[::1] y, const double[::1] r,
    Py_ssize_t s, Py_ssize_t e,
    double bx0, double by0, double bx1, double by1,
    bint px, bint py,
    Py_ssize_t* pl, Py_ssize_t* pj, Py_ssize_t cap, Py_ssize_t* npairs,
    Py_ssize_t* bad,
) noexcept nogil:
    """Canonical (l < j, lexicographic) overlapping pairs of one cell.

    ``pl``/``pj`` must hold up to n*(n-1)/2 entries in the worst case; the
    caller sizes them with ``_pair_capacity``.
    """
    cdef Py_ssize_t n = e - s
    cdef Py_ssize_t i, k, q, l, j, cnt
    cdef double lx = bx1 - bx0, ly = by1 - by0
    cdef double rmax = 0.0, bw_x, bw_y, dx, dy, rs
    cdef int nbx, nby, bxl, byl, ox, oy, cx, cy, key, nbk
    cdef int oxlo, oxhi, oylo, oyhi
    cdef int* head
    cdef int* start
    cdef int* fill
    cdef Py_ssize_t* order
    cdef Py_ssize_t* cand
    cdef Py_ssize_t tmp

    npairs[0] = 0
    if n < 2:
        return OK
    for i in range(s, e):
        if r[i] > rmax:
            rmax = r[i]
    if (px and lx < 4.0 * rmax) or (py and ly < 4.0 * rmax):
        return BOX_TOO_SMALL

    nbx = <int>(lx / (2.0 * rmax))
    nby = <int>(ly / (2.0 * rmax))
    if nbx < 1:
        nbx = 1
    if nby < 1:
        nby = 1
    if px and nbx < 3:
        nbx = 1
    if py and nby < 3:
        nby = 1
    bw_x = lx / nbx
    bw_y = ly / nby
    nbk = nbx * nby

    head = <int*>malloc(n * sizeof(int))
    start = <int*>malloc((nbk + 1) * sizeof(int))
    fill = <int*>malloc(nbk * sizeof(int))
    order = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    cand = <Py_ssize_t*>malloc(n * sizeof(Py_ssize_t))
    if head == NULL or start == NULL or fill == NULL or order == NULL or cand == NULL:
        free(head); free(start); free(fill); free(order); free(cand)
        return NOMEM

    for k in range(nbk + 1):
        start[k] = 0
    for i in range(n):
        key = _bucket(x[s + i], bx0, bw_x, nbx) * nby + _bucket(y[s + i], by0, bw_y, nby)
        head[i] = key
        start[key + 1] += 1
    for k in range(nbk):
        start[k + 1] += start[k]
        fill[k] = start[k]
    for i in range(n):
        order[fill[head[i]]] = i
        fill[head[i]] += 1

    oxlo = -1 if nbx > 1 else 0
    oxhi = 1 if nbx > 1 else 0
    oylo = -1 if nby > 1 else 0
    oyhi = 1 if nby > 1 else 0

    for i in range(n):
        l = s + i
        bxl = head[i] // nby
        byl = head[i] % nby
        cnt = 0
        for ox in range(oxlo, oxhi + 1):
            cx = bxl + ox
            if cx < 0 or cx >= nbx:
                if not px:
                    continue
                cx = (cx + nbx) % nbx
            for oy in range(oylo, oyhi + 1):
                cy = byl + oy
                if cy < 0 or cy >= nby:
                    if not py:
                        continue
                    cy = (cy + nby) % nby
                key = cx * nby + cy
                for k in range(start[key], start[key + 1]):
                    j = s + order[k]
                    if j <= l:
                        continue
                    dx = x[l] - x[j]
                    dy = y[l] - y[j]
                    if px:
                        if dx > 0.5 * lx:
                            dx = dx - lx
                        elif dx < -0.5 * lx:
                            dx = dx + lx
                    if py:
                        if dy > 0.5 * ly:
                            dy = dy - ly
                        elif dy < -0.5 * ly:
                            dy = dy + ly
                    rs = r[l] + r[j]
                    if dx * dx + dy * dy < rs * rs:
                        cand[cnt] = j
                        cnt += 1
        # insertion sort keeps the pair order canonical
        for k in range(1, cnt):
            tmp = cand[k]
            q = k - 1
            while q >= 0 and cand[q] > tmp:
                cand[q + 1] = cand[q]
                q -= 1
            cand[q + 1] = tmp
        if npairs[0] + cnt > cap:
            free(head); free(start); free(fill); free(order); free(cand)
            bad[0] = l
            return TOO_MANY_PAIRS
        for k in range(cnt):
            pl[npairs[0]] = l
            pj[npairs[0]] = cand[k]
            npairs[0] += 1

    free(head); free(start); free(fill); free(order); free(cand)
    return OK


cdef inline Py_ssize_t _pair_capacity(Py_ssize_t n) noexcept nogil:
    # Discs with bounded overlap have bounded contact counts, but radii are
    # free parameters here, so fall back to the n(n-1)/2 worst case for
    # small cells and a generous per-floe budget otherwise.
    if n <= 512:
        return n * (n - 1) // 2 + 1
    return 64 * n


def find_pairs(const double[::1] x, const double[::1] y, const double[::1] r, box, periodic):
    """Overlapping pairs of a single cell as ``(status, l, j)`` arrays."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t cap = _pair_capacity(n)
    cdef Py_ssize_t npairs = 0, bad = -1
    cdef double bx0 = box[0], by0 = box[1], bx1 = box[2], by1 = box[3]
    cdef bint px = periodic[0], py = periodic[1]
    cdef int status
    cdef cnp.ndarray[cnp.intp_t, ndim=1] pl = np.empty(cap, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] pj = np.empty(cap, dtype=np.intp)
    cdef Py_ssize_t* plp = <Py_ssize_t*>pl.data
    cdef Py_ssize_t* pjp = <Py_ssize_t*>pj.data
    with nogil:
        status = _cell_pairs(x, y, r, 0, n, bx0, by0, bx1, by1, px, py, plp, pjp, cap, &npairs, &bad)
    return status, pl[:npairs].copy(), pj[:npairs].copy()


def step_cells(
    double[::1] x, double[::1] y, double[::1] theta,
    double[::1] vx, double[::1] vy, double[::1] w,
    const double[::1] r, const double[::1] m, const double[::1] inertia,
    const double[::1] uox, const double[::1] uoy, const double[::1] curl,
    const cnp.int64_t[::1] offsets, const double[:, ::1] boxes, const cnp.uint8_t[:, ::1] periodic,
    double E, double G, double mu, double d_o, double rho_o, double dt,
    bint strict=True, bint semi_implicit=False, double[:, ::1] acc=None,
):
    """Advance every cell of the batch by one Euler step, in place.

    Returns ``(status, a, b)``: status 0 on success; otherwise ``a``/``b``
    carry the cell or floe indices involved.
    """
    cdef Py_ssize_t ncell = offsets.shape[0] - 1
    cdef Py_ssize_t c, s, e, n, i, p, l, j, cap, maxn = 0, npairs = 0, bad = -1
    cdef double kd = d_o * rho_o * M_PI
    cdef double rx, ry, sp, rw, alpha, beta, dx, dy, d2, d, rl, rj, a, h2, cc
    cdef double nx_, ny_, tx, ty, delta, fn, al, aj, vlx, vly, vjx, vjy, vt, ft, cap_t, Fx, Fy
    cdef double bx0, by0, bx1, by1, lx, ly, xn, yn
    cdef bint px, py, do_acc = acc is not None
    cdef int status = OK
    cdef Py_ssize_t err_a = -1, err_b = -1
    cdef double* fx
    cdef double* fy
    cdef double* tq
    cdef Py_ssize_t* pl
    cdef Py_ssize_t* pj

    for c in range(ncell):
        n = offsets[c + 1] - offsets[c]
        if n > maxn:
            maxn = n
    cap = _pair_capacity(maxn)

    with nogil:
        fx = <double*>malloc((maxn + 1) * sizeof(double))
        fy = <double*>malloc((maxn + 1) * sizeof(double))
        tq = <double*>malloc((maxn + 1) * sizeof(double))
        pl = <Py_ssize_t*>malloc((cap + 1) * sizeof(Py_ssize_t))
        pj = <Py_ssize_t*>malloc((cap + 1) * sizeof(Py_ssize_t))
        if fx == NULL or fy == NULL or tq == NULL or pl == NULL or pj == NULL:
            status = NOMEM
        c = 0
        while status == OK and c < ncell:
            s = offsets[c]
            e = offsets[c + 1]
            bx0 = boxes[c, 0]
            by0 = boxes[c, 1]
            bx1 = boxes[c, 2]
            by1 = boxes[c, 3]
            lx = bx1 - bx0
            ly = by1 - by0
            px = periodic[c, 0] != 0
            py = periodic[c, 1] != 0

            # ocean drag at the pre-step state
            for i in range(s, e):
                rx = uox[i] - vx[i]
                ry = uoy[i] - vy[i]
                sp = sqrt(rx * rx + ry * ry)
                alpha = kd * r[i] * r[i]
                rw = 0.5 * curl[i] - w[i]
                beta = kd * r[i] * r[i] * r[i] * r[i]
                fx[i - s] = alpha * rx * sp
                fy[i - s] = alpha * ry * sp
                tq[i - s] = beta * rw * fabs(rw)
                if do_acc:
                    acc[c, 0] += vx[i]
                    acc[c, 1] += vy[i]
                    acc[c, 2] += w[i]
                    acc[c, 3] += fx[i - s]
                    acc[c, 4] += fy[i - s]
                    acc[c, 5] += tq[i - s]

            status = _cell_pairs(x, y, r, s, e, bx0, by0, bx1, by1, px, py, pl, pj, cap, &npairs, &bad)
            if status != OK:
                err_a = c
                break

            for p in range(npairs):
                l = pl[p]
                j = pj[p]
                dx = x[l] - x[j]
                dy = y[l] - y[j]
                if px:
                    if dx > 0.5 * lx:
                        dx = dx - lx
                    elif dx < -0.5 * lx:
                        dx = dx + lx
                if py:
                    if dy > 0.5 * ly:
                        dy = dy - ly
                    elif dy < -0.5 * ly:
                        dy = dy + ly
                d2 = dx * dx + dy * dy
                d = sqrt(d2)
                rl = r[l]
                rj = r[j]
                if d <= fabs(rl - rj) or d == 0.0:
                    if strict or d == 0.0:
                        if strict:
                            status = ENGULFED
                            err_a = l
                            err_b = j
                            break
                        continue
                    cc = 2.0 * (rl if rl < rj else rj)
                else:
                    a = (d2 + rl * rl - rj * rj) / (2.0 * d)
                    h2 = rl * rl - a * a
                    if h2 < 0.0:
                        h2 = 0.0
                    cc = 2.0 * sqrt(h2)
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
                if fabs(ft) > cap_t:
                    ft = copysign(cap_t, ft)
                Fx = fn * nx_ + ft * tx
                Fy = fn * ny_ + ft * ty
                fx[l - s] += Fx
                fy[l - s] += Fy
                tq[l - s] += -al * ft
                fx[j - s] -= Fx
                fy[j - s] -= Fy
                tq[j - s] += -aj * ft
            if status != OK:
                break

            for i in range(s, e):
                if semi_implicit:
                    vx[i] = vx[i] + (fx[i - s] / m[i]) * dt
                    vy[i] = vy[i] + (fy[i - s] / m[i]) * dt
                    w[i] = w[i] + (tq[i - s] / inertia[i]) * dt
                    xn = x[i] + vx[i] * dt
                    yn = y[i] + vy[i] * dt
                    theta[i] = theta[i] + w[i] * dt
                else:
                    xn = x[i] + vx[i] * dt
                    yn = y[i] + vy[i] * dt
                    theta[i] = theta[i] + w[i] * dt
                    vx[i] = vx[i] + (fx[i - s] / m[i]) * dt
                    vy[i] = vy[i] + (fy[i - s] / m[i]) * dt
                    w[i] = w[i] + (tq[i - s] / inertia[i]) * dt
                if px:
                    if xn >= bx1:
                        xn = xn - lx
                        if xn < bx0:
                            xn = bx0
                    elif xn < bx0:
                        xn = xn + lx
                        if xn >= bx1:
                            xn = bx0
                if py:
                    if yn >= by1:
                        yn = yn - ly
                        if yn < by0:
                            yn = by0
                    elif yn < by0:
                        yn = yn + ly
                        if yn >= by1:
                            yn = by0
                x[i] = xn
                y[i] = yn
                if not (isfinite(xn) and isfinite(yn) and isfinite(vx[i])
                        and isfinite(vy[i]) and isfinite(w[i]) and isfinite(theta[i])):
                    status = NONFINITE
                    err_a = i
                    break
            c += 1

        free(fx); free(fy); free(tq); free(pl); free(pj)
    return status, err_a, err_b
