# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, fabs, isfinite, fmax, fmin
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    FAM_DEGENERATE = 0
    FAM_SIMPLE = 1
    FAM_HOMOTOPY = 2
    FAM_UNIT = 3


cdef inline void _mob(double u, int fam, double n, double eps,
                      double *phi, double *dphi) noexcept nogil:
    cdef double s, p
    if fam == FAM_UNIT:
        phi[0] = 1.0
        dphi[0] = 0.0
    elif fam == FAM_DEGENERATE:
        s = u * u
        if s > 0.0:
            p = pow(s, 0.5 * n)
            phi[0] = p
            dphi[0] = n * u * p / s
        else:
            phi[0] = pow(s, 0.5 * n)
            dphi[0] = 0.0
    else:
        s = eps * eps + u * u
        p = pow(s, 0.5 * n)
        if fam == FAM_SIMPLE:
            phi[0] = p
            dphi[0] = n * u * p / s if s > 0.0 else 0.0
        else:
            phi[0] = pow(eps, n) + (1.0 - eps) * p
            dphi[0] = (1.0 - eps) * n * u * p / s if s > 0.0 else 0.0


cdef inline Py_ssize_t _gidx(Py_ssize_t j, Py_ssize_t N, bint periodic) noexcept nogil:
    if periodic:
        j = j % N
        if j < 0:
            j += N
        return j
    if j < 0:
        j = -j
    if j > N - 1:
        j = 2 * (N - 1) - j
    return j


cdef void _faces(const double[::1] u, double h, int fam, double n, double eps,
                 bint geometric, bint periodic,
                 double[::1] M, double[::1] g, double[::1] dMa, double[::1] dMb) noexcept nogil:
    """Faces f = 0..N, face f lies between physical nodes f-1 and f.

    The mobility is evaluated once per node into dMa/dMb scratch space
    (phi in dMa[0:N], phi' in dMb[0:N]) and then combined per face.
    """
    cdef Py_ssize_t N = u.shape[0]
    cdef Py_ssize_t f, ia, ib
    cdef double h3 = h * h * h
    cdef double um1, ua, ub, up2, pa, pb, da, db, m
    cdef double *phi = <double *> malloc(N * sizeof(double))
    cdef double *dphi = <double *> malloc(N * sizeof(double))
    for f in range(N):
        _mob(u[f], fam, n, eps, &phi[f], &dphi[f])
    for f in range(N + 1):
        ia = _gidx(f - 1, N, periodic)
        ib = _gidx(f, N, periodic)
        um1 = u[_gidx(f - 2, N, periodic)]
        ua = u[ia]
        ub = u[ib]
        up2 = u[_gidx(f + 1, N, periodic)]
        g[f] = (up2 - 3.0 * ub + 3.0 * ua - um1) / h3
        pa = phi[ia]
        pb = phi[ib]
        da = dphi[ia]
        db = dphi[ib]
        if geometric:
            m = sqrt(pa * pb)
            M[f] = m
            dMa[f] = 0.5 * m * da / pa if pa > 0.0 else 0.0
            dMb[f] = 0.5 * m * db / pb if pb > 0.0 else 0.0
        else:
            M[f] = 0.5 * (pa + pb)
            dMa[f] = 0.5 * da
            dMb[f] = 0.5 * db
    free(phi)
    free(dphi)


def face_quantities(u, double h, int fam, double n, double eps, bint geometric, bint periodic):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t N = uv.shape[0]
    M = np.empty(N + 1)
    g = np.empty(N + 1)
    dMa = np.empty(N + 1)
    dMb = np.empty(N + 1)
    _faces(uv, h, fam, n, eps, geometric, periodic, M, g, dMa, dMb)
    return M, g


def apply_operator(u, double h, int fam, double n, double eps, bint geometric, bint periodic):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t N = uv.shape[0]
    cdef double[::1] M = np.empty(N + 1)
    cdef double[::1] g = np.empty(N + 1)
    cdef double[::1] dMa = np.empty(N + 1)
    cdef double[::1] dMb = np.empty(N + 1)
    out = np.empty(N)
    cdef double[::1] A = out
    cdef Py_ssize_t i
    _faces(uv, h, fam, n, eps, geometric, periodic, M, g, dMa, dMb)
    for i in range(N):
        A[i] = (M[i + 1] * g[i + 1] - M[i] * g[i]) / h
    return out


def assemble_system(u, c, double h, double dtt, int fam, double n, double eps,
                    bint geometric, bint periodic):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t N = uv.shape[0]
    cdef double[::1] M = np.empty(N + 1)
    cdef double[::1] g = np.empty(N + 1)
    cdef double[::1] dMa = np.empty(N + 1)
    cdef double[::1] dMb = np.empty(N + 1)
    R_arr = np.empty(N)
    B_arr = np.zeros((5, N))
    cdef double[::1] R = R_arr
    cdef double[:, ::1] B = B_arr
    cdef Py_ssize_t i, f, k, j, off, fo
    cdef double h3 = h * h * h
    cdef double scale = dtt / h
    cdef double sign, dq
    _faces(uv, h, fam, n, eps, geometric, periodic, M, g, dMa, dMb)
    with nogil:
        for i in range(N):
            R[i] = uv[i] - cv[i] + dtt * (M[i + 1] * g[i + 1] - M[i] * g[i]) / h
            B[2, i] += 1.0
            for fo in range(2):
                # fo = 1: right face f = i+1, fo = 0: left face f = i
                f = i + fo
                sign = 1.0 if fo == 1 else -1.0
                for k in range(4):
                    if k == 0:
                        dq = -M[f] / h3
                    elif k == 1:
                        dq = 3.0 * M[f] / h3 + g[f] * dMa[f]
                    elif k == 2:
                        dq = -3.0 * M[f] / h3 + g[f] * dMb[f]
                    else:
                        dq = M[f] / h3
                    j = f - 2 + k  # unwrapped physical column
                    if periodic:
                        off = j - i + 2
                    else:
                        off = _gidx(j, N, periodic) - i + 2
                    B[off, i] += sign * scale * dq
    return R_arr, B_arr


# ---------------------------------------------------------- interface ODE

cdef double[7] C_ = [0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0]
cdef double[7][6] A_ = [
    [0, 0, 0, 0, 0, 0],
    [1.0 / 5, 0, 0, 0, 0, 0],
    [3.0 / 40, 9.0 / 40, 0, 0, 0, 0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0],
    [35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] E_ = [71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
                     -17253.0 / 339200, 22.0 / 525, -1.0 / 40]


cdef inline double _rhs(double p, double dp, double ddp, double n,
                        double c2, double c1, double c0, double r2) noexcept nogil:
    cdef double s = p * p + r2
    cdef double sing = p * pow(s, -0.5 * n) if s > 0.0 else 0.0
    return -(c2 * ddp + c1 * dp + c0 * p + sing)


cdef inline double _hermite(double y0, double y1, double d0, double d1,
                            double hs, double th) noexcept nogil:
    cdef double h00 = (1 + 2 * th) * (1 - th) * (1 - th)
    cdef double h10 = th * (1 - th) * (1 - th)
    cdef double h01 = th * th * (3 - 2 * th)
    cdef double h11 = th * th * (th - 1)
    return h00 * y0 + h10 * hs * d0 + h01 * y1 + h11 * hs * d1


def eqlc_rhs(double p, double dp, double ddp, double n,
             double c2, double c1, double c0, double r2):
    return _rhs(p, dp, ddp, n, c2, c1, c0, r2)


def eqlc_run(y0, double n, double zero_reg, double s_span, double rtol, double atol,
             double h0, long max_steps, double amp_cap, long max_crossings, double sample_ds):
    cdef double mu = 3.0 / n
    cdef double c2 = 3.0 * (mu - 1.0)
    cdef double c1 = 3.0 * mu * mu - 6.0 * mu + 2.0
    cdef double c0 = mu * (mu - 1.0) * (mu - 2.0)
    cdef double r2 = zero_reg * zero_reg
    cdef double p = y0[0], dp = y0[1], ddp = y0[2]
    cdef double s = 0.0, h = h0
    cdef double f = _rhs(p, dp, ddp, n, c2, c1, c0, r2)
    cdef double kp[7]
    cdef double kd[7]
    cdef double kdd[7]
    cdef double sp, sd, sdd, np_, nd, ndd, nf, ep, ed, edd, sc0, sc1, sc2, err, fac
    cdef double lo, hi, mid, th, next_sample = 0.0
    cdef int i, j, it
    cdef long steps = 0
    cdef int status = 0
    crossings = []
    samples = []
    if sample_ds > 0:
        samples.append((0.0, p, dp, ddp))
        next_sample = sample_ds
    while True:
        if s >= s_span:
            status = 0
            break
        if steps >= max_steps:
            status = 4
            break
        if h < 1e-14 * fmax(1.0, fabs(s)):
            status = 3
            break
        if s + h > s_span:
            h = s_span - s
        kp[0] = dp
        kd[0] = ddp
        kdd[0] = f
        for i in range(1, 7):
            sp = p
            sd = dp
            sdd = ddp
            for j in range(i):
                sp += h * A_[i][j] * kp[j]
                sd += h * A_[i][j] * kd[j]
                sdd += h * A_[i][j] * kdd[j]
            kp[i] = sd
            kd[i] = sdd
            kdd[i] = _rhs(sp, sd, sdd, n, c2, c1, c0, r2)
        np_ = sp
        nd = sd
        ndd = sdd
        ep = 0.0
        ed = 0.0
        edd = 0.0
        for j in range(7):
            ep += E_[j] * kp[j]
            ed += E_[j] * kd[j]
            edd += E_[j] * kdd[j]
        ep *= h
        ed *= h
        edd *= h
        sc0 = atol + rtol * fmax(fabs(p), fabs(np_))
        sc1 = atol + rtol * fmax(fabs(dp), fabs(nd))
        sc2 = atol + rtol * fmax(fabs(ddp), fabs(ndd))
        err = sqrt(((ep / sc0) ** 2 + (ed / sc1) ** 2 + (edd / sc2) ** 2) / 3.0)
        if not isfinite(err):
            h *= 0.2
            continue
        if err > 1.0:
            h *= fmax(0.2, 0.9 * pow(err, -0.2))
            continue
        steps += 1
        nf = kdd[6]
        if p < 0.0 <= np_:
            lo = 0.0
            hi = 1.0
            for it in range(60):
                mid = 0.5 * (lo + hi)
                if _hermite(p, np_, dp, nd, h, mid) < 0.0:
                    lo = mid
                else:
                    hi = mid
            th = 0.5 * (lo + hi)
            crossings.append((s + th * h,
                              _hermite(dp, nd, ddp, ndd, h, th),
                              _hermite(ddp, ndd, f, nf, h, th)))
        if sample_ds > 0:
            while next_sample <= s + h + 1e-12 * h and next_sample <= s_span:
                th = (next_sample - s) / h
                th = fmin(fmax(th, 0.0), 1.0)
                samples.append((next_sample,
                                _hermite(p, np_, dp, nd, h, th),
                                _hermite(dp, nd, ddp, ndd, h, th),
                                _hermite(ddp, ndd, f, nf, h, th)))
                next_sample = sample_ds * len(samples)
        s += h
        p = np_
        dp = nd
        ddp = ndd
        f = nf
        if fabs(p) > amp_cap:
            status = 2
            break
        if max_crossings > 0 and len(crossings) >= max_crossings:
            status = 1
            break
        if err == 0.0:
            fac = 5.0
        else:
            fac = fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
        h *= fac
    return (np.array([p, dp, ddp]), s, status,
            np.array(crossings, dtype=float).reshape(-1, 3),
            np.array(samples, dtype=float).reshape(-1, 4), steps)
