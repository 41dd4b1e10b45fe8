"""Pure-Python implementations of the hot kernels.

These are the reference versions of the routines in ``_ckernels.pyx``;
both must produce the same numbers up to floating-point reassociation.
The module is used when the compiled extension is unavailable or when
``TFELAB_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import math

import numpy as np

# mobility family codes shared with the compiled kernels
FAM_DEGENERATE, FAM_SIMPLE, FAM_HOMOTOPY, FAM_UNIT = 0, 1, 2, 3

# integrator status codes
ST_SPAN_DONE, ST_CROSSINGS_DONE, ST_AMPLITUDE, ST_STEP_UNDERFLOW, ST_MAX_STEPS = 0, 1, 2, 3, 4


# ------------------------------------------------------------------ thin film

def _mob(u, fam, n, eps):
    if fam == FAM_UNIT:
        return np.ones_like(u), np.zeros_like(u)
    if fam == FAM_DEGENERATE:
        s = u * u
        phi = s ** (0.5 * n)
        with np.errstate(divide="ignore", invalid="ignore"):
            dphi = np.where(s > 0.0, n * u * s ** (0.5 * n - 1.0), 0.0)
        return phi, dphi
    s = eps * eps + u * u
    p = s ** (0.5 * n)
    dp = n * u * s ** (0.5 * n - 1.0)
    if fam == FAM_SIMPLE:
        return p, dp
    return eps ** n + (1.0 - eps) * p, (1.0 - eps) * dp


def _ghost_index(N, periodic):
    """Physical node index for extended positions -2 .. N+1."""
    j = np.arange(-2, N + 2)
    if periodic:
        return j % N
    m = np.abs(j)
    hi = m > N - 1
    m[hi] = 2 * (N - 1) - m[hi]
    return m


def face_quantities(u, h, fam, n, eps, geometric, periodic):
    """Face mobility M and third difference g on faces i+1/2, i = -1 .. N-1.

    Returns arrays of length N + 1 where entry k is face (k-1)+1/2.
    """
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    ue = u[_ghost_index(N, periodic)]  # ue[k] = u[k-2]
    phi, _ = _mob(ue, fam, n, eps)
    # faces between extended k and k+1 for k = 1 .. N+1  ->  face (k-2)+1/2
    a = ue[1:N + 2]
    b = ue[2:N + 3]
    g = (ue[3:N + 4] - 3.0 * b + 3.0 * a - ue[0:N + 1]) / (h * h * h)
    pa, pb = phi[1:N + 2], phi[2:N + 3]
    if geometric:
        M = np.sqrt(pa * pb)
    else:
        M = 0.5 * (pa + pb)
    return M, g


def apply_operator(u, h, fam, n, eps, geometric, periodic):
    """A(u)_i = (q_{i+1/2} - q_{i-1/2}) / h with q = M g, so u_t = -A(u)."""
    M, g = face_quantities(u, h, fam, n, eps, geometric, periodic)
    q = M * g
    return (q[1:] - q[:-1]) / h


def assemble_system(u, c, h, dtt, fam, n, eps, geometric, periodic):
    """Residual R = u - c + dtt*A(u) and its Jacobian in 5-band form.

    ``bands[k, i]`` holds dR_i/du_{i+k-2}; column indices wrap modulo N for
    periodic boundaries and fold back onto physical nodes for reflecting
    ones, so the reflecting Jacobian is an ordinary pentadiagonal matrix.
    """
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    gi = _ghost_index(N, periodic)
    ue = u[gi]
    phi, dphi = _mob(ue, fam, n, eps)
    h3 = h * h * h
    # face f = 0..N corresponds to physical face (f-1)+1/2, between ext f+1, f+2
    a_idx = np.arange(1, N + 2)
    pa, pb = phi[a_idx], phi[a_idx + 1]
    da, db = dphi[a_idx], dphi[a_idx + 1]
    g = (ue[a_idx + 2] - 3.0 * ue[a_idx + 1] + 3.0 * ue[a_idx] - ue[a_idx - 1]) / h3
    if geometric:
        M = np.sqrt(pa * pb)
        with np.errstate(divide="ignore", invalid="ignore"):
            dMa = np.where(pa > 0, 0.5 * M * da / pa, 0.0)
            dMb = np.where(pb > 0, 0.5 * M * db / pb, 0.0)
    else:
        M = 0.5 * (pa + pb)
        dMa, dMb = 0.5 * da, 0.5 * db
    q = M * g
    R = u - c + dtt * (q[1:] - q[:-1]) / h

    # dq_f / du_ext at ext positions f .. f+3 (offsets -1, 0, +1, +2 from left node)
    dq = np.empty((N + 1, 4))
    dq[:, 0] = -M / h3
    dq[:, 1] = 3.0 * M / h3 + g * dMa
    dq[:, 2] = -3.0 * M / h3 + g * dMb
    dq[:, 3] = M / h3
    scale = dtt / h
    bands = np.zeros((5, N))
    bands[2] += 1.0
    rows = np.arange(N)
    for sign, fo in ((1.0, 1), (-1.0, 0)):
        # node i uses face i+fo (right face fo=1, left face fo=0)
        f = rows + fo
        for k in range(4):
            ext = f + k  # extended position of the coupled node
            val = sign * scale * dq[f, k]
            if periodic:
                off = ext - 2 - rows + 2
            else:
                off = gi[ext] - rows + 2
            np.add.at(bands, (off, rows), val)
    return R, bands


# ---------------------------------------------------------- interface ODE

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def eqlc_coefficients(n):
    mu = 3.0 / n
    return 3.0 * (mu - 1.0), 3.0 * mu * mu - 6.0 * mu + 2.0, mu * (mu - 1.0) * (mu - 2.0)


def eqlc_rhs(p, dp, ddp, n, c2, c1, c0, r2):
    s = p * p + r2
    sing = p * s ** (-0.5 * n) if s > 0.0 else 0.0
    return -(c2 * ddp + c1 * dp + c0 * p + sing)


def _hermite(y0, y1, d0, d1, hstep, th):
    """Cubic Hermite on [0,1] with endpoint values and slopes (per unit s)."""
    h00 = (1 + 2 * th) * (1 - th) * (1 - th)
    h10 = th * (1 - th) * (1 - th)
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    return h00 * y0 + h10 * hstep * d0 + h01 * y1 + h11 * hstep * d1


def eqlc_run(y0, n, zero_reg, s_span, rtol, atol, h0, max_steps,
             amp_cap, max_crossings, sample_ds):
    """Adaptive DP5(4) integration of the interface ODE.

    Records upward crossings of the section phi = 0 (phi' > 0), located
    by cubic Hermite interpolation of the step.  When ``sample_ds > 0``
    uniform samples of (s, phi, phi', phi'') are returned as well.

    Returns (y_end, s_end, status, crossings (k x 3: s, phi', phi''),
    samples (m x 4), n_steps).
    """
    c2, c1, c0 = eqlc_coefficients(n)
    r2 = zero_reg * zero_reg
    p, dp, ddp = float(y0[0]), float(y0[1]), float(y0[2])
    s = 0.0
    h = h0
    f = eqlc_rhs(p, dp, ddp, n, c2, c1, c0, r2)
    crossings = []
    samples = []
    next_sample = 0.0
    if sample_ds > 0:
        samples.append((0.0, p, dp, ddp))
        next_sample = sample_ds
    status = ST_SPAN_DONE
    steps = 0
    kp = [0.0] * 7
    kd = [0.0] * 7
    kdd = [0.0] * 7
    while True:
        if s >= s_span:
            status = ST_SPAN_DONE
            break
        if steps >= max_steps:
            status = ST_MAX_STEPS
            break
        if h < 1e-14 * max(1.0, abs(s)):
            status = ST_STEP_UNDERFLOW
            break
        if s + h > s_span:
            h = s_span - s
        # stage 0 reuses f (FSAL)
        kp[0], kd[0], kdd[0] = dp, ddp, f
        for i in range(1, 7):
            ai = _A[i]
            sp, sd, sdd = p, dp, ddp
            for j in range(i):
                sp += h * ai[j] * kp[j]
                sd += h * ai[j] * kd[j]
                sdd += h * ai[j] * kdd[j]
            kp[i], kd[i], kdd[i] = sd, sdd, eqlc_rhs(sp, sd, sdd, n, c2, c1, c0, r2)
        # 5th-order solution is the last stage argument
        np_, nd, ndd = sp, sd, sdd
        ep = ed = edd = 0.0
        for j in range(7):
            ep += _E[j] * kp[j]
            ed += _E[j] * kd[j]
            edd += _E[j] * kdd[j]
        ep *= h
        ed *= h
        edd *= h
        sc0 = atol + rtol * max(abs(p), abs(np_))
        sc1 = atol + rtol * max(abs(dp), abs(nd))
        sc2 = atol + rtol * max(abs(ddp), abs(ndd))
        err = math.sqrt(((ep / sc0) ** 2 + (ed / sc1) ** 2 + (edd / sc2) ** 2) / 3.0)
        if not math.isfinite(err):
            h *= 0.2
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        steps += 1
        nf = kdd[6]
        # section crossing: phi from <0 to >=0
        if p < 0.0 <= np_:
            lo, hi = 0.0, 1.0
            for _ in range(60):
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
                th = min(max(th, 0.0), 1.0)
                samples.append((next_sample,
                                _hermite(p, np_, dp, nd, h, th),
                                _hermite(dp, nd, ddp, ndd, h, th),
                                _hermite(ddp, ndd, f, nf, h, th)))
                next_sample = sample_ds * (len(samples))
        s += h
        p, dp, ddp, f = np_, nd, ndd, nf
        if abs(p) > amp_cap:
            status = ST_AMPLITUDE
            break
        if max_crossings > 0 and len(crossings) >= max_crossings:
            status = ST_CROSSINGS_DONE
            break
        fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h *= fac
    return (np.array([p, dp, ddp]), s, status,
            np.array(crossings, dtype=float).reshape(-1, 3),
            np.array(samples, dtype=float).reshape(-1, 4), steps)
