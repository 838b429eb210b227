"""Compiled inner loops for the stochastic optimizers.

Everything here works on transposed representatives: a subspace basis
U (d x r, orthonormal columns) is carried as ut = U^T with shape
(r, d), C-contiguous, so every hot operation streams along unit-stride
rows. On this layout a fused variance-reduced step costs a handful of
r*d passes and never calls LAPACK.

The geometry avoids per-step SVDs entirely. With T = U~^T W and
Y = I - T^T T (eigenvalues sin^2 of the principal angles), the exact
maps reduce to analytic matrix functions of small symmetric matrices:

  log:        xi = (W - U~ T) phi(Y) T^T,  phi(y) = asin(s)/(s sqrt(1-y)),
              s = sqrt(y)
  transport:  tau(z) = z - U~ [f1(Yl) S] + xi [f2(Yl) S],  S = xi^T z,
              Yl = I - T T^T, f1 = sin(th)/th and f2 = (cos(th)-1)/th^2
              expressed in y = sin^2(th)
  alignment:  R = T (T^T T)^{-1/2} rebases the result on W's actual
              representative
  exp:        exp_U(eta) = U cos(sqrt(G)) + eta sinc(sqrt(G)),
              G = eta^T eta

Each scalar function is evaluated as a truncated power series with
exact rational coefficients (rounded once to double, frozen below)
whenever a Gershgorin bound certifies the truncation error below 1e-16;
otherwise a cyclic Jacobi eigensolver on the r x r argument gives the
exact spectral evaluation. The branch depends only on the input, so
runs are bit-for-bit reproducible.

Kernels return status codes instead of raising:
0 ok, 1 log/transport domain failure, 3 snapshot mean not converged.
The wrapping engine converts them to the package's exception types.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import ConvergenceError, DomainError
from .manifold import GrassmannPoint, TangentVector
from .optimizers import SnapshotOption
from .problems import CompletionProblem, KarcherProblem, PcaProblem

OK = 0
ERR_DOMAIN = 1
ERR_MEAN = 3

# series are safe below these Gershgorin bounds on the argument
SERIES_YMAX = 0.03
SERIES_GMAX = 0.04
SERIES_TOL = 1e-16
REORTH_PERIOD = 4096
DOMAIN_YMAX = 1.0 - 1e-24
MEAN_TOL = 1e-10
# widely spread clouds (near-orthogonal subspace pairs) contract at
# rates approaching 0.996 per sweep, so the cap must accommodate a few
# thousand sweeps; well-clustered inputs exit after a handful
MEAN_MAX_ITER = 8000

# -- frozen series coefficients -------------------------------------------
# Exact rationals evaluated to double; tests recompute them with
# Fraction arithmetic. Index k is the coefficient of Y^k.

# phi(y) = asin(s)/(s sqrt(1-y)), s = sqrt(y):  4^k / ((2k+1) C(2k,k))
_PHI = np.array([
    1.0, 2.0 / 3.0, 8.0 / 15.0, 16.0 / 35.0, 128.0 / 315.0, 256.0 / 693.0,
    1024.0 / 3003.0, 2048.0 / 6435.0, 32768.0 / 109395.0, 65536.0 / 230945.0,
    262144.0 / 969969.0,
])
# (1-y)^{-1/2}:  C(2k,k) / 4^k
_ISQ = np.array([
    1.0, 1.0 / 2.0, 3.0 / 8.0, 5.0 / 16.0, 35.0 / 128.0, 63.0 / 256.0,
    231.0 / 1024.0, 429.0 / 2048.0, 6435.0 / 32768.0, 12155.0 / 65536.0,
    46189.0 / 262144.0,
])
# sin(th)/th with y = sin^2(th): reciprocal of the asin(s)/s series,
# rationals 1, -1/6, -17/360, -367/15120, -27859/1814400, -1295803/119750400,
# ... rounded once to double (the last two numerators exceed 2^53, so the
# values are written as correctly rounded decimals)
_PSINC = np.array([
    1.0, -0.16666666666666666, -0.04722222222222222, -0.024272486772486772,
    -0.015354387125220458, -0.010820865734060178, -0.008150718492939062,
    -0.006423326210163457, -0.005230434149368269, -0.0043660340950203965,
    -0.0037160652803601736,
])
# (cos(th)-1)/th^2 with y = sin^2(th): rationals -1/2, 1/24, 1/80, 787/120960,
# 15017/3628800, 2669/912384, ...
_PG = np.array([
    -0.5, 0.041666666666666664, 0.0125, 0.0065062830687830685,
    0.0041382826278659616, 0.0029253033810325477, 0.0022077345963548013,
    0.0017421851457409872, 0.0014200381030359133, 0.001186251216080203,
    0.0010102556405530315,
])
_YCOEFS = np.stack([_PHI, _ISQ, _PSINC, _PG])
F_PHI, F_ISQ, F_PSINC, F_PG = 0, 1, 2, 3

# cos(sqrt(x)) and sinc(sqrt(x)): (-1)^k / (2k)!  and  (-1)^k / (2k+1)!
_NEXP = 10
_COSS = np.array([(-1.0) ** k / math.factorial(2 * k) for k in range(_NEXP)])
_SINCS = np.array([(-1.0) ** k / math.factorial(2 * k + 1) for k in range(_NEXP)])
_FACT2K = np.array([float(math.factorial(2 * k)) for k in range(_NEXP + 1)])


# -- small dense helpers ----------------------------------------------------


@njit(cache=True)
def _mm(m, a, out):
    """out = m @ a with m (r, r), a (r, d), accumulation order by rows."""
    r, d = a.shape
    for i in range(r):
        mi = m[i, 0]
        for k in range(d):
            out[i, k] = mi * a[0, k]
        for j in range(1, r):
            mi = m[i, j]
            for k in range(d):
                out[i, k] += mi * a[j, k]


@njit(cache=True)
def _mm_sub(m, a, out):
    """out -= m @ a."""
    r, d = a.shape
    for i in range(r):
        for j in range(r):
            mi = m[i, j]
            for k in range(d):
                out[i, k] -= mi * a[j, k]


@njit(cache=True)
def _mm_add(m, a, out):
    """out += m @ a."""
    r, d = a.shape
    for i in range(r):
        for j in range(r):
            mi = m[i, j]
            for k in range(d):
                out[i, k] += mi * a[j, k]


@njit(cache=True)
def _gram(a, b, out):
    """out = a @ b^T with a, b (r, d)."""
    r = a.shape[0]
    d = a.shape[1]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for k in range(d):
                acc += a[i, k] * b[j, k]
            out[i, j] = acc


@njit(cache=True)
def _frob2(a):
    r, d = a.shape
    acc = 0.0
    for i in range(r):
        for k in range(d):
            acc += a[i, k] * a[i, k]
    return acc


@njit(cache=True)
def _gersh(m):
    """Gershgorin bound on the spectral radius of a symmetric matrix."""
    r = m.shape[0]
    best = 0.0
    for i in range(r):
        acc = 0.0
        for j in range(r):
            acc += abs(m[i, j])
        if acc > best:
            best = acc
    return best


@njit(cache=True)
def _matpoly(y, coefs, deg, out, tmp):
    """out = sum_k coefs[k] y^k, Horner form, k = 0..deg."""
    r = y.shape[0]
    for i in range(r):
        for j in range(r):
            out[i, j] = 0.0
        out[i, i] = coefs[deg]
    for k in range(deg - 1, -1, -1):
        for i in range(r):
            for j in range(r):
                acc = 0.0
                for l in range(r):
                    acc += y[i, l] * out[l, j]
                tmp[i, j] = acc
        for i in range(r):
            for j in range(r):
                out[i, j] = tmp[i, j]
            out[i, i] += coefs[k]


@njit(cache=True)
def _jacobi(a, v, lam, work):
    """Eigendecomposition of a symmetric r x r matrix by cyclic Jacobi.

    a is left untouched; eigenvectors land in the columns of v.
    """
    r = a.shape[0]
    for i in range(r):
        for j in range(r):
            work[i, j] = a[i, j]
            v[i, j] = 0.0
        v[i, i] = 1.0
    for _sweep in range(30):
        off = 0.0
        for p in range(r):
            for q in range(p + 1, r):
                off += work[p, q] * work[p, q]
        if off <= 1e-30:
            break
        for p in range(r):
            for q in range(p + 1, r):
                apq = work[p, q]
                if abs(apq) <= 1e-18:
                    continue
                theta = 0.5 * (work[q, q] - work[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(r):
                    akp = work[k, p]
                    akq = work[k, q]
                    work[k, p] = c * akp - s * akq
                    work[k, q] = s * akp + c * akq
                for k in range(r):
                    apk = work[p, k]
                    aqk = work[q, k]
                    work[p, k] = c * apk - s * aqk
                    work[q, k] = s * apk + c * aqk
                for k in range(r):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    for i in range(r):
        lam[i] = work[i, i]


@njit(cache=True)
def _yfunc_scalar(y, fid):
    """Exact scalar evaluation of the four y-series functions, y in [0, 1]."""
    if y < 1e-20:
        if fid == F_PG:
            return -0.5
        return 1.0
    s = np.sqrt(y)
    th = np.arcsin(s)
    if fid == F_PHI:
        return th / (s * np.sqrt(1.0 - y))
    if fid == F_ISQ:
        return 1.0 / np.sqrt(1.0 - y)
    if fid == F_PSINC:
        return s / th
    # sqrt(1-y) - 1 rationalized to avoid cancellation at small y
    return -y / ((1.0 + np.sqrt(1.0 - y)) * th * th)


@njit(cache=True)
def _nterms_y(bound):
    """Truncation degree for the y-series at a given Gershgorin bound."""
    if bound <= 1e-16:
        return 2
    n = int(np.ceil(np.log(SERIES_TOL / 1.1) / np.log(bound)))
    if n < 2:
        n = 2
    if n > 10:
        n = 10
    return n


@njit(cache=True)
def _yfunc(m, fid, out, wr, wl):
    """out = f_fid(m) for a symmetric m with spectrum in [0, 1).

    Series evaluation under the Gershgorin gate, spectral evaluation
    via Jacobi above it. Returns ERR_DOMAIN when an eigenvalue reaches
    1 and the function is singular there (phi, inverse square root).
    """
    bound = _gersh(m)
    if bound <= SERIES_YMAX:
        _matpoly(m, _YCOEFS[fid], _nterms_y(bound), out, wr[11])
        return OK
    _jacobi(m, wr[12], wl[0], wr[13])
    r = m.shape[0]
    for i in range(r):
        y = wl[0][i]
        if y < 0.0:
            y = 0.0
        if y > 1.0:
            y = 1.0
        if y >= DOMAIN_YMAX and (fid == F_PHI or fid == F_ISQ):
            return ERR_DOMAIN
        wl[1][i] = _yfunc_scalar(y, fid)
    v = wr[12]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for k in range(r):
                acc += v[i, k] * wl[1][k] * v[j, k]
            out[i, j] = acc
    return OK


@njit(cache=True)
def _exp_inplace(ut, eta, wr, wl, wd):
    """Geodesic step: ut <- cos(sqrt(G)) ut + sinc(sqrt(G)) eta, G = eta eta^T
    in the transposed layout (rows of eta are the carrier's columns)."""
    g = wr[8]
    _gram(eta, eta, g)
    bound = _gersh(g)
    cosm = wr[9]
    sincm = wr[10]
    if bound <= SERIES_GMAX:
        deg = 2
        tail = bound * bound * bound
        while deg < _NEXP - 1 and tail > SERIES_TOL * _FACT2K[deg + 1]:
            deg += 1
            tail *= bound
        _matpoly(g, _COSS, deg, cosm, wr[11])
        _matpoly(g, _SINCS, deg, sincm, wr[11])
    else:
        _jacobi(g, wr[12], wl[0], wr[13])
        r = g.shape[0]
        for i in range(r):
            x = wl[0][i]
            if x < 0.0:
                x = 0.0
            s = np.sqrt(x)
            wl[1][i] = np.cos(s)
            if x < 1e-20:
                wl[2][i] = 1.0
            else:
                wl[2][i] = np.sin(s) / s
        v = wr[12]
        for i in range(r):
            for j in range(r):
                acc_c = 0.0
                acc_s = 0.0
                for k in range(r):
                    acc_c += v[i, k] * wl[1][k] * v[j, k]
                    acc_s += v[i, k] * wl[2][k] * v[j, k]
                cosm[i, j] = acc_c
                sincm[i, j] = acc_s
    new = wd[2]
    _mm(cosm, ut, new)
    _mm_add(sincm, eta, new)
    ut[:, :] = new


@njit(cache=True)
def _mgs2(ut):
    """Two rounds of modified Gram-Schmidt over the rows (positive diag)."""
    r, d = ut.shape
    for _ in range(2):
        for i in range(r):
            for j in range(i):
                acc = 0.0
                for k in range(d):
                    acc += ut[j, k] * ut[i, k]
                for k in range(d):
                    ut[i, k] -= acc * ut[j, k]
            nrm = 0.0
            for k in range(d):
                nrm += ut[i, k] * ut[i, k]
            inv = 1.0 / np.sqrt(nrm)
            for k in range(d):
                ut[i, k] *= inv


@njit(cache=True)
def _log_t(pt, qt, xt, wr, wl, wd):
    """Log carrier at pt toward qt: xt = (Q - P T) phi(Y) T^T, transposed."""
    t = wr[0]
    y = wr[1]
    _gram(pt, qt, t)
    r = t.shape[0]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for k in range(r):
                acc += t[k, i] * t[k, j]
            y[i, j] = -acc
        y[i, i] += 1.0
    status = _yfunc(y, F_PHI, wr[3], wr, wl)
    if status != OK:
        return status
    bt = wd[0]
    for i in range(r):
        for k in range(pt.shape[1]):
            bt[i, k] = qt[i, k]
    # bt -= T^T @ pt (transposed form of B = Q - P T)
    for i in range(r):
        for j in range(r):
            tji = t[j, i]
            for k in range(pt.shape[1]):
                bt[i, k] -= tji * pt[j, k]
    # K = phi(Y) @ T^T, xi^T = K^T @ bt
    kmat = wr[4]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += wr[3][i, l] * t[j, l]
            kmat[i, j] = acc
    for i in range(r):
        for k in range(pt.shape[1]):
            acc = 0.0
            for j in range(r):
                acc += kmat[j, i] * bt[j, k]
            xt[i, k] = acc
    return OK


@njit(cache=True)
def _transport_step(ut_tilde, ut, cor, gw, alpha, wr, wl, wd):
    """One exact-geometry SVRG update of ut in place.

    cor is the correction at the snapshot (batch gradient there minus
    the anchor); gw the batch gradient at ut. Transports cor to ut
    along the connecting geodesic, forms the corrected direction, and
    takes the geodesic step of length alpha.
    """
    r, d = ut.shape
    t = wr[0]
    y = wr[1]
    yl = wr[2]
    _gram(ut_tilde, ut, t)
    for i in range(r):
        for j in range(r):
            acc = 0.0
            accl = 0.0
            for k in range(r):
                acc += t[k, i] * t[k, j]
                accl += t[i, k] * t[j, k]
            y[i, j] = -acc
            yl[i, j] = -accl
        y[i, i] += 1.0
        yl[i, i] += 1.0
    phi = wr[3]
    status = _yfunc(y, F_PHI, phi, wr, wl)
    if status != OK:
        return status
    isq = wr[4]
    status = _yfunc(y, F_ISQ, isq, wr, wl)
    if status != OK:
        return status
    f1 = wr[5]
    status = _yfunc(yl, F_PSINC, f1, wr, wl)
    if status != OK:
        return status
    f2 = wr[6]
    status = _yfunc(yl, F_PG, f2, wr, wl)
    if status != OK:
        return status

    # log carrier at the snapshot: xt^T = (phi T^T)^T @ bt
    bt = wd[0]
    xt = wd[1]
    for i in range(r):
        for k in range(d):
            bt[i, k] = ut[i, k]
    for i in range(r):
        for j in range(r):
            tji = t[j, i]
            for k in range(d):
                bt[i, k] -= tji * ut_tilde[j, k]
    kmat = wr[7]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += phi[i, l] * t[j, l]
            kmat[i, j] = acc
    for i in range(r):
        for k in range(d):
            acc = 0.0
            for j in range(r):
                acc += kmat[j, i] * bt[j, k]
            xt[i, k] = acc

    # sandwich: cor <- cor - U~ (f1 S) + xi (f2 S), S = xi^T cor
    s = wr[8]
    _gram(xt, cor, s)
    a1 = wr[9]
    a2 = wr[10]
    for i in range(r):
        for j in range(r):
            acc1 = 0.0
            acc2 = 0.0
            for l in range(r):
                acc1 += f1[i, l] * s[l, j]
                acc2 += f2[i, l] * s[l, j]
            a1[i, j] = acc1
            a2[i, j] = acc2
    # transposed: cor -= a1^T @ ut_tilde ; cor += a2^T @ xt
    for i in range(r):
        for j in range(r):
            c1 = a1[j, i]
            c2 = a2[j, i]
            for k in range(d):
                cor[i, k] += c2 * xt[j, k] - c1 * ut_tilde[j, k]
    # rebase on ut's representative: R = T isq, moved <- R^T @ moved
    rmat = wr[7]
    for i in range(r):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += t[i, l] * isq[l, j]
            rmat[i, j] = acc
    moved = wd[2]
    for i in range(r):
        for k in range(d):
            acc = 0.0
            for j in range(r):
                acc += rmat[j, i] * cor[j, k]
            moved[i, k] = acc
    # project on the horizontal space at ut
    pm = wr[8]
    _gram(ut, moved, pm)
    for i in range(r):
        for j in range(r):
            pji = pm[j, i]
            for k in range(d):
                moved[i, k] -= pji * ut[j, k]
    # corrected direction, scaled step
    eta = wd[3]
    for i in range(r):
        for k in range(d):
            eta[i, k] = -alpha * (gw[i, k] - moved[i, k])
    _exp_inplace(ut, eta, wr, wl, wd)
    return OK


@njit(cache=True)
def _project_rescale_step(ut, cor, gw, alpha, wr, wd):
    """One qr-geometry SVRG update: projection transport with norm
    restoration, additive step, Gram-Schmidt retraction."""
    r, d = ut.shape
    n0 = np.sqrt(_frob2(cor))
    pm = wr[8]
    _gram(ut, cor, pm)
    for i in range(r):
        for j in range(r):
            pji = pm[j, i]
            for k in range(d):
                cor[i, k] -= pji * ut[j, k]
    n1 = np.sqrt(_frob2(cor))
    if n1 > 0.0:
        scale = n0 / n1
        for i in range(r):
            for k in range(d):
                cor[i, k] *= scale
    for i in range(r):
        for k in range(d):
            ut[i, k] -= alpha * (gw[i, k] - cor[i, k])
    _mgs2(ut)


@njit(cache=True)
def _sgd_step(ut, gw, alpha, geom_kind, wr, wl, wd):
    r, d = ut.shape
    eta = wd[3]
    if geom_kind == 0:
        for i in range(r):
            for k in range(d):
                eta[i, k] = -alpha * gw[i, k]
        _exp_inplace(ut, eta, wr, wl, wd)
    else:
        for i in range(r):
            for k in range(d):
                ut[i, k] -= alpha * gw[i, k]
        _mgs2(ut)


@njit(cache=True)
def _collect(ut, t, collect, rand_t, snap_buf, rand_buf):
    if collect == 1:
        snap_buf[t, :, :] = ut
    elif collect == 2 and t == rand_t:
        rand_buf[0, :, :] = ut


# -- per-problem batch gradients -------------------------------------------


@njit(cache=True)
def _pca_batch_grad(xrows, ut, batch, out, cvec, resid):
    r, d = ut.shape
    for i in range(r):
        for k in range(d):
            out[i, k] = 0.0
    coef = -2.0 / batch.shape[0]
    for b in range(batch.shape[0]):
        x = xrows[batch[b]]
        for i in range(r):
            acc = 0.0
            for k in range(d):
                acc += ut[i, k] * x[k]
            cvec[i] = acc
        for k in range(d):
            resid[k] = x[k]
        for i in range(r):
            ci = cvec[i]
            for k in range(d):
                resid[k] -= ci * ut[i, k]
        for i in range(r):
            w = coef * cvec[i]
            for k in range(d):
                out[i, k] += w * resid[k]


@njit(cache=True)
def _karcher_batch_grad(qstack_t, ut, batch, out, wr, wl, wd, xt):
    """Mean of -log_ut(Q_i) over the batch; domain status propagated."""
    r, d = ut.shape
    for i in range(r):
        for k in range(d):
            out[i, k] = 0.0
    coef = -1.0 / batch.shape[0]
    for b in range(batch.shape[0]):
        status = _log_t(ut, qstack_t[batch[b]], xt, wr, wl, wd)
        if status != OK:
            return status
        for i in range(r):
            for k in range(d):
                out[i, k] += coef * xt[i, k]
    return OK


@njit(cache=True)
def _mc_solve(ut, rows, vals, lo, hi, reg, gmat, rhs, avec):
    """Least-squares coefficients for one column via normal equations.

    Adds a deterministic 1e-10-scaled ridge when the Cholesky pivots
    collapse (underdetermined column), which keeps degenerate inputs
    from poisoning the run; well-posed columns never take that path.
    """
    r = ut.shape[0]
    m = hi - lo
    if m == 0:
        for i in range(r):
            avec[i] = 0.0
        return
    for i in range(r):
        rhs[i] = 0.0
        for j in range(r):
            gmat[i, j] = 0.0
    for k in range(lo, hi):
        row = rows[k]
        val = vals[k]
        for i in range(r):
            uik = ut[i, row]
            rhs[i] += uik * val
            for j in range(i, r):
                gmat[i, j] += uik * ut[j, row]
    trace = 0.0
    for i in range(r):
        trace += gmat[i, i]
        for j in range(i):
            gmat[i, j] = gmat[j, i]
    for i in range(r):
        gmat[i, i] += reg
    for attempt in range(2):
        ok = True
        # Cholesky in the lower triangle
        for i in range(r):
            for j in range(i + 1):
                acc = gmat[i, j]
                for k in range(j):
                    acc -= gmat[i, k] * gmat[j, k]
                if i == j:
                    if acc <= 1e-300:
                        ok = False
                        break
                    gmat[i, i] = np.sqrt(acc)
                else:
                    gmat[i, j] = acc / gmat[j, j]
            if not ok:
                break
        if ok:
            break
        # rebuild with a small ridge and retry once
        for i in range(r):
            rhs[i] = 0.0
            for j in range(r):
                gmat[i, j] = 0.0
        for k in range(lo, hi):
            row = rows[k]
            val = vals[k]
            for i in range(r):
                uik = ut[i, row]
                rhs[i] += uik * val
                for j in range(i, r):
                    gmat[i, j] += uik * ut[j, row]
        for i in range(r):
            for j in range(i):
                gmat[i, j] = gmat[j, i]
        ridge = reg + 1e-10 * (trace if trace > 0.0 else 1.0)
        if attempt == 1:
            for i in range(r):
                avec[i] = 0.0
            return
        for i in range(r):
            gmat[i, i] += ridge
    # solve L L^T a = rhs
    for i in range(r):
        acc = rhs[i]
        for k in range(i):
            acc -= gmat[i, k] * avec[k]
        avec[i] = acc / gmat[i, i]
    for i in range(r - 1, -1, -1):
        acc = avec[i]
        for k in range(i + 1, r):
            acc -= gmat[k, i] * avec[k]
        avec[i] = acc / gmat[i, i]


@njit(cache=True)
def _mc_batch_grad(indptr, rows, vals, reg, ut, batch, out, gmat, rhs, avec, wr):
    """Batch gradient 2/B sum (I - U U^T) rho_n a_n^T in the transposed
    layout; the horizontal projection is applied once at the end."""
    r, d = ut.shape
    for i in range(r):
        for k in range(d):
            out[i, k] = 0.0
    coef = 2.0 / batch.shape[0]
    for b in range(batch.shape[0]):
        n = batch[b]
        lo = indptr[n]
        hi = indptr[n + 1]
        _mc_solve(ut, rows, vals, lo, hi, reg, gmat, rhs, avec)
        for k in range(lo, hi):
            row = rows[k]
            pred = 0.0
            for i in range(r):
                pred += ut[i, row] * avec[i]
            resid = coef * (pred - vals[k])
            for i in range(r):
                out[i, row] += resid * avec[i]
    pm = wr[8]
    _gram(ut, out, pm)
    for i in range(r):
        for j in range(r):
            pji = pm[j, i]
            for k in range(d):
                out[i, k] -= pji * ut[j, k]


@njit(cache=True)
def mc_cost(indptr, rows, vals, reg, ut):
    r = ut.shape[0]
    n = indptr.shape[0] - 1
    gmat = np.empty((r, r))
    rhs = np.empty(r)
    avec = np.empty(r)
    total = 0.0
    for col in range(n):
        lo = indptr[col]
        hi = indptr[col + 1]
        _mc_solve(ut, rows, vals, lo, hi, reg, gmat, rhs, avec)
        acc = 0.0
        for k in range(lo, hi):
            row = rows[k]
            pred = 0.0
            for i in range(r):
                pred += ut[i, row] * avec[i]
            diff = pred - vals[k]
            acc += diff * diff
        if reg > 0.0:
            anorm = 0.0
            for i in range(r):
                anorm += avec[i] * avec[i]
            acc += reg * anorm
        total += acc
    return total / n


@njit(cache=True)
def mc_test_loss(indptr, rows, vals, reg, tindptr, trows, tvals, ut):
    r = ut.shape[0]
    n = indptr.shape[0] - 1
    gmat = np.empty((r, r))
    rhs = np.empty(r)
    avec = np.empty(r)
    total = 0.0
    for col in range(n):
        _mc_solve(ut, rows, vals, indptr[col], indptr[col + 1], reg, gmat, rhs, avec)
        for k in range(tindptr[col], tindptr[col + 1]):
            row = trows[k]
            pred = 0.0
            for i in range(r):
                pred += ut[i, row] * avec[i]
            diff = pred - tvals[k]
            total += diff * diff
    return total / n


@njit(cache=True)
def _mc_full_grad(indptr, rows, vals, reg, ut, out):
    r, d = ut.shape
    n = indptr.shape[0] - 1
    gmat = np.empty((r, r))
    rhs = np.empty(r)
    avec = np.empty(r)
    pm = np.empty((r, r))
    for i in range(r):
        for k in range(d):
            out[i, k] = 0.0
    coef = 2.0 / n
    for col in range(n):
        lo = indptr[col]
        hi = indptr[col + 1]
        _mc_solve(ut, rows, vals, lo, hi, reg, gmat, rhs, avec)
        for k in range(lo, hi):
            row = rows[k]
            pred = 0.0
            for i in range(r):
                pred += ut[i, row] * avec[i]
            resid = coef * (pred - vals[k])
            for i in range(r):
                out[i, row] += resid * avec[i]
    _gram(ut, out, pm)
    for i in range(r):
        for j in range(r):
            pji = pm[j, i]
            for k in range(d):
                out[i, k] -= pji * ut[j, k]


# -- epoch kernels ----------------------------------------------------------
# algo: 0 = variance-reduced, 1 = plain stochastic
# geom: 0 = exact (exp/parallel translation), 1 = qr (Gram-Schmidt/projection)
# collect: 0 = last only, 1 = every iterate, 2 = pre-drawn index into rand_buf


@njit(cache=True)
def pca_epoch(
    xrows, ut, ut_tilde, anchor_t, batches, alpha, algo, geom, collect, rand_t,
    snap_buf, rand_buf,
):
    m_s = batches.shape[0]
    r, d = ut.shape
    wr = np.empty((16, r, r))
    wl = np.empty((4, r))
    wd = np.empty((4, r, d))
    gw = np.empty((r, d))
    cor = np.empty((r, d))
    cvec = np.empty(r)
    resid = np.empty(d)
    for t in range(m_s):
        batch = batches[t]
        _pca_batch_grad(xrows, ut, batch, gw, cvec, resid)
        if algo == 0:
            _pca_batch_grad(xrows, ut_tilde, batch, cor, cvec, resid)
            for i in range(r):
                for k in range(d):
                    cor[i, k] -= anchor_t[i, k]
            if geom == 0:
                status = _transport_step(ut_tilde, ut, cor, gw, alpha, wr, wl, wd)
                if status != OK:
                    return status
            else:
                _project_rescale_step(ut, cor, gw, alpha, wr, wd)
        else:
            _sgd_step(ut, gw, alpha, geom, wr, wl, wd)
        if geom == 0 and (t + 1) % REORTH_PERIOD == 0:
            _mgs2(ut)
        _collect(ut, t, collect, rand_t, snap_buf, rand_buf)
    return OK


@njit(cache=True)
def karcher_epoch(
    qstack_t, ut, ut_tilde, anchor_t, batches, alpha, algo, geom, collect, rand_t,
    snap_buf, rand_buf,
):
    m_s = batches.shape[0]
    r, d = ut.shape
    wr = np.empty((16, r, r))
    wl = np.empty((4, r))
    wd = np.empty((4, r, d))
    gw = np.empty((r, d))
    cor = np.empty((r, d))
    xt = np.empty((r, d))
    for t in range(m_s):
        batch = batches[t]
        status = _karcher_batch_grad(qstack_t, ut, batch, gw, wr, wl, wd, xt)
        if status != OK:
            return status
        if algo == 0:
            status = _karcher_batch_grad(qstack_t, ut_tilde, batch, cor, wr, wl, wd, xt)
            if status != OK:
                return status
            for i in range(r):
                for k in range(d):
                    cor[i, k] -= anchor_t[i, k]
            if geom == 0:
                status = _transport_step(ut_tilde, ut, cor, gw, alpha, wr, wl, wd)
                if status != OK:
                    return status
            else:
                _project_rescale_step(ut, cor, gw, alpha, wr, wd)
        else:
            _sgd_step(ut, gw, alpha, geom, wr, wl, wd)
        if geom == 0 and (t + 1) % REORTH_PERIOD == 0:
            _mgs2(ut)
        _collect(ut, t, collect, rand_t, snap_buf, rand_buf)
    return OK


@njit(cache=True)
def mc_epoch(
    indptr, rows, vals, reg, ut, ut_tilde, anchor_t, batches, alpha, algo, geom,
    collect, rand_t, snap_buf, rand_buf,
):
    m_s = batches.shape[0]
    r, d = ut.shape
    wr = np.empty((16, r, r))
    wl = np.empty((4, r))
    wd = np.empty((4, r, d))
    gw = np.empty((r, d))
    cor = np.empty((r, d))
    gmat = np.empty((r, r))
    rhs = np.empty(r)
    avec = np.empty(r)
    for t in range(m_s):
        batch = batches[t]
        _mc_batch_grad(indptr, rows, vals, reg, ut, batch, gw, gmat, rhs, avec, wr)
        if algo == 0:
            _mc_batch_grad(
                indptr, rows, vals, reg, ut_tilde, batch, cor, gmat, rhs, avec, wr
            )
            for i in range(r):
                for k in range(d):
                    cor[i, k] -= anchor_t[i, k]
            if geom == 0:
                status = _transport_step(ut_tilde, ut, cor, gw, alpha, wr, wl, wd)
                if status != OK:
                    return status
            else:
                _project_rescale_step(ut, cor, gw, alpha, wr, wd)
        else:
            _sgd_step(ut, gw, alpha, geom, wr, wl, wd)
        if geom == 0 and (t + 1) % REORTH_PERIOD == 0:
            _mgs2(ut)
        _collect(ut, t, collect, rand_t, snap_buf, rand_buf)
    return OK


@njit(cache=True)
def karcher_mean_t(stack, out):
    """Fixed-point mean of the (K, r, d) transposed stack, started at
    stack[0]; mirrors the reference solver's tolerances."""
    k_pts, r, d = stack.shape
    wr = np.empty((16, r, r))
    wl = np.empty((4, r))
    wd = np.empty((4, r, d))
    xt = np.empty((r, d))
    acc = np.empty((r, d))
    out[:, :] = stack[0]
    for _it in range(MEAN_MAX_ITER + 1):
        for i in range(r):
            for k in range(d):
                acc[i, k] = 0.0
        for p in range(k_pts):
            status = _log_t(out, stack[p], xt, wr, wl, wd)
            if status != OK:
                return status
            for i in range(r):
                for k in range(d):
                    acc[i, k] += xt[i, k]
        inv = 1.0 / k_pts
        for i in range(r):
            for k in range(d):
                acc[i, k] *= inv
        if np.sqrt(_frob2(acc)) <= MEAN_TOL:
            return OK
        if _it == MEAN_MAX_ITER:
            return ERR_MEAN
        _exp_inplace(out, acc, wr, wl, wd)
    return ERR_MEAN


# -- engine ------------------------------------------------------------------


def _to_t(a):
    return np.ascontiguousarray(a.T)


class _KernelEngine:
    """Adapter exposing the compiled kernels behind the engine interface
    used by the run loops."""

    def __init__(self, geom, obj, epoch_fn, state):
        self.geom = geom
        self.obj = obj
        self.epoch_fn = epoch_fn
        self.state = state
        self.geom_flag = 0 if str(geom.kind) == "exact" else 1
        self._snap_buf = None
        self._rand_buf = None

    # metric helpers: cheap problems use the vectorized numpy paths,
    # completion uses its kernels (a python loop over columns would
    # dominate the epoch otherwise)

    def cost(self, p):
        if isinstance(self.obj, CompletionProblem):
            return float(mc_cost(*self.state, _to_t(p.u)))
        return self.obj.cost(p)

    def full_grad(self, p):
        if isinstance(self.obj, CompletionProblem):
            out = np.empty((p.r, p.d))
            _mc_full_grad(*self.state, _to_t(p.u), out)
            return TangentVector(np.ascontiguousarray(out.T), p, validate=False)
        return self.obj.grad(p)

    def test_loss(self, p):
        obj = self.obj
        if not isinstance(obj, CompletionProblem) or obj.test_indptr is None:
            return None
        return float(
            mc_test_loss(
                obj.indptr, obj.rows, obj.vals, obj.reg,
                obj.test_indptr, obj.test_rows, obj.test_vals, _to_t(p.u),
            )
        )

    def _buffers(self, option, m_s, r, d):
        if option is SnapshotOption.KARCHER:
            if self._snap_buf is None or self._snap_buf.shape != (m_s, r, d):
                self._snap_buf = np.empty((m_s, r, d))
            collect = 1
        else:
            if self._snap_buf is None:
                self._snap_buf = np.empty((1, 1, 1))
            collect = 2 if option is SnapshotOption.RANDOM else 0
        if self._rand_buf is None:
            self._rand_buf = np.empty((1, r, d))
        return collect

    def _run_epoch(self, ut, ut_tilde, anchor_t, batches, alpha, algo, option, rand_t):
        r, d = ut.shape
        collect = self._buffers(option, batches.shape[0], r, d)
        status = self.epoch_fn(
            *self.state, ut, ut_tilde, anchor_t, batches, float(alpha),
            algo, self.geom_flag, collect, -1 if rand_t is None else int(rand_t),
            self._snap_buf, self._rand_buf,
        )
        if status == ERR_DOMAIN:
            raise DomainError(
                "log undefined: orthogonal principal direction between subspaces"
            )
        w_last = GrassmannPoint(np.ascontiguousarray(ut.T))
        if option is SnapshotOption.LAST:
            return w_last, w_last
        if option is SnapshotOption.RANDOM:
            snap = GrassmannPoint(np.ascontiguousarray(self._rand_buf[0].T))
            return w_last, snap
        out = np.empty((r, d))
        status = karcher_mean_t(self._snap_buf, out)
        if status == ERR_DOMAIN:
            raise DomainError(
                "log undefined: orthogonal principal direction between subspaces"
            )
        if status == ERR_MEAN:
            raise ConvergenceError("karcher mean did not reach tolerance")
        return w_last, GrassmannPoint(np.ascontiguousarray(out.T))

    def svrg_epoch(self, w_tilde, anchor, batches, alpha, option, rand_t):
        ut = _to_t(w_tilde.u)
        return self._run_epoch(
            ut, _to_t(w_tilde.u), _to_t(anchor.carrier), batches, alpha, 0, option, rand_t
        )

    def sgd_epoch(self, w, batches, alpha, option, rand_t):
        ut = _to_t(w.u)
        dummy = np.zeros((1, ut.shape[1]))
        return self._run_epoch(ut, ut, dummy, batches, alpha, 1, option, rand_t)


def make_engine(geom, obj):
    """Compiled engine for a (problem, geometry) pair, or None when the
    pair has no kernel."""
    if str(geom.kind) not in ("exact", "qr"):
        return None
    if isinstance(obj, PcaProblem):
        return _KernelEngine(geom, obj, pca_epoch, (obj.xrows,))
    if isinstance(obj, KarcherProblem):
        qt = getattr(obj, "_qstack_t", None)
        if qt is None:
            qt = np.ascontiguousarray(obj.qstack.transpose(0, 2, 1))
            obj._qstack_t = qt
        return _KernelEngine(geom, obj, karcher_epoch, (qt,))
    if isinstance(obj, CompletionProblem):
        return _KernelEngine(
            geom, obj, mc_epoch, (obj.indptr, obj.rows, obj.vals, obj.reg)
        )
    return None


def completion_test_loss(problem: CompletionProblem, p: GrassmannPoint) -> float:
    """Held-out loss via the compiled column solver (same semantics as
    the problem's own test_loss, orders of magnitude faster)."""
    if problem.test_indptr is None:
        raise ValueError("problem has no test set")
    return float(
        mc_test_loss(
            problem.indptr, problem.rows, problem.vals, problem.reg,
            problem.test_indptr, problem.test_rows, problem.test_vals, _to_t(p.u),
        )
    )
