"""Compiled simulation kernel.

Expressions are flattened into post-order tapes and interpreted over jets
inside numba-compiled code, together with the control cascade, the plant
right-hand side and the fixed-step integrators. The arithmetic mirrors
:mod:`sbc_lab.jet`, :mod:`sbc_lab.projection` and
:func:`sbc_lab.controller.cascade_step`; tests hold the two in agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import expr as ex
from .controller import ControllerConfig, GAIN_EPS
from .errors import ExprEvalError, GainTooSmallError, NonFiniteError
from .jet import MAX_ORDER
from .plant import SffModel
from .projection import _TANH_FLAT

M = MAX_ORDER + 1

# opcodes
OP_CONST, OP_VAR, OP_TIME, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV = range(8)
OP_IPOW, OP_POW, OP_CALL, OP_PIECE = range(8, 12)

# status codes
ST_OK, ST_DIV0, ST_DOMAIN, ST_NOBRANCH, ST_GAIN, ST_NONFINITE = range(6)

FID_SIN, FID_COS, FID_TANH, FID_EXP, FID_ABS, FID_SQRT = range(6)
FID_LN = ex.LN_FID

_FACT = np.array([math.factorial(i) for i in range(M)], dtype=np.float64)
_BINOM = np.array([[math.comb(i, j) if j <= i else 0 for j in range(M)] for i in range(M)], dtype=np.float64)


# --------------------------------------------------------------------------
# tape compilation


@dataclass
class Tape:
    ti: np.ndarray  # (N, 4) int64: op, ia, ib, source offset
    tf: np.ndarray  # (N,) float64 constants
    pwi: np.ndarray  # (K, 5) int64: lo_closed, hi_closed, start, end, result
    pwf: np.ndarray  # (K, 2) float64: lo, hi
    ex: np.ndarray  # (E, 2) int64: [start, end) per expression


def compile_exprs(nodes) -> Tape:
    ti: list = []
    tf: list = []
    pwi: list = []
    pwf: list = []
    spans = []

    def emit(op, ia=0, ib=0, pos=-1, val=0.0):
        ti.append((op, ia, ib, pos))
        tf.append(val)
        return len(ti) - 1

    def walk(node):
        if isinstance(node, ex.Const):
            return emit(OP_CONST, pos=node.pos, val=node.value)
        if isinstance(node, ex.Var):
            return emit(OP_VAR, node.index - 1, pos=node.pos)
        if isinstance(node, ex.Time):
            return emit(OP_TIME, pos=node.pos)
        if isinstance(node, ex.Neg):
            return emit(OP_NEG, walk(node.arg), pos=node.pos)
        if isinstance(node, ex.BinOp):
            if node.op == "^":
                k = ex.integer_exponent(node.right)
                base = walk(node.left)
                if k is not None:
                    return emit(OP_IPOW, base, k, pos=node.pos)
                return emit(OP_POW, base, walk(node.right), pos=node.pos)
            a = walk(node.left)
            b = walk(node.right)
            op = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}[node.op]
            return emit(op, a, b, pos=node.pos)
        if isinstance(node, ex.Call):
            return emit(OP_CALL, walk(node.arg), ex.FUNCTIONS[node.fn].fid, pos=node.pos)
        if isinstance(node, ex.Piecewise):
            entries = []
            for guard, branch in node.branches:
                start = len(ti)
                res = walk(branch)
                entries.append((int(guard.lo_closed), int(guard.hi_closed), start, len(ti), res, guard.lo, guard.hi))
            first = len(pwi)
            for e in entries:
                pwi.append(e[:5])
                pwf.append(e[5:])
            return emit(OP_PIECE, first, len(entries), pos=node.pos)
        raise TypeError(f"not an expression node: {node!r}")

    for node in nodes:
        start = len(ti)
        walk(node)
        spans.append((start, len(ti)))
    return Tape(
        ti=np.array(ti, dtype=np.int64).reshape(-1, 4),
        tf=np.array(tf, dtype=np.float64),
        pwi=np.array(pwi, dtype=np.int64).reshape(-1, 5),
        pwf=np.array(pwf, dtype=np.float64).reshape(-1, 2),
        ex=np.array(spans, dtype=np.int64).reshape(-1, 2),
    )


# --------------------------------------------------------------------------
# jet primitives (raw-derivative storage, explicit order m)


@njit(cache=True)
def j_mul(a, b, out, m):
    for i in range(m + 1):
        s = 0.0
        for j in range(i + 1):
            s += _BINOM[i, j] * a[j] * b[i - j]
        out[i] = s


@njit(cache=True)
def j_div(a, b, out, m):
    b0 = b[0]
    if b0 == 0.0:
        return ST_DIV0
    for i in range(m + 1):
        s = a[i]
        for j in range(i):
            s -= _BINOM[i, j] * out[j] * b[i - j]
        out[i] = s / b0
    return ST_OK


@njit(cache=True)
def j_compose(fd, u, out, m, work):
    """out = f(u) given derivative values fd; work needs 3 rows."""
    out0 = fd[0]
    if m == 0:
        out[0] = out0
        return
    d = work[0]
    power = work[1]
    acc = work[2]
    d[0] = 0.0
    for i in range(1, m + 1):
        d[i] = u[i] / _FACT[i]
    for i in range(m + 1):
        power[i] = d[i]
        acc[i] = 0.0
    for j in range(1, m + 1):
        w = fd[j] / _FACT[j]
        for i in range(j, m + 1):
            acc[i] += w * power[i]
        if j < m:
            # power <- power * d, highest coefficient first so it can be done in place
            for i in range(m, 0, -1):
                s = 0.0
                for l in range(i):
                    s += power[l] * d[i - l]
                power[i] = s
            power[0] = 0.0
    out[0] = out0
    for i in range(1, m + 1):
        out[i] = acc[i] * _FACT[i]


@njit(cache=True)
def deriv_table(fid, u0, m, out, poly):
    """Derivatives f(u0), f'(u0), ... f^(m)(u0); poly needs 2 rows of length >= m + 2."""
    if fid == FID_SIN or fid == FID_COS:
        s = math.sin(u0)
        c = math.cos(u0)
        shift = 0 if fid == FID_SIN else 1
        for j in range(m + 1):
            r = (j + shift) % 4
            if r == 0:
                out[j] = s
            elif r == 1:
                out[j] = c
            elif r == 2:
                out[j] = -s
            else:
                out[j] = -c
    elif fid == FID_EXP:
        v = math.exp(u0) if u0 < 709.78 else np.inf
        for j in range(m + 1):
            out[j] = v
    elif fid == FID_TANH:
        y = math.tanh(u0)
        out[0] = y
        p = poly[0]
        q = poly[1]
        for i in range(m + 2):
            p[i] = 0.0
        p[1] = 1.0
        deg = 1
        for j in range(1, m + 1):
            for i in range(deg + 3):
                q[i] = 0.0
            for i in range(1, deg + 1):
                dv = i * p[i]
                q[i - 1] += dv
                q[i + 1] -= dv
            deg += 1
            for i in range(deg + 1):
                p[i] = q[i]
            acc = 0.0
            for i in range(deg, -1, -1):
                acc = acc * y + p[i]
            out[j] = acc
    elif fid == FID_ABS:
        out[0] = abs(u0)
        if m >= 1:
            out[1] = 1.0 if u0 > 0 else (-1.0 if u0 < 0 else 0.0)
        for j in range(2, m + 1):
            out[j] = 0.0
    elif fid == FID_SQRT:
        if u0 < 0:
            return ST_DOMAIN
        out[0] = math.sqrt(u0)
        if m >= 1:
            if u0 == 0.0:
                return ST_DOMAIN
            coef = 1.0
            for j in range(1, m + 1):
                coef *= 0.5 - (j - 1)
                out[j] = coef * u0 ** (0.5 - j)
    elif fid == FID_LN:
        if u0 <= 0:
            return ST_DOMAIN
        out[0] = math.log(u0)
        f = 1.0
        for j in range(1, m + 1):
            if j > 1:
                f *= j - 1
            sgn = 1.0 if (j - 1) % 2 == 0 else -1.0
            out[j] = sgn * f / u0**j
    return ST_OK


# --------------------------------------------------------------------------
# tape interpreter


@njit(cache=True)
def eval_tape(ti, tf, pwi, pwf, exs, e, X, tj, m, R, skip, W, err):
    """Evaluate expression ``e`` at order ``m``; result is R[exs[e, 1] - 1]."""
    s0 = exs[e, 0]
    s1 = exs[e, 1]
    t0 = tj[0]
    for i in range(s0, s1):
        skip[i] = 0
    for i in range(s1 - 1, s0 - 1, -1):
        if ti[i, 0] == OP_PIECE and skip[i] == 0:
            first = ti[i, 1]
            cnt = ti[i, 2]
            found = -1
            for b in range(first, first + cnt):
                lo = pwf[b, 0]
                hi = pwf[b, 1]
                ok = True
                if t0 < lo or (t0 == lo and pwi[b, 0] == 0):
                    ok = False
                if t0 > hi or (t0 == hi and pwi[b, 1] == 0):
                    ok = False
                if ok and found < 0:
                    found = b
            if found < 0:
                err[0] = ST_NOBRANCH
                err[1] = ti[i, 3]
                return ST_NOBRANCH
            for b in range(first, first + cnt):
                if b != found:
                    for k in range(pwi[b, 2], pwi[b, 3]):
                        skip[k] = 1
    for i in range(s0, s1):
        if skip[i]:
            continue
        op = ti[i, 0]
        r = R[i]
        if op == OP_CONST:
            r[0] = tf[i]
            for k in range(1, m + 1):
                r[k] = 0.0
        elif op == OP_VAR:
            xr = X[ti[i, 1]]
            for k in range(m + 1):
                r[k] = xr[k]
        elif op == OP_TIME:
            for k in range(m + 1):
                r[k] = tj[k]
        elif op == OP_NEG:
            a = R[ti[i, 1]]
            for k in range(m + 1):
                r[k] = -a[k]
        elif op == OP_ADD:
            a = R[ti[i, 1]]
            b = R[ti[i, 2]]
            for k in range(m + 1):
                r[k] = a[k] + b[k]
        elif op == OP_SUB:
            a = R[ti[i, 1]]
            b = R[ti[i, 2]]
            for k in range(m + 1):
                r[k] = a[k] - b[k]
        elif op == OP_MUL:
            j_mul(R[ti[i, 1]], R[ti[i, 2]], r, m)
        elif op == OP_DIV:
            if j_div(R[ti[i, 1]], R[ti[i, 2]], r, m) != ST_OK:
                err[0] = ST_DIV0
                err[1] = ti[i, 3]
                return ST_DIV0
        elif op == OP_IPOW:
            st = _ipow(R[ti[i, 1]], ti[i, 2], r, m, W)
            if st != ST_OK:
                err[0] = st
                err[1] = ti[i, 3]
                return st
        elif op == OP_POW:
            base = R[ti[i, 1]]
            expo = R[ti[i, 2]]
            fd = W[3]
            lnj = W[4]
            arg = W[5]
            st = deriv_table(FID_LN, base[0], m, fd, W[6:8])
            if st != ST_OK:
                err[0] = st
                err[1] = ti[i, 3]
                return st
            j_compose(fd, base, lnj, m, W[0:3])
            j_mul(expo, lnj, arg, m)
            deriv_table(FID_EXP, arg[0], m, fd, W[6:8])
            j_compose(fd, arg, r, m, W[0:3])
        elif op == OP_CALL:
            a = R[ti[i, 1]]
            fd = W[3]
            st = deriv_table(ti[i, 2], a[0], m, fd, W[6:8])
            if st != ST_OK:
                err[0] = st
                err[1] = ti[i, 3]
                return st
            j_compose(fd, a, r, m, W[0:3])
        elif op == OP_PIECE:
            first = ti[i, 1]
            for b in range(first, first + ti[i, 2]):
                res = pwi[b, 4]
                if skip[res] == 0:
                    src = R[res]
                    for k in range(m + 1):
                        r[k] = src[k]
                    break
    return ST_OK


@njit(cache=True)
def _ipow(base, k, out, m, W):
    """Binary exponentiation in the same multiplication order as the reference evaluator."""
    if k == 0:
        out[0] = 1.0
        for i in range(1, m + 1):
            out[i] = 0.0
        return ST_OK
    neg = k < 0
    if neg:
        k = -k
    b = W[8]
    res = W[9]
    tmp = W[10]
    for i in range(m + 1):
        b[i] = base[i]
    have = False
    while k:
        if k & 1:
            if not have:
                for i in range(m + 1):
                    res[i] = b[i]
                have = True
            else:
                j_mul(res, b, tmp, m)
                for i in range(m + 1):
                    res[i] = tmp[i]
        k >>= 1
        if k:
            j_mul(b, b, tmp, m)
            for i in range(m + 1):
                b[i] = tmp[i]
    if neg:
        one = W[11]
        one[0] = 1.0
        for i in range(1, m + 1):
            one[i] = 0.0
        return j_div(one, res, out, m)
    for i in range(m + 1):
        out[i] = res[i]
    return ST_OK


# --------------------------------------------------------------------------
# projection


@njit(cache=True)
def kappa_scalar(P, a, b, c):
    if P >= b + c:
        return b - P
    if P > b:
        return (b - P) * (0.5 * (1.0 + math.tanh(1.0 / (b - P) + 1.0 / (b + c - P))))
    if P >= a:
        return 0.0
    if P > a - c:
        return (a - P) * (0.5 * (1.0 - math.tanh(1.0 / (a - c - P) + 1.0 / (a - P))))
    return a - P


@njit(cache=True)
def _switch_jet(P, lo, hi, sgn, m, out, W):
    # inner = 1/(lo - P) + 1/(hi - P)
    one = W[12]
    d1 = W[13]
    r1 = W[14]
    r2 = W[15]
    inner = W[16]
    one[0] = 1.0
    for i in range(1, m + 1):
        one[i] = 0.0
    d1[0] = lo - P[0]
    for i in range(1, m + 1):
        d1[i] = -P[i]
    j_div(one, d1, r1, m)
    d1[0] = hi - P[0]
    j_div(one, d1, r2, m)
    for i in range(m + 1):
        inner[i] = r1[i] + r2[i]
    u0 = inner[0]
    if abs(u0) > _TANH_FLAT:
        out[0] = 0.5 * (1.0 + sgn * math.tanh(u0))
        for i in range(1, m + 1):
            out[i] = 0.0
        return
    fd = W[3]
    deriv_table(FID_TANH, u0, m, fd, W[6:8])
    th = W[17]
    j_compose(fd, inner, th, m, W[0:3])
    out[0] = 0.5 * (1.0 + sgn * th[0])
    for i in range(1, m + 1):
        out[i] = 0.5 * (sgn * th[i])


@njit(cache=True)
def kappa_jet(P, a, b, c, m, out, W):
    P0 = P[0]
    if P0 >= b + c:
        out[0] = b - P0
        for i in range(1, m + 1):
            out[i] = -P[i]
    elif P0 > b:
        sw = W[18]
        _switch_jet(P, b, b + c, 1.0, m, sw, W)
        lin = W[19]
        lin[0] = b - P0
        for i in range(1, m + 1):
            lin[i] = -P[i]
        j_mul(lin, sw, out, m)
    elif P0 >= a:
        for i in range(m + 1):
            out[i] = 0.0
    elif P0 > a - c:
        sw = W[18]
        _switch_jet(P, a - c, a, -1.0, m, sw, W)
        lin = W[19]
        lin[0] = a - P0
        for i in range(1, m + 1):
            lin[i] = -P[i]
        j_mul(lin, sw, out, m)
    else:
        out[0] = a - P0
        for i in range(1, m + 1):
            out[i] = -P[i]


# --------------------------------------------------------------------------
# cascade


@njit(cache=True)
def cascade(
    ti, tf, pwi, pwf, exs,
    mi, sub_j, sub_off, reg_ex, gain_ex,
    theta_true, theta_fixed, adapt_idx, proj, lam, delta,
    t, y,
    X, R, skip, W, S, Yr,
    xd_out, e_out, g_out, s_out, th_out, rate_out, gam_out, err,
):
    """One evaluation of the control cascade at (t, y).

    Fills the desired values, errors, gains, connectors, estimates in use,
    estimate rates and order-0 regressor values; returns u via S[0, 0].
    """
    n = mi[0]
    traj_e = mi[1]
    tj = S[0]
    tj[0] = t
    tj[1] = 1.0
    for i in range(2, n + 1):
        tj[i] = 0.0

    # triangular state jets: x_k to order n - k
    for k in range(n):
        X[k, 0] = y[k]
    for i in range(n - 1):
        for k in range(n - i - 1):
            acc = S[1]
            j = sub_j[k]
            off = sub_off[k]
            ge = gain_ex[k]
            st = eval_tape(ti, tf, pwi, pwf, exs, ge, X, tj, i, R, skip, W, err)
            if st != ST_OK:
                return st
            j_mul(R[exs[ge, 1] - 1], X[k + 1], acc, i)
            for z in range(1, j):
                re = reg_ex[off + z]
                st = eval_tape(ti, tf, pwi, pwf, exs, re, X, tj, i, R, skip, W, err)
                if st != ST_OK:
                    return st
                rr = R[exs[re, 1] - 1]
                th = theta_true[off + z]
                for q in range(i + 1):
                    acc[q] += th * rr[q]
            X[k, i + 1] = acc[i] / theta_true[off]

    # reference jet, order n
    st = eval_tape(ti, tf, pwi, pwf, exs, traj_e, X, tj, n, R, skip, W, err)
    if st != ST_OK:
        return st
    xd = S[2]
    src = R[exs[traj_e, 1] - 1]
    for i in range(n + 1):
        xd[i] = src[i]

    e = S[3]
    eprev = S[4]
    gprev = S[5]
    rhs = S[6]
    tmp = S[7]
    pj = S[8]
    Pj = S[9]
    kj = S[10]
    gj = S[11]
    nxt = S[12]
    dprod = 1.0
    for k in range(n):
        m = n - k - 1
        j = sub_j[k]
        off = sub_off[k]
        for i in range(m + 1):
            e[i] = xd[i] - X[k, i]
        # regressor row
        for i in range(m + 1):
            Yr[0, i] = xd[i + 1]
        for z in range(1, j):
            re = reg_ex[off + z]
            st = eval_tape(ti, tf, pwi, pwf, exs, re, X, tj, m, R, skip, W, err)
            if st != ST_OK:
                return st
            rr = R[exs[re, 1] - 1]
            for i in range(m + 1):
                Yr[z, i] = -rr[i]
            gam_out[off + z] = rr[0]
        for i in range(m + 1):
            rhs[i] = 0.0
        for z in range(j):
            pidx = off + z
            ai = adapt_idx[pidx]
            if ai >= 0:
                P0 = y[ai]
                rho = proj[pidx, 0]
                sig = proj[pidx, 1]
                pa = proj[pidx, 2]
                pb = proj[pidx, 3]
                pc = proj[pidx, 4]
                j_mul(e, Yr[z], pj, m)
                Pj[0] = P0
                for i in range(m):
                    kappa_jet(Pj, pa, pb, pc, i, kj, W)
                    Pj[i + 1] = rho * (pj[i] + sig * kj[i])
                rate_out[pidx] = rho * (pj[0] + sig * kappa_scalar(P0, pa, pb, pc))
                th_out[pidx] = P0
            else:
                v = theta_fixed[pidx]
                Pj[0] = v
                for i in range(1, m + 1):
                    Pj[i] = 0.0
                rate_out[pidx] = 0.0
                th_out[pidx] = v
            j_mul(Yr[z], Pj, tmp, m)
            for i in range(m + 1):
                rhs[i] += tmp[i]
        for i in range(m + 1):
            rhs[i] += lam[k] * e[i]
        if k > 0:
            j_mul(gprev, eprev, tmp, m)
            dk = delta[k - 1]
            for i in range(m + 1):
                rhs[i] += dk * tmp[i]
        ge = gain_ex[k]
        st = eval_tape(ti, tf, pwi, pwf, exs, ge, X, tj, m, R, skip, W, err)
        if st != ST_OK:
            return st
        gsrc = R[exs[ge, 1] - 1]
        for i in range(m + 1):
            gj[i] = gsrc[i]
        if not abs(gj[0]) > GAIN_EPS:
            err[0] = ST_GAIN
            err[1] = k + 1
            return ST_GAIN
        j_div(rhs, gj, nxt, m)
        for i in range(m + 1):
            if not math.isfinite(nxt[i]):
                err[0] = ST_NONFINITE
                err[1] = k + 2
                return ST_NONFINITE
        xd_out[k] = xd[0]
        e_out[k] = e[0]
        g_out[k] = gj[0]
        if k > 0:
            s_out[k - 1] = g_out[k - 1] * e_out[k - 1] * e[0] / dprod
            dprod *= delta[k - 1]
        for i in range(m + 1):
            eprev[i] = e[i]
            gprev[i] = gj[i]
            xd[i] = nxt[i]
    S[0, 0] = xd[0]
    return ST_OK


@njit(cache=True)
def _deriv(
    ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
    theta_true, theta_fixed, adapt_idx, proj, lam, delta,
    t, y, dy, X, R, skip, W, S, Yr,
    xd_out, e_out, g_out, s_out, th_out, rate_out, gam_out, err,
):
    st = cascade(
        ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
        theta_true, theta_fixed, adapt_idx, proj, lam, delta,
        t, y, X, R, skip, W, S, Yr,
        xd_out, e_out, g_out, s_out, th_out, rate_out, gam_out, err,
    )
    if st != ST_OK:
        return st
    n = mi[0]
    u = S[0, 0]
    for k in range(n):
        off = sub_off[k]
        f = 0.0
        for z in range(1, sub_j[k]):
            f += theta_true[off + z] * gam_out[off + z]
        nxt = y[k + 1] if k < n - 1 else u
        dy[k] = (f + g_out[k] * nxt) / theta_true[off]
    for p in range(adapt_idx.shape[0]):
        ai = adapt_idx[p]
        if ai >= 0:
            dy[ai] = rate_out[p]
    return ST_OK


@njit(cache=True, nogil=True)
def integrate(
    ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
    theta_true, theta_fixed, adapt_idx, proj, lam, delta, inv_rho,
    y0, dt, nsteps, stride, method,
    rec_t, rec_x, rec_xd, rec_e, rec_u, rec_th, rec_s, rec_nu, err, errf,
):
    n = mi[0]
    ny = y0.shape[0]
    P = theta_true.shape[0]
    N = ti.shape[0]
    R = np.zeros((max(N, 1), M))
    skip = np.zeros(max(N, 1), dtype=np.int8)
    W = np.zeros((20, M + 2))
    S = np.zeros((13, M + 1))
    X = np.zeros((n, M + 1))
    jmax = 1
    for k in range(n):
        jmax = max(jmax, sub_j[k])
    Yr = np.zeros((jmax, M + 1))
    xd = np.zeros(n)
    e = np.zeros(n)
    g = np.zeros(n)
    s = np.zeros(max(n - 1, 1))
    th = np.zeros(P)
    rate = np.zeros(P)
    gam = np.zeros(P)
    y = y0.copy()
    yt = np.zeros(ny)
    k1 = np.zeros(ny)
    k2 = np.zeros(ny)
    k3 = np.zeros(ny)
    k4 = np.zeros(ny)
    dpro = np.ones(n)
    for k in range(1, n):
        dpro[k] = dpro[k - 1] * delta[k - 1]
    row = 0
    for step in range(nsteps + 1):
        t = step * dt
        st = _deriv(ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
                    theta_true, theta_fixed, adapt_idx, proj, lam, delta,
                    t, y, k1, X, R, skip, W, S, Yr, xd, e, g, s, th, rate, gam, err)
        if st != ST_OK:
            errf[0] = t
            return st, row
        if step % stride == 0:
            rec_t[row] = t
            nu = 0.0
            for k in range(n):
                rec_x[row, k] = y[k]
                rec_xd[row, k] = xd[k]
                rec_e[row, k] = e[k]
                off = sub_off[k]
                part = theta_true[off] * e[k] * e[k]
                for z in range(sub_j[k]):
                    d = theta_true[off + z] - th[off + z]
                    part += inv_rho[off + z] * d * d
                nu += 0.5 * part / dpro[k]
            rec_u[row] = S[0, 0]
            for p in range(P):
                rec_th[row, p] = th[p]
            for k in range(n - 1):
                rec_s[row, k] = s[k]
            rec_nu[row] = nu
            row += 1
        if step == nsteps:
            break
        if method == 0:
            for i in range(ny):
                y[i] = y[i] + dt * k1[i]
        else:
            h2 = 0.5 * dt
            for i in range(ny):
                yt[i] = y[i] + h2 * k1[i]
            st = _deriv(ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
                        theta_true, theta_fixed, adapt_idx, proj, lam, delta,
                        t + h2, yt, k2, X, R, skip, W, S, Yr, xd, e, g, s, th, rate, gam, err)
            if st != ST_OK:
                errf[0] = t + h2
                return st, row
            for i in range(ny):
                yt[i] = y[i] + h2 * k2[i]
            st = _deriv(ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
                        theta_true, theta_fixed, adapt_idx, proj, lam, delta,
                        t + h2, yt, k3, X, R, skip, W, S, Yr, xd, e, g, s, th, rate, gam, err)
            if st != ST_OK:
                errf[0] = t + h2
                return st, row
            for i in range(ny):
                yt[i] = y[i] + dt * k3[i]
            st = _deriv(ti, tf, pwi, pwf, exs, mi, sub_j, sub_off, reg_ex, gain_ex,
                        theta_true, theta_fixed, adapt_idx, proj, lam, delta,
                        t + dt, yt, k4, X, R, skip, W, S, Yr, xd, e, g, s, th, rate, gam, err)
            if st != ST_OK:
                errf[0] = t + dt
                return st, row
            for i in range(ny):
                y[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(ny):
            if not math.isfinite(y[i]):
                err[0] = ST_NONFINITE
                err[1] = -(i + 1)
                errf[0] = (step + 1) * dt
                return ST_NONFINITE, row
    return ST_OK, row


# --------------------------------------------------------------------------
# Python-side packing


@dataclass
class CompiledProblem:
    """Flat arrays describing model, controller and reference for the kernel."""

    tape: Tape
    mi: np.ndarray
    sub_j: np.ndarray
    sub_off: np.ndarray
    reg_ex: np.ndarray
    gain_ex: np.ndarray
    theta_true: np.ndarray
    theta_fixed: np.ndarray
    adapt_idx: np.ndarray
    proj: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    inv_rho: np.ndarray
    adapted: list  # (k, zeta) per extra state, in y order

    @property
    def n(self) -> int:
        return int(self.mi[0])

    def args(self):
        tp = self.tape
        return (
            tp.ti, tp.tf, tp.pwi, tp.pwf, tp.ex,
            self.mi, self.sub_j, self.sub_off, self.reg_ex, self.gain_ex,
            self.theta_true, self.theta_fixed, self.adapt_idx, self.proj, self.lam, self.delta,
        )


def compile_problem(model: SffModel, cfg: ControllerConfig, trajectory) -> CompiledProblem:
    cfg = cfg.bind(model)
    if ex.state_indices(trajectory):
        raise ValueError("reference trajectory may depend on t only")
    n = model.n
    nodes = []
    reg_ex, gain_ex = [], []
    sub_j, sub_off = [], [0]
    theta_true, theta_fixed = [], []
    adapt_idx, proj, inv_rho = [], [], []
    adapted = cfg.adapted_params()
    for k, sub in enumerate(model.subsystems, start=1):
        sub_j.append(sub.j)
        sub_off.append(sub_off[-1] + sub.j)
        gain_ex.append(len(nodes))
        nodes.append(sub.gain)
        for z in range(1, sub.j + 1):
            if z == 1:
                reg_ex.append(-1)
            else:
                reg_ex.append(len(nodes))
                nodes.append(sub.regressors[z - 2])
            theta_true.append(sub.theta[z - 1])
            theta_fixed.append(cfg.fixed_theta[k - 1][z - 1])
            spec = cfg.adapt.get((k, z))
            if spec is not None:
                pr = spec.projection
                proj.append((pr.rho, pr.sigma, pr.a, pr.b, pr.c))
                inv_rho.append(1.0 / pr.rho)
            else:
                proj.append((1.0, 1.0, 1.0, 1.0, 0.5))
                inv_rho.append(0.0)
            adapt_idx.append(n + adapted.index((k, z)) if (k, z) in adapted else -1)
    traj_e = len(nodes)
    nodes.append(trajectory)
    delta = list(cfg.delta) + [0.0]
    return CompiledProblem(
        tape=compile_exprs(nodes),
        mi=np.array([n, traj_e], dtype=np.int64),
        sub_j=np.array(sub_j, dtype=np.int64),
        sub_off=np.array(sub_off, dtype=np.int64),
        reg_ex=np.array(reg_ex, dtype=np.int64),
        gain_ex=np.array(gain_ex, dtype=np.int64),
        theta_true=np.array(theta_true, dtype=np.float64),
        theta_fixed=np.array(theta_fixed, dtype=np.float64),
        adapt_idx=np.array(adapt_idx, dtype=np.int64),
        proj=np.array(proj, dtype=np.float64).reshape(-1, 5),
        lam=np.array(cfg.lam, dtype=np.float64),
        delta=np.array(delta, dtype=np.float64),
        inv_rho=np.array(inv_rho, dtype=np.float64),
        adapted=adapted,
    )


def raise_status(status: int, err: np.ndarray, t: float, prob: CompiledProblem) -> None:
    if status == ST_OK:
        return
    info = int(err[1])
    if status == ST_GAIN:
        raise GainTooSmallError(info, float("nan"), t)
    if status == ST_NONFINITE:
        if info < 0:
            i = -info - 1
            ch = f"x{i + 1}" if i < prob.n else "theta_{}_{}".format(*prob.adapted[i - prob.n])
            raise NonFiniteError(f"non-finite state {ch} at t={t:.6g}", t, ch)
        raise NonFiniteError(f"non-finite fictitious control x{info}d at t={t:.6g}", t, f"x{info}d")
    msg = {
        ST_DIV0: "division by zero",
        ST_DOMAIN: "function argument outside its domain",
        ST_NOBRANCH: "no piecewise branch covers t",
    }.get(status, f"kernel status {status}")
    raise ExprEvalError(f"{msg} at t={t:.6g}", info)


def evaluate(prob: CompiledProblem, t: float, y) -> dict:
    """Run the compiled cascade once; returns the quantities it produces."""
    n = prob.n
    P = prob.theta_true.shape[0]
    y = np.asarray(y, dtype=np.float64)
    N = max(prob.tape.ti.shape[0], 1)
    jmax = int(prob.sub_j.max())
    out = dict(
        xd=np.zeros(n), e=np.zeros(n), g=np.zeros(n), s=np.zeros(max(n - 1, 1)),
        theta_hat=np.zeros(P), rate=np.zeros(P), gamma=np.zeros(P),
    )
    err = np.zeros(4, dtype=np.int64)
    S = np.zeros((13, M + 1))
    dy = np.zeros(y.shape[0])
    st = _deriv(
        *prob.args(), float(t), y, dy,
        np.zeros((n, M + 1)), np.zeros((N, M)), np.zeros(N, dtype=np.int8), np.zeros((20, M + 2)),
        S, np.zeros((jmax, M + 1)),
        out["xd"], out["e"], out["g"], out["s"], out["theta_hat"], out["rate"], out["gamma"], err,
    )
    raise_status(st, err, t, prob)
    out["u"] = S[0, 0]
    out["s"] = out["s"][: n - 1]
    out["dy"] = dy
    return out


def eval_expression_jet(node, t_jet, x_jets, order: int) -> np.ndarray:
    """Evaluate one expression through the tape interpreter (used for cross-checks)."""
    tape = compile_exprs([node])
    n = max(len(x_jets), 1)
    X = np.zeros((n, M + 1))
    for k, j in enumerate(x_jets):
        X[k, : len(j)] = list(j)
    tj = np.zeros(M + 1)
    tj[: len(t_jet)] = list(t_jet)
    N = max(tape.ti.shape[0], 1)
    R = np.zeros((N, M))
    err = np.zeros(4, dtype=np.int64)
    st = eval_tape(tape.ti, tape.tf, tape.pwi, tape.pwf, tape.ex, 0, X, tj, order,
                   R, np.zeros(N, dtype=np.int8), np.zeros((20, M + 2)), err)
    if st != ST_OK:
        raise_status(st, err, float(tj[0]), None)
    return R[tape.ex[0, 1] - 1, : order + 1].copy()
