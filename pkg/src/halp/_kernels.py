"""Compiled per-example gradients and inner loops.

Parameters are always handled as d x C arrays (C == 1 for squared loss).
Loss family codes: 0 = squared, 1 = softmax cross-entropy.
"""
import numpy as np
from numba import njit

from .fixed_point import quantize_code
from .rng import next_double, next_index

SQUARED = 0
SOFTMAX = 1

OK = 0
NONFINITE = 1


@njit(cache=True)
def margins(X, i, W, out):
    d, C = W.shape
    for c in range(C):
        s = 0.0
        for j in range(d):
            s += X[i, j] * W[j, c]
        out[c] = s


@njit(cache=True)
def loss_derivative(family, m, yi, out):
    """d l_i / d margin, written to ``out`` (length C)."""
    C = m.shape[0]
    if family == SQUARED:
        out[0] = m[0] - yi
        return
    mx = m[0]
    for c in range(1, C):
        if m[c] > mx:
            mx = m[c]
    tot = 0.0
    for c in range(C):
        out[c] = np.exp(m[c] - mx)
        tot += out[c]
    for c in range(C):
        out[c] = out[c] / tot
    out[np.int64(yi)] -= 1.0


@njit(cache=True)
def component_grad(X, y, lam, family, W, i, m, s, out):
    margins(X, i, W, m)
    loss_derivative(family, m, y[i], s)
    d, C = W.shape
    for j in range(d):
        xij = X[i, j]
        for c in range(C):
            out[j, c] = s[c] * xij + lam * W[j, c]


@njit(cache=True)
def inner_loop(X, y, lam, family, base, v, anchor, g_anchor, alpha, T,
               vr, quant, delta, lo, hi, snap_t, idx_state, q_state,
               codes, snap):
    """Run T stochastic steps on the stored variable ``v`` (in place).

    The gradient is evaluated at ``base + v``.  With ``vr`` the direction is
    grad_i(base + v) - grad_i(anchor) + g_anchor (SVRG form), otherwise
    grad_i(base + v).  With ``quant`` every new ``v`` is stochastically
    rounded onto (delta, lo..hi) and its codes kept in ``codes``.  If
    ``snap_t >= 0`` the value of ``v`` after ``snap_t`` steps is copied to
    ``snap``.
    """
    N = X.shape[0]
    d, C = v.shape
    p = np.empty((d, C))
    g1 = np.empty((d, C))
    g2 = np.empty((d, C))
    m = np.empty(C)
    s = np.empty(C)
    flo = np.float64(lo)
    fhi = np.float64(hi)
    for t in range(T):
        if t == snap_t:
            snap[:, :] = v
        i = next_index(idx_state, N)
        for j in range(d):
            for c in range(C):
                p[j, c] = base[j, c] + v[j, c]
        component_grad(X, y, lam, family, p, i, m, s, g1)
        if vr:
            component_grad(X, y, lam, family, anchor, i, m, s, g2)
        bad = False
        for j in range(d):
            for c in range(C):
                if vr:
                    direction = g1[j, c] - g2[j, c] + g_anchor[j, c]
                else:
                    direction = g1[j, c]
                u = v[j, c] - alpha * direction
                if quant:
                    r = next_double(q_state)
                    if not np.isfinite(u):
                        bad = True
                        continue
                    k = quantize_code(u, delta, flo, fhi, r)
                    if k > hi:
                        k = hi
                    codes[j, c] = k
                    v[j, c] = k * delta
                else:
                    if not np.isfinite(u):
                        bad = True
                    v[j, c] = u
        if bad:
            return NONFINITE
    if snap_t == T:
        snap[:, :] = v
    return OK
