"""Fused elementwise loops for the mish layers (numba).

tanh(softplus(x)) is evaluated as num/den with e = exp(-|x|):
x >= 0: num = 1 + 2e,     den = num + 2e^2
x <  0: num = e^2 + 2e,   den = num + 2
which never overflows and gives 1 - tanh^2 and the logistic function without
cancellation. Every kernel uses the same expression for the value so all
evaluation paths agree bit for bit.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _parts(x):
    e = np.exp(-abs(x))
    e2 = e * e
    if x >= 0.0:
        num = 1.0 + 2.0 * e
        den = num + 2.0 * e2
        w = e2
        sn = 1.0
    else:
        num = e2 + 2.0 * e
        den = num + 2.0
        w = 1.0
        sn = e
    t = num / den
    ope = 1.0 + e
    s = 4.0 * ope * ope * w / (den * den)  # 1 - t^2
    sig = sn / ope  # logistic(x)
    return t, s, sig


@njit(cache=True)
def mish_value(x):
    out = np.empty_like(x)
    xf = x.ravel()
    of = out.ravel()
    for k in range(xf.size):
        xv = xf[k]
        t, _, _ = _parts(xv)
        of[k] = xv * t
    return out


@njit(cache=True)
def mish_derivs(x):
    f = np.empty_like(x)
    d1 = np.empty_like(x)
    d2 = np.empty_like(x)
    xf = x.ravel()
    ff = f.ravel()
    f1 = d1.ravel()
    f2 = d2.ravel()
    for k in range(xf.size):
        xv = xf[k]
        t, s, sig = _parts(xv)
        ff[k] = xv * t
        f1[k] = t + xv * s * sig
        f2[k] = s * sig * (2.0 - 2.0 * xv * t * sig + xv * (1.0 - sig))
    return f, d1, d2


@njit(cache=True)
def hidden_forward(z, dz):
    """Activation, output tangents and mish derivatives for one hidden layer.

    ``z`` is ``(n, w)``, ``dz`` is ``(2, n, w)``.
    """
    n, w = z.shape
    a = np.empty_like(z)
    D = np.empty_like(dz)
    d1 = np.empty_like(z)
    d2 = np.empty_like(z)
    for i in range(n):
        for j in range(w):
            xv = z[i, j]
            t, s, sig = _parts(xv)
            a[i, j] = xv * t
            g1 = t + xv * s * sig
            d1[i, j] = g1
            d2[i, j] = s * sig * (2.0 - 2.0 * xv * t * sig + xv * (1.0 - sig))
            D[0, i, j] = g1 * dz[0, i, j]
            D[1, i, j] = g1 * dz[1, i, j]
    return a, D, d1, d2


@njit(cache=True)
def hidden_backward(g_act, g_Dact, d1, d2, dz):
    """Adjoints of a hidden layer's pre-activation and its tangents."""
    n, w = g_act.shape
    g_z = np.empty_like(g_act)
    g_dz = np.empty_like(g_Dact)
    for i in range(n):
        for j in range(w):
            c1 = d1[i, j]
            g_z[i, j] = g_act[i, j] * c1 + d2[i, j] * (g_Dact[0, i, j] * dz[0, i, j]
                                                      + g_Dact[1, i, j] * dz[1, i, j])
            g_dz[0, i, j] = g_Dact[0, i, j] * c1
            g_dz[1, i, j] = g_Dact[1, i, j] * c1
    return g_z, g_dz
