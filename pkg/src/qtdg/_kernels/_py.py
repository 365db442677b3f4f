"""Pure-numpy monomial table kernels (fallback backend).

Monomials are indexed in graded order; the recurrence tables produced by
``multiindex.monomial_links`` let each column be one multiply of an earlier
column, which beats repeated ``**`` for the many-points case.
"""

from __future__ import annotations

import numpy as np


def monomial_values(scaled, parent, axis):
    """Values of all graded monomials at scaled points.

    scaled : (n, d) float array of (x - center)/h coordinates
    returns (n, M) with column t = prod_a scaled[:, a]**k_a for exponent k(t).
    """
    n = scaled.shape[0]
    m = parent.shape[0]
    vals = np.empty((n, m), dtype=np.float64)
    vals[:, 0] = 1.0
    for t in range(1, m):
        np.multiply(vals[:, parent[t]], scaled[:, axis[t]], out=vals[:, t])
    return vals


def monomial_tables(scaled, parent, axis, down, kval):
    """Values and scaled-coordinate derivatives of all graded monomials.

    returns (vals (n, M), derivs (n, M, d)); derivs[:, t, a] is the partial
    derivative with respect to the *scaled* coordinate a (divide by h for the
    physical gradient).
    """
    vals = monomial_values(scaled, parent, axis)
    n, m = vals.shape
    d = scaled.shape[1]
    derivs = np.zeros((n, m, d), dtype=np.float64)
    for t in range(1, m):
        for a in range(d):
            src = down[t, a]
            if src >= 0:
                np.multiply(vals[:, src], kval[t, a], out=derivs[:, t, a])
    return vals, derivs
