"""Symmetric quadrature rules on the reference triangle (0,0)-(1,0)-(0,1).

Weights sum to the reference area 1/2.  `rule(degree)` returns the
cheapest stored rule that integrates polynomials of that total degree
exactly; rules up to degree 5 are provided.
"""

from __future__ import annotations

import numpy as np

_RULES = {}


def _register(degree, points, weights):
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    assert abs(w.sum() - 0.5) < 1e-14
    _RULES[degree] = (pts, w)


_register(1, [[1 / 3, 1 / 3]], [0.5])

_register(2, [[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]], [1 / 6] * 3)

# 6-point rule, exact through degree 4
_a1, _a2 = 0.091576213509771, 0.445948490915965
_w1, _w2 = 0.109951743655322 / 2, 0.223381589678011 / 2
_register(4, [[1 - 2 * _a1, _a1], [_a1, 1 - 2 * _a1], [_a1, _a1],
              [1 - 2 * _a2, _a2], [_a2, 1 - 2 * _a2], [_a2, _a2]],
          [_w1, _w1, _w1, _w2, _w2, _w2])

# 7-point rule, exact through degree 5
_b1, _b2 = 0.470142064105115, 0.101286507323456
_v1, _v2 = 0.132394152788506 / 2, 0.125939180544827 / 2
_register(5, [[1 / 3, 1 / 3],
              [1 - 2 * _b1, _b1], [_b1, 1 - 2 * _b1], [_b1, _b1],
              [1 - 2 * _b2, _b2], [_b2, 1 - 2 * _b2], [_b2, _b2]],
          [0.225 / 2, _v1, _v1, _v1, _v2, _v2, _v2])

DEFAULT_DEGREE = 5


def rule(degree):
    """Points (n, 2) and weights (n,) exact for polynomials of `degree`."""
    for d in sorted(_RULES):
        if d >= degree:
            return _RULES[d]
    raise ValueError("no quadrature rule of degree %d available" % degree)


def gauss_segment(n=3):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
