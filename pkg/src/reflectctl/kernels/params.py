"""Flat float64 encoding of a problem for the path kernels.

Layout::

    0 a1   1 b11   2 b22   3 sigma   4 sigma kind
    5 Q11  6 Q12   7 Q22                      quadratic part of the cost
    8..11  curve in x1, 12..15 curve in x2    (kind, p0, p1, p2)
    16..19 phi: drift of x2 is phi(x1) + b22 x2
    20 rho  21 kappa_plus  22 kappa_minus

Curve kind 0 is ``p0 + p1 y + p2 y^2``; kind 1 is ``p0 softplus(y - p1) + p2 y``.
"""
import numpy as np

A1, B11, B22, SIG, SIG_KIND = 0, 1, 2, 3, 4
Q11, Q12, Q22 = 5, 6, 7
C1, C2, PHI = 8, 12, 16
RHO, K_PLUS, K_MINUS = 20, 21, 22
SIZE = 23

SIG_CONST, SIG_LINEAR, SIG_DEGENERATE = 0, 1, 2


def _curve(curve):
    from ..model import Quadratic

    if curve is None:
        return [0.0, 0.0, 0.0, 0.0]
    if isinstance(curve, Quadratic):
        return [0.0, curve.c0, curve.c1, curve.c2]
    return [1.0, curve.scale, curve.shift, curve.slope]


def encode(spec) -> np.ndarray:
    from ..model import (
        Affine, Constant, DiffSquare, Linear, Quadratic, Separable, SumSquare, SumSquares, TargetPlusConvex,
    )

    p = np.zeros(SIZE)
    p[A1], p[B11] = spec.a1, spec.b11
    d2 = spec.drift2
    if isinstance(d2, Affine):
        p[PHI : PHI + 4] = _curve(Quadratic(d2.a2, d2.b12, 0.0))
    else:
        p[PHI : PHI + 4] = _curve(d2.phi)
    p[B22] = d2.b22
    p[SIG] = spec.sigma_kind.sigma
    p[SIG_KIND] = (
        SIG_CONST if isinstance(spec.sigma_kind, Constant) else SIG_LINEAR if isinstance(spec.sigma_kind, Linear)
        else SIG_DEGENERATE
    )
    c = spec.cost
    c1 = c2 = None
    if isinstance(c, SumSquares):
        q = (1.0, 0.0, 1.0)
    elif isinstance(c, DiffSquare):
        q = (1.0, -2.0, 1.0)
    elif isinstance(c, SumSquare):
        q = (1.0, 2.0, 1.0)
    elif isinstance(c, TargetPlusConvex):
        q = (1.0, 0.0, 0.0)
        c1 = Quadratic(c.target**2, -2 * c.target, 0.0)
        c2 = c.f
    elif isinstance(c, Separable):
        q = (0.0, 0.0, 0.0)
        c1, c2 = c.h1, c.h2
    else:
        raise TypeError(f"unsupported cost {type(c).__name__}")
    p[Q11], p[Q12], p[Q22] = q
    p[C1 : C1 + 4] = _curve(c1)
    p[C2 : C2 + 4] = _curve(c2)
    p[RHO], p[K_PLUS], p[K_MINUS] = spec.rho, spec.kappa_plus, spec.kappa_minus
    return p
