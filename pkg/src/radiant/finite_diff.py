"""Central finite-difference stencils with Richardson extrapolation."""

from math import factorial

import numpy as np


def central_weights(deriv: int, accuracy: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the centered stencil for d^deriv/dx^deriv.

    The stencil has formal order ``accuracy`` (even) in the step size.
    """
    half = (deriv + 1) // 2 - 1 + accuracy // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    n = offsets.size
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[deriv] = factorial(deriv)
    return offsets, np.linalg.solve(vander, rhs)


def derivative(f, x, deriv: int = 1, h: float = 1e-2, accuracy: int = 4,
               richardson: bool = True) -> np.ndarray:
    """Elementwise derivative of a vectorized scalar function ``f``.

    ``f`` maps an array of abscissae to an array of the same leading shape
    (trailing axes allowed). One Richardson step lifts the order by two.
    """
    if deriv == 0:
        return np.asarray(f(np.asarray(x, dtype=float)))
    offsets, weights = central_weights(deriv, accuracy)
    x = np.asarray(x, dtype=float)

    def stencil(step):
        vals = [np.asarray(f(x + o * step)) for o in offsets]
        return sum(w * v for w, v in zip(weights, vals)) / step**deriv

    coarse = stencil(h)
    if not richardson:
        return coarse
    fine = stencil(h / 2)
    gain = 2.0**accuracy
    return (gain * fine - coarse) / (gain - 1.0)
