"""Adaptive Simpson integration with interior breakpoints.

Hand-rolled on purpose: the integrands here are piecewise smooth with kinks at
known cell boundaries (the min inside the exponential tilt), so the caller
passes those as breakpoints and each smooth piece is integrated adaptively.
Callers that need log-scale results evaluate exp(log_integrand - shift) and
add the shift back; the shift keeps the integrand near unit scale so the
absolute tolerance is meaningful.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Tuple

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive refinement hit its depth budget before reaching tolerance."""

    def __init__(self, msg: str, value: float, error_estimate: float):
        super().__init__(f"{msg} (value={value!r}, error_estimate={error_estimate!r})")
        self.value = value
        self.error_estimate = error_estimate


def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
    return (h / 6.0) * (fa + 4.0 * fm + fb)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 48) -> Tuple[float, float]:
    """Integrate f over [a, b] to absolute tolerance tol.

    Returns (value, error_estimate). Raises QuadratureError when a subinterval
    exhausts max_depth bisections and the accumulated estimate exceeds tol.
    """
    if not (b > a):
        return 0.0, 0.0
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = _simpson(fa, fm, fb, b - a)
    total = 0.0
    err_total = 0.0
    failed = False
    # explicit stack: (a, m, b, fa, fm, fb, whole, tol, depth)
    stack = [(a, m, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a0, m0, b0, fa0, fm0, fb0, whole0, tol0, depth = stack.pop()
        lm = 0.5 * (a0 + m0)
        rm = 0.5 * (m0 + b0)
        flm, frm = f(lm), f(rm)
        left = _simpson(fa0, flm, fm0, m0 - a0)
        right = _simpson(fm0, frm, fb0, b0 - m0)
        delta = left + right - whole0
        if abs(delta) <= 15.0 * tol0 or depth >= max_depth:
            total += left + right + delta / 15.0
            err_total += abs(delta) / 15.0
            if depth >= max_depth and abs(delta) > 15.0 * tol0:
                failed = True
        else:
            stack.append((a0, lm, m0, fa0, flm, fm0, left, 0.5 * tol0, depth + 1))
            stack.append((m0, rm, b0, fm0, frm, fb0, right, 0.5 * tol0, depth + 1))
    if failed and err_total > tol:
        raise QuadratureError("adaptive Simpson did not converge", total, err_total)
    return total, err_total


def integrate_with_breakpoints(f: Callable[[float], float], a: float, b: float,
                               breakpoints: Iterable[float] = (),
                               tol: float = 1e-10, max_depth: int = 48) -> Tuple[float, float]:
    """Integrate over [a, b], forcing panel edges at the interior breakpoints."""
    pts = [a, b]
    for p in breakpoints:
        p = float(p)
        if a < p < b and math.isfinite(p):
            pts.append(p)
    pts = sorted(set(pts))
    nseg = len(pts) - 1
    value = 0.0
    err = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = adaptive_simpson(f, lo, hi, tol / max(nseg, 1), max_depth)
        value += v
        err += e
    return value, err


def composite_simpson_weights(a: float, b: float, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed-grid composite Simpson: returns (nodes, weights) for `panels` panels.

    panels must be even; nodes has panels+1 entries. Exact for cubics; error on
    piecewise-smooth integrands falls like h^3 per kink, which the dual solver
    tolerates because it re-evaluates the final normalizer adaptively.
    """
    if panels < 2 or panels % 2 != 0:
        raise ValueError(f"panels must be an even integer >= 2, got {panels}")
    if not (b > a):
        raise ValueError(f"need b > a, got [{a}, {b}]")
    nodes = np.linspace(a, b, panels + 1)
    h = (b - a) / panels
    w = np.full(panels + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return nodes, w * (h / 3.0)
