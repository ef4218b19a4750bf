"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    n_evals: int
    converged: bool
    message: str
    history: list[float] = field(default_factory=list)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating (a, fa, da), (b, fb, db), or None."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(phi, f0: float, d0: float, alpha: float = 1.0, c1: float = 1e-4,
                 c2: float = 0.9, max_evals: int = 25, alpha_max: float = 1e10):
    """Bracketing + zoom line search (Nocedal & Wright, algorithms 3.5/3.6).

    ``phi(alpha)`` returns ``(f, dphi, payload)``. Returns
    ``(alpha, f, payload, n_evals)``; ``alpha`` is None on failure.
    """
    evals = 0
    a_prev, f_prev, d_prev = 0.0, f0, d0
    best = None

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals, best
        while evals < max_evals:
            width = hi - lo
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if a is None or not np.isfinite(a) or not lo_b <= a <= hi_b:
                a = lo + 0.5 * width
            f, d, payload = phi(a)
            evals += 1
            if f > f0 + c1 * a * d0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                best = (a, f, payload)
                if abs(d) <= -c2 * d0:
                    return a, f, payload
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, d
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    for i in range(max_evals):
        f, d, payload = phi(alpha)
        evals += 1
        if not np.isfinite(f) or f > f0 + c1 * alpha * d0 or (i > 0 and f >= f_prev):
            if not np.isfinite(f):
                f, d = np.inf, np.inf
            res = zoom(a_prev, f_prev, d_prev, alpha, f, d)
            break
        best = (alpha, f, payload)
        if abs(d) <= -c2 * d0:
            res = (alpha, f, payload)
            break
        if d >= 0:
            res = zoom(alpha, f, d, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = alpha, f, d
        alpha = min(2.0 * alpha, alpha_max)
    else:
        res = None
    if res is None:
        if best is not None:  # sufficient decrease without curvature: still usable
            return best[0], best[1], best[2], evals
        return None, f0, None, evals
    return res[0], res[1], res[2], evals


def minimize_lbfgs(fun: Objective, x0, memory: int = 10, gtol: float = 1e-8, ftol: float = 1e-12,
                   max_iter: int = 500, c1: float = 1e-4, c2: float = 0.9,
                   project: Callable[[np.ndarray], np.ndarray] | None = None) -> LbfgsResult:
    """Minimise ``fun`` (returning value and gradient) from ``x0``.

    Stops when the gradient infinity-norm drops below ``gtol`` or an iteration
    improves ``f`` by less than ``ftol * max(1, |f|)``. ``project`` maps an
    accepted point back into the feasible set; a projection that would increase
    ``f`` ends the run unconverged.
    """
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    f, g = fun(x)
    n_evals = 1
    history = [f]
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    rho_hist: deque = deque(maxlen=memory)

    def result(it, converged, message):
        return LbfgsResult(x, f, g, it, n_evals, converged, message, history)

    if not np.isfinite(f):
        return result(0, False, "non-finite objective at start")
    for it in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            return result(it, True, "gradient tolerance")
        # two-loop recursion
        qv = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ qv)
            alphas.append(a)
            qv -= a * y
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            qv *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ qv)
            qv += (a - b) * s
        p = -qv
        dphi0 = g @ p
        if not dphi0 < 0:
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            p = -g
            dphi0 = g @ p
        step0 = 1.0 if s_hist else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))

        def phi(alpha):
            xa = x + alpha * p
            fa, ga = fun(xa)
            return fa, ga @ p, (xa, ga)

        alpha, f_new, payload, ne = strong_wolfe(phi, f, dphi0, step0, c1, c2)
        n_evals += ne
        if alpha is None:
            return result(it, False, "line search failed")
        x_new, g_new = payload
        if project is not None:
            xp = project(x_new)
            if not np.array_equal(xp, x_new):
                f_p, g_p = fun(xp)
                n_evals += 1
                if not f_p <= f:
                    return result(it, False, "projection increased objective")
                x_new, f_new, g_new = xp, f_p, g_p
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
        improvement = f - f_new
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if improvement < ftol * max(1.0, abs(f)):
            return result(it + 1, True, "objective tolerance")
    return result(max_iter, False, "iteration limit")
