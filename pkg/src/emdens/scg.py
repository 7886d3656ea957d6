"""Scaled conjugate gradient minimisation (Moller, 1993).

SCG is a full-batch second-order method: it estimates the curvature along
the search direction from a finite difference of two gradients and uses a
Levenberg-Marquardt style scale ``lambda`` in place of a line search.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SIGMA0 = 1e-5
LAMBDA0 = 1e-7
GRAD_TOL = 1e-8
STALL_TOL = 1e-12
STALL_WINDOW = 10
MAX_FAILED_STEPS = 60
LAMBDA_MAX = 1e150


class ScgDivergence(RuntimeError):
    """The objective stayed non-finite however much the step was damped."""


@dataclass
class ScgResult:
    x: np.ndarray
    fun: float
    n_iter: int
    reason: str
    history: list = field(default_factory=list)


def scg_minimize(objective, x0, max_iters=1000, callback=None):
    """Minimise ``objective`` starting from ``x0``.

    Parameters
    ----------
    objective : callable
        Maps a flat parameter vector to ``(value, gradient)``.
    x0 : ndarray
        Initial parameters (not modified).
    max_iters : int
        Iteration cap. Each iteration is one pass of the SCG loop whether or
        not its step is accepted.
    callback : callable, optional
        Called as ``callback(iteration, best_cost)`` after every iteration.

    Returns
    -------
    ScgResult
        ``history`` holds the best cost after each iteration, so it is
        non-increasing by construction.
    """
    w = np.array(x0, dtype=np.float64, copy=True).ravel()
    n_params = w.size
    f, g = objective(w)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ScgDivergence("objective is not finite at the initial point")

    r = -g
    p = r.copy()
    lam, lam_bar = LAMBDA0, 0.0
    success = True
    delta = 0.0
    history = []
    failures = 0

    if np.linalg.norm(r) < GRAD_TOL:
        return ScgResult(w, float(f), 0, "gradient", history)

    reason = "max_iters"
    for it in range(1, max_iters + 1):
        p_sq = float(p @ p)
        if success:
            sigma = SIGMA0 / np.sqrt(p_sq)
            _, g_sigma = objective(w + sigma * p)
            s = (g_sigma + r) / sigma  # r == -g(w)
            delta = float(p @ s)

        # scale the curvature estimate
        delta += (lam - lam_bar) * p_sq
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / p_sq)
            delta = -delta + lam * p_sq
            lam = lam_bar

        mu = float(p @ r)
        alpha = mu / delta
        w_new = w + alpha * p
        f_new, g_new = objective(w_new)
        finite = np.isfinite(f_new) and np.all(np.isfinite(g_new))
        comparison = 2.0 * delta * (f - f_new) / (mu * mu) if finite else -1.0

        if comparison >= 0:
            failures = 0
            w, f = w_new, float(f_new)
            r_new = -g_new
            lam_bar = 0.0
            success = True
            if it % n_params == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if comparison >= 0.75:
                lam = lam / 4.0
        else:
            failures += 1
            if failures > MAX_FAILED_STEPS:
                if not finite:
                    raise ScgDivergence(
                        f"objective non-finite after {failures} damped retries"
                    )
                reason = "stalled"
                history.append(f)
                break
            lam_bar = lam
            success = False

        if comparison < 0.25:
            lam = min(lam + delta * (1.0 - comparison) / p_sq, LAMBDA_MAX)

        history.append(f)
        if callback is not None:
            callback(it, f)

        if np.linalg.norm(r) < GRAD_TOL:
            reason = "gradient"
            break
        if (
            success
            and len(history) > STALL_WINDOW
            and history[-STALL_WINDOW - 1] - history[-1] < STALL_TOL
        ):
            reason = "stalled"
            break

    log.debug("scg stopped after %d iterations (%s), cost %.6g", len(history), reason, f)
    return ScgResult(w, float(f), len(history), reason, history)
