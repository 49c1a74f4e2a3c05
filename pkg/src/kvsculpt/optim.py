"""Unconstrained minimizers over flat float64 vectors.

lbfgs_minimize implements the limited-memory quasi-Newton method with the
classic two-loop recursion and a strong Wolfe line search (sufficient
decrease c1, curvature c2, cubic interpolation with bisection safeguards).
adam_minimize is the standard adaptive-moment first-order method, kept here
as the comparison optimizer.

Both take an objective callback ``fun_grad(x) -> (loss, grad)`` so they can
be exercised on analytic test problems independently of any attention
machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    loss: float
    grad: np.ndarray
    grad_evals: int
    iterations: int
    stalled: bool = False
    diverged: bool = False
    losses: list = field(default_factory=list)


def _cubic_step(t_lo, f_lo, g_lo, t_hi, f_hi, g_hi):
    """Cubic-interpolated trial point inside [min, max] with safeguards."""
    lo, hi = (t_lo, t_hi) if t_lo <= t_hi else (t_hi, t_lo)
    width = hi - lo
    if not all(map(math.isfinite, (f_lo, g_lo, f_hi, g_hi))) or width <= 0:
        return 0.5 * (lo + hi)
    d1 = g_lo + g_hi - 3.0 * (f_lo - f_hi) / (t_lo - t_hi)
    d2_sq = d1 * d1 - g_lo * g_hi
    if d2_sq < 0:
        return 0.5 * (lo + hi)
    d2 = math.sqrt(d2_sq)
    if t_lo <= t_hi:
        t = t_hi - (t_hi - t_lo) * (g_hi + d2 - d1) / (g_hi - g_lo + 2.0 * d2)
    else:
        t = t_lo - (t_lo - t_hi) * (g_lo + d2 - d1) / (g_lo - g_hi + 2.0 * d2)
    if not math.isfinite(t):
        return 0.5 * (lo + hi)
    return min(max(t, lo + 0.1 * width), hi - 0.1 * width)


def strong_wolfe(fun_grad, x, f0, g0, direction, init_step=1.0,
                 c1=1e-4, c2=0.9, max_trials=20):
    """Line search satisfying the strong Wolfe conditions.

    Returns (t, f_new, g_new, evals, ok). On bracketing failure within
    max_trials evaluations, ok is False and the caller should keep its
    current point.
    """
    d = direction
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return 0.0, f0, g0, 0, False
    evals = 0

    def phi(t):
        nonlocal evals
        f, g = fun_grad(x + t * d)
        evals += 1
        return f, g, float(g @ d)

    def zoom(t_lo, f_lo, dphi_lo, t_hi, f_hi, dphi_hi, g_lo):
        nonlocal evals
        best = (t_lo, f_lo, g_lo)
        while evals < max_trials:
            t = _cubic_step(t_lo, f_lo, dphi_lo, t_hi, f_hi, dphi_hi)
            f_t, g_t, dphi_t = phi(t)
            if not math.isfinite(f_t) or f_t > f0 + c1 * t * dphi0 or f_t >= f_lo:
                t_hi, f_hi, dphi_hi = t, f_t, dphi_t
                continue
            if abs(dphi_t) <= -c2 * dphi0:
                return t, f_t, g_t, True
            if dphi_t * (t_hi - t_lo) >= 0:
                t_hi, f_hi, dphi_hi = t_lo, f_lo, dphi_lo
            t_lo, f_lo, dphi_lo, g_lo = t, f_t, dphi_t, g_t
            best = (t_lo, f_lo, g_lo)
        # Budget exhausted: accept a plain sufficient-decrease point if we
        # found one, otherwise report failure.
        t_b, f_b, g_b = best
        if t_b > 0 and f_b <= f0 + c1 * t_b * dphi0:
            return t_b, f_b, g_b, True
        return 0.0, f0, g0, False

    t_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    g_prev = g0
    t = init_step
    first = True
    while evals < max_trials:
        f_t, g_t, dphi_t = phi(t)
        if not math.isfinite(f_t) or f_t > f0 + c1 * t * dphi0 or (not first and f_t >= f_prev):
            ts, fs, gs, ok = zoom(t_prev, f_prev, dphi_prev, t, f_t, dphi_t, g_prev)
            return ts, fs, gs, evals, ok
        if abs(dphi_t) <= -c2 * dphi0:
            return t, f_t, g_t, evals, True
        if dphi_t >= 0:
            ts, fs, gs, ok = zoom(t, f_t, dphi_t, t_prev, f_prev, dphi_prev, g_t)
            return ts, fs, gs, evals, ok
        t_prev, f_prev, dphi_prev, g_prev = t, f_t, dphi_t, g_t
        t *= 2.0
        first = False
    return 0.0, f0, g0, evals, False


def lbfgs_minimize(fun_grad, x0, iters: int, init_step: float = 0.5,
                   history: int = 10, c1: float = 1e-4, c2: float = 0.9,
                   max_ls_trials: int = 20, grad_tol: float = 1e-14) -> OptimResult:
    """Run a fixed number of L-BFGS iterations from x0.

    Every line search starts at init_step. The loss is non-increasing across
    accepted steps; a failed line search keeps the current point, sets the
    stalled flag, and ends the run early (the state would not change again).
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun_grad(x)
    evals = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    losses = [f]
    stalled = False
    done = 0
    for _ in range(iters):
        if np.max(np.abs(g)) <= grad_tol:
            break
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
            r = gamma * q
        else:
            r = q
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(y @ r)
            r += s * (a - b)
        direction = -r

        t, f_new, g_new, ls_evals, ok = strong_wolfe(
            fun_grad, x, f, g, direction, init_step=init_step,
            c1=c1, c2=c2, max_trials=max_ls_trials)
        evals += ls_evals
        if not ok:
            stalled = True
            break
        s = t * direction
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x = x + s
        f, g = f_new, g_new
        losses.append(f)
        done += 1
    return OptimResult(x=x, loss=f, grad=g, grad_evals=evals,
                       iterations=done, stalled=stalled, losses=losses)


def adam_minimize(fun_grad, x0, iters: int, step: float = 1e-2,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                  diverge_factor: float = 1e6) -> OptimResult:
    """Fixed-iteration adaptive-moment descent; one gradient per iteration.

    Sets the diverged flag and stops if the loss exceeds diverge_factor
    times the initial loss.
    """
    x = np.array(x0, dtype=np.float64)
    f0, g = fun_grad(x)
    evals = 1
    f = f0
    losses = [f0]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    diverged = False
    done = 0
    for t in range(1, iters + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - step * m_hat / (np.sqrt(v_hat) + eps)
        f, g = fun_grad(x)
        evals += 1
        losses.append(f)
        done += 1
        if not math.isfinite(f) or f > diverge_factor * max(f0, 1e-300):
            diverged = True
            break
    return OptimResult(x=x, loss=f, grad=g, grad_evals=evals,
                       iterations=done, diverged=diverged, losses=losses)
