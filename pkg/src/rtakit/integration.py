"""Fixed-step integration of plant flows, sensitivity matrices and embedding systems.

Everything is classical RK4 on a uniform grid so that runs are bit-reproducible
for a given step size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm as _scipy_expm

from .dynamics import ContinuousAffinePlant, closed_loop_jacobian

Array = np.ndarray

BLOWUP_GUARD = 1e12


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: Array
    states: Array
    controls: Array | None = None
    blown_up: bool = False
    diagnostic: str = ""

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> Array:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class SensitivityTrajectory:
    base: Trajectory
    Q: Array  # (K, n, n)


def expm(M) -> Array:
    """Matrix exponential (Pade scaling-and-squaring)."""
    return _scipy_expm(np.asarray(M, dtype=float))


def rk4_step(derivative: Callable[[Array], Array], x, dt: float) -> Array:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = derivative(x)
    k2 = derivative(x + 0.5 * dt * k1)
    k3 = derivative(x + 0.5 * dt * k2)
    k4 = derivative(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite derivative during RK4 step")
    return out


def time_grid(T: float, dt: float) -> Array:
    """``0, dt, 2dt, ...`` up to ``T``; a final partial step lands exactly on ``T``."""
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = int(np.floor(T / dt + 1e-9))
    grid = dt * np.arange(k + 1)
    if T - grid[-1] > 1e-9 * max(1.0, T):
        grid = np.append(grid, T)
    else:
        grid[-1] = T if k else 0.0
    return grid


def _integrate(derivative, x0, grid, on_sample=None):
    states = [np.asarray(x0, dtype=float)]
    x = states[0]
    for t0, t1 in zip(grid[:-1], grid[1:]):
        try:
            x = rk4_step(derivative, x, t1 - t0)
        except FloatingPointError as exc:
            return states, f"integration failed at t={t0:g}: {exc}"
        if np.max(np.abs(x)) > BLOWUP_GUARD:
            return states, f"state norm exceeded {BLOWUP_GUARD:g} at t={t1:g}"
        states.append(x)
        if on_sample is not None:
            msg = on_sample(t1, x)
            if msg:
                return states, msg
    return states, ""


def closed_loop_field(plant: ContinuousAffinePlant, controller) -> Callable[[Array], Array]:
    """``x -> f(x) + g(x) u(x)`` without the per-call shape checks of ``eval_dynamics``."""
    f, g, r, m = plant.f, plant.g, plant.nonaffine, plant.m

    def field(x):
        u = controller(x)
        dx = f(x) + g(x) @ u if m else f(x)
        if r is not None:
            dx = dx + r(x, u)
        return dx

    return field


def flow(plant: ContinuousAffinePlant, controller, x0, T: float, dt: float) -> Trajectory:
    """Closed-loop flow of ``plant`` under state feedback ``controller``.

    A blow-up (sup norm above 1e12) truncates the trajectory and sets ``blown_up``.
    """
    x0 = plant.check_state(x0)
    grid = time_grid(T, dt)
    states, diag = _integrate(closed_loop_field(plant, controller), x0, grid)
    k = len(states)
    X = np.array(states)
    U = np.array([np.atleast_1d(controller(x)) for x in X]) if plant.m else np.zeros((k, 0))
    return Trajectory(grid[:k], X, U, blown_up=bool(diag), diagnostic=diag)


def lti_flow(A, x0, t: float) -> Array:
    return expm(np.asarray(A, dtype=float) * t) @ np.asarray(x0, dtype=float)


def flow_with_sensitivity(plant: ContinuousAffinePlant, controller, x0, T: float,
                          dt: float) -> SensitivityTrajectory:
    """Integrate the flow jointly with ``Q' = Df_cl(x) Q``, ``Q(0) = I``."""
    x0 = plant.check_state(x0)
    n = plant.n
    field = closed_loop_field(plant, controller)
    jac = getattr(controller, "jacobian", None)
    if jac is None:
        jac = lambda x: closed_loop_jacobian(plant, controller, x)  # noqa: E731

    def joint(z):
        x = z[:n]
        Q = z[n:].reshape(n, n)
        dx = field(x)
        dQ = jac(x) @ Q
        return np.concatenate([dx, dQ.ravel()])

    grid = time_grid(T, dt)
    z0 = np.concatenate([x0, np.eye(n).ravel()])
    zs, diag = _integrate(joint, z0, grid)
    Z = np.array(zs)
    k = len(Z)
    X = Z[:, :n]
    U = np.array([np.atleast_1d(controller(x)) for x in X]) if plant.m else np.zeros((k, 0))
    base = Trajectory(grid[:k], X, U, blown_up=bool(diag), diagnostic=diag)
    return SensitivityTrajectory(base, Z[:, n:].reshape(k, n, n))


def flow_embedding(E: Callable[[Array], Array], rect, T: float, dt: float) -> Trajectory:
    """Integrate a 2n-dimensional embedding system from ``(rect.lower, rect.upper)``.

    Integration stops at the first sample where some lower coordinate exceeds
    its upper partner; ``diagnostic`` then names the inversion time.
    """
    lo = np.asarray(rect.lower, dtype=float)
    hi = np.asarray(rect.upper, dtype=float)
    n = lo.size
    grid = time_grid(T, dt)

    def check(t, z):
        if np.any(z[:n] > z[n:] + 1e-12):
            return f"order inversion at t={t:g}"
        return ""

    zs, diag = _integrate(E, np.concatenate([lo, hi]), grid, on_sample=check)
    Z = np.array(zs)  # includes the offending sample on inversion
    k = len(Z)
    return Trajectory(grid[:k], Z, None, blown_up=bool(diag), diagnostic=diag)
