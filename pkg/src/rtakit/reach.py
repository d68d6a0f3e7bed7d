"""Mixed-monotone reachability.

A decomposition function ``d(x, w, xh, wh)`` splits a disturbed vector field
``F(x, w)`` into cooperative and competitive parts. Integrating the embedding
system once from ``(lower, upper)`` bounds every disturbed trajectory that
starts in the rectangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import Box
from .integration import Trajectory, flow_embedding, rk4_step, time_grid

Array = np.ndarray

MAX_CORNER_DIM = 12
P_DEFAULT = 1e3


class Hyperrectangle(Box):
    """Interval set ``[lower, upper]`` used for reachable-set bounds."""

    @classmethod
    def degenerate(cls, x) -> "Hyperrectangle":
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    @classmethod
    def from_embedding(cls, z) -> "Hyperrectangle":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n], z[n:])

    @property
    def width(self) -> Array:
        return self.upper - self.lower

    def corners(self) -> list[Array]:
        return corners(self.lower, self.upper)


def _corner_masks(n: int) -> Array:
    k = np.arange(1 << n)[:, None]
    return ((k >> np.arange(n)) & 1).astype(bool)


def corner_array(lower, upper=None) -> Array:
    """Corners as a ``(2^n, n)`` array; row ``k`` takes the upper bound on axis ``i`` iff bit ``i`` of ``k`` is set."""
    if upper is None:
        lower, upper = lower.lower, lower.upper
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    n = lo.size
    if n > MAX_CORNER_DIM:
        raise ValueError(f"{n}-dimensional rectangle has too many corners (cap {MAX_CORNER_DIM})")
    return np.where(_corner_masks(n), hi, lo)


def corners(lower, upper=None) -> list[Array]:
    """All ``2^n`` corners in binary-counter order."""
    return list(corner_array(lower, upper))


# --------------------------------------------------------------------------- decompositions

@dataclass(frozen=True, eq=False)
class DecompositionFunction:
    d: Callable[[Array, Array, Array, Array], Array]
    n: int
    p: int = 0
    name: str = ""

    def __call__(self, x, w, xh, wh) -> Array:
        return np.asarray(self.d(x, w, xh, wh), dtype=float)


@dataclass(frozen=True, eq=False)
class EmbeddingSystem:
    decomposition: DecompositionFunction
    w_box: Box

    def __call__(self, z) -> Array:
        n = self.decomposition.n
        x, xh = z[:n], z[n:]
        wl, wu = self.w_box.lower, self.w_box.upper
        d = self.decomposition
        return np.concatenate([d(x, wl, xh, wu), d(xh, wu, x, wl)])


def _empty_box() -> Box:
    return Box(np.zeros(0), np.zeros(0))


def build_embedding(d: DecompositionFunction, w_box: Box | None = None) -> EmbeddingSystem:
    w_box = w_box if w_box is not None else _empty_box()
    if w_box.dim != d.p:
        raise ValueError(f"disturbance box has dimension {w_box.dim}, decomposition expects {d.p}")
    return EmbeddingSystem(d, w_box)


@dataclass
class DecompositionReport:
    n_samples: int
    diagonal_error: float
    worst_sign_violation: float
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def validate_decomposition(d: DecompositionFunction, F: Callable[[Array, Array], Array],
                           x_box: Box, w_box: Box | None = None, n_samples: int = 10_000,
                           seed: int = 0, tol: float = 1e-6, h: float = 1e-6) -> DecompositionReport:
    """Sample the four decomposition conditions.

    ``F(x, w)`` is the unbatched disturbed vector field. Partial derivatives are
    taken by central differences with step ``h``; a sign is violated when it is
    wrong by more than ``tol``.
    """
    w_box = w_box if w_box is not None else _empty_box()
    rng = np.random.default_rng(seed)
    n, p = d.n, d.p
    diag_err = 0.0
    worst = 0.0
    bad = 0

    def draw(box):
        return box.lower + (box.upper - box.lower) * rng.random(box.dim)

    for _ in range(n_samples):
        x, xh, w, wh = draw(x_box), draw(x_box), draw(w_box), draw(w_box)
        diag_err = max(diag_err, float(np.max(np.abs(d(x, w, x, w) - F(x, w)), initial=0.0)))
        args = [x, w, xh, wh]
        # (argument slot, required sign, skip diagonal i == j)
        for slot, sign, skip_diag in ((0, 1.0, True), (2, -1.0, False), (1, 1.0, False),
                                      (3, -1.0, False)):
            for j in range(args[slot].size):
                plus = [a.copy() for a in args]
                minus = [a.copy() for a in args]
                plus[slot][j] += h
                minus[slot][j] -= h
                grad = (d(*plus) - d(*minus)) / (2 * h)
                if skip_diag:
                    grad = np.delete(grad, j)
                v = float(np.max(-sign * grad, initial=-np.inf))
                if v > tol:
                    bad += 1
                    worst = max(worst, v)
    if diag_err > tol:
        bad += 1
    return DecompositionReport(n_samples, diag_err, worst, bad)


def mm_example_decomposition() -> DecompositionFunction:
    """Decomposition of ``x1' = x2^2 + 2, x2' = x1``."""

    def d(x, w, xh, wh):
        x2, xh2 = x[1], xh[1]
        if x2 >= max(0.0, -xh2):
            d1 = x2 * x2 + 2.0
        elif xh2 <= min(0.0, -x2):
            d1 = xh2 * xh2 + 2.0
        else:
            d1 = 2.0
        return np.array([d1, x[0]])

    return DecompositionFunction(d, 2, 0, "mm_example")


def mm_example_field(x, w=None) -> Array:
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1] ** 2 + 2.0, x[..., 0]], axis=-1)


def disturbed_di_backup_decomposition(u_b: float = -1.0) -> DecompositionFunction:
    """Disturbed double integrator ``x1' = x2, x2' = u_b + w`` under constant braking.

    The field is cooperative (``x2`` drives ``x1`` positively) and increasing in
    ``w``, so ``d`` is the field itself.
    """

    def d(x, w, xh, wh):
        return np.array([x[1], u_b + w[0]])

    return DecompositionFunction(d, 2, 1, "disturbed_double_integrator_backup")


def disturbed_di_backup_field(u_b: float = -1.0):
    def F(x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return np.stack([x[..., 1], u_b + w[..., 0]], axis=-1)

    return F


def scalar_decay_decomposition() -> DecompositionFunction:
    """``x' = -x``; monotone, so ``d(x, xh) = -x``."""
    return DecompositionFunction(lambda x, w, xh, wh: -np.asarray(x, dtype=float), 1, 0,
                                 "scalar_decay")


# --------------------------------------------------------------------------- reachability

class OrderInversionError(RuntimeError):
    pass


def reach_tube(d: DecompositionFunction, w_box: Box | None, rect0: Box, t: float,
               dt: float) -> Trajectory:
    return flow_embedding(build_embedding(d, w_box), rect0, t, dt)


def reach_overapprox(d: DecompositionFunction, w_box: Box | None, rect0: Box, t: float,
                     dt: float = 0.01) -> Hyperrectangle:
    """Rectangle containing every state reachable at time ``t`` from ``rect0``."""
    tube = reach_tube(d, w_box, rect0, t, dt)
    if tube.diagnostic:
        raise OrderInversionError(tube.diagnostic)
    return Hyperrectangle.from_embedding(tube.final)


def monte_carlo_endpoints(F, rect0: Box, w_box: Box | None, t: float, n: int, seed: int = 0,
                          dt: float = 0.01, pieces: int = 10) -> Array:
    """Endpoints of ``n`` disturbed trajectories from random initial states.

    ``F(X, W)`` is evaluated batched on ``(n, dim)`` arrays; each disturbance
    signal is piecewise constant on ``pieces`` equal intervals of ``[0, t]``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(rect0.lower), np.asarray(rect0.upper)
    X = lo + (hi - lo) * rng.random((n, lo.size))
    p = 0 if w_box is None else w_box.dim
    if p:
        W = w_box.lower + (w_box.upper - w_box.lower) * rng.random((pieces, n, p))
    else:
        W = np.zeros((pieces, n, 0))
    if t <= 0:
        return X
    grid = time_grid(t, dt)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        k = min(int(0.5 * (t0 + t1) / t * pieces), pieces - 1)
        Wk = W[k]
        X = rk4_step(lambda Z: F(Z, Wk), X, t1 - t0)
    return X


# --------------------------------------------------------------------------- smooth certificates

def lse(values, p: float = P_DEFAULT) -> float:
    """Soft minimum ``-(1/p) log sum exp(-p s)``; lies in ``[min - log|S|/p, min)``."""
    s = np.asarray(values, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("lse of an empty set")
    if not p > 0:
        raise ValueError("p must be positive")
    if not np.all(np.isfinite(s)):
        raise ValueError("lse needs finite values")
    m = float(np.min(s))
    return m - float(np.log(np.sum(np.exp(-p * (s - m))))) / p


def lse_h(h: Callable[[Array], float], rect: Box, p: float = P_DEFAULT) -> float:
    return lse([h(z) for z in corner_array(rect.lower, rect.upper)], p)


@dataclass(frozen=True, eq=False)
class PsiResult:
    value: float
    tau: float
    tube: Trajectory
    gammas: Array
    diagnostic: str = ""

    def __float__(self) -> float:
        return self.value


def psi(h_b: Callable[[Array], float], d: DecompositionFunction, w_box: Box | None, x,
        T_b: float, dt: float, p: float = P_DEFAULT,
        path: Callable[[Array], float] | None = None) -> PsiResult:
    """Largest soft corner margin of ``h_b`` along the embedding tube from ``[x, x]``.

    With ``path`` given, the result is capped by the smallest soft corner margin
    of ``path`` over the whole tube, so a certificate is only positive when the
    tube also stays inside the constraint set. An order inversion returns
    ``-inf`` with the diagnostic of the tube.
    """
    x = np.asarray(x, dtype=float)
    tube = reach_tube(d, w_box, Hyperrectangle.degenerate(x), T_b, dt)
    if tube.diagnostic:
        return PsiResult(-np.inf, np.nan, tube, np.zeros(0), tube.diagnostic)
    n = d.n
    rects = [Box(z[:n], z[n:]) for z in tube.states]
    gammas = np.array([lse_h(h_b, r, p) for r in rects])
    k = int(np.argmax(gammas))
    value = float(gammas[k])
    if path is not None:
        value = min(value, min(lse_h(path, r, p) for r in rects))
    return PsiResult(value, float(tube.times[k]), tube, gammas)
