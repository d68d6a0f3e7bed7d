"""Super-zero level sets: constraint sets, safe sets and backup sets.

A :class:`LevelSet` is ``{x : h(x) >= 0}``; ``h(x)`` is called the margin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import ContinuousAffinePlant, eval_dynamics, numeric_jacobian
from .integration import Trajectory, flow

Array = np.ndarray

EPS_PATH = 1e-3
EPS_TERMINAL = 1e-3
TOL_NAGUMO = 1e-8


@dataclass(frozen=True, eq=False)
class LevelSet:
    h: Callable[[Array], float]
    grad: Callable[[Array], Array] | None = None
    smooth: bool = True
    label: str = "constraint"  # constraint | safe | backup
    name: str = ""

    def margin(self, x) -> float:
        v = float(self.h(np.asarray(x, dtype=float)))
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite margin for set {self.name or self.label}")
        return v

    __call__ = margin

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.margin(x) >= -tol

    def gradient(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return numeric_jacobian(lambda s: np.atleast_1d(self.h(s)), x)[0]

    @property
    def members(self) -> tuple["LevelSet", ...]:
        return (self,)


@dataclass(frozen=True, eq=False)
class IntersectionSet:
    """Conjunction of level sets; the margin is the smallest member margin."""

    members: tuple[LevelSet, ...]
    label: str = "constraint"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("intersection needs at least one member")

    def margin(self, x) -> float:
        return min(m.margin(x) for m in self.members)

    __call__ = margin

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.margin(x) >= -tol

    @property
    def smooth(self) -> bool:
        return len(self.members) == 1 and self.members[0].smooth


def margin(s: LevelSet | IntersectionSet, x) -> float:
    return s.margin(x)


# --------------------------------------------------------------------------- catalog margins

def double_integrator_viability_h(x) -> float:
    """Largest control-invariant subset of ``{x1 <= 0}`` for ``|u| <= 1``."""
    x1, x2 = float(x[0]), float(x[1])
    return -2.0 * x1 - x2 * x2 if x2 > 0 else -x1


def double_integrator_smooth_h(x, decel: float = 1.0) -> float:
    """Smooth stand-in ``-2 a x1 - x2^2`` used for barrier constraints."""
    return -2.0 * decel * float(x[0]) - float(x[1]) ** 2


MSD_P = np.array([[1.2, 0.1], [0.1, 1.1]])
MSD_P.setflags(write=False)


def quadratic_level_h(x, P=MSD_P, c: float = 1.0) -> float:
    x = np.asarray(x, dtype=float)
    return float(c - x @ P @ x)


def unicycle_safe_h(x) -> float:
    return float(x[0] - np.sin(x[1]) - 1.0)


def cwh_backup_membership(x, which: str, tol: float = 1e-9, r_min: float = 0.5,
                          n_cwh: float = 0.001027) -> bool:
    """Membership in the CWH rest-point set or the natural-motion-orbit set."""
    x = np.asarray(x, dtype=float)
    if which == "invariant_points":
        return bool(abs(x[0]) <= tol and abs(x[2]) <= tol and abs(x[3]) <= tol
                    and x[4] >= 0 and abs(x[1]) >= r_min)
    if which == "nmt_subspace":
        return bool(abs(x[2] - 0.5 * n_cwh * x[1]) <= tol and abs(x[3] + 2 * n_cwh * x[0]) <= tol
                    and x[0] ** 2 + 0.25 * x[1] ** 2 >= r_min ** 2)
    raise ValueError(f"unknown CWH backup set {which!r}")


def cwh_manifold_defect(x, n_cwh: float = 0.001027) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.hypot(x[2] - 0.5 * n_cwh * x[1], x[3] + 2 * n_cwh * x[0]))


# --------------------------------------------------------------------------- set factories

def halfspace(normal, offset: float = 0.0, label="constraint", name="") -> LevelSet:
    """``{x : normal.x + offset >= 0}``."""
    a = np.asarray(normal, dtype=float)
    a.setflags(write=False)
    return LevelSet(lambda x: float(a @ x + offset), lambda x: a, True, label, name)


def di_constraint() -> LevelSet:
    return halfspace([-1.0, 0.0], label="constraint", name="di_wall")


def di_viability_set(smooth: bool = True, decel: float = 1.0, buffer: float = 0.0) -> LevelSet:
    """Braking-distance set; ``buffer`` pulls the wall back to ``x1 = -buffer``."""
    if smooth:
        return LevelSet(lambda x: double_integrator_smooth_h((x[0] + buffer, x[1]), decel),
                        lambda x: np.array([-2.0 * decel, -2.0 * x[1]]), True, "safe",
                        "di_viability_smooth")
    return LevelSet(lambda x: double_integrator_viability_h((x[0] + buffer, x[1])), None, False,
                    "safe", "di_viability")


def di_stopped_set() -> IntersectionSet:
    return IntersectionSet((halfspace([-1.0, 0.0], label="backup"),
                            halfspace([0.0, -1.0], label="backup")), "backup", "di_stopped")


def quadratic_set(P=MSD_P, c: float = 1.0, label="safe", name="lyapunov") -> LevelSet:
    P = np.asarray(P, dtype=float)
    return LevelSet(lambda x: quadratic_level_h(x, P, c), lambda x: -(P + P.T) @ x,
                    True, label, name)


def box_constraint(bound: float, n: int) -> IntersectionSet:
    """``||x||_inf <= bound`` as 2n smooth half-spaces."""
    members = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        members += [halfspace(-e, bound, name=f"x{i}<=b"), halfspace(e, bound, name=f"x{i}>=-b")]
    return IntersectionSet(tuple(members), "constraint", "inf_norm_ball")


def unicycle_sets() -> tuple[LevelSet, LevelSet]:
    wall = halfspace([1.0, 0.0], name="unicycle_wall")
    safe = LevelSet(unicycle_safe_h, lambda x: np.array([1.0, -np.cos(x[1])]), True, "safe",
                    "unicycle_safe")
    return wall, safe


def speed_ball(omega_max: float) -> LevelSet:
    return LevelSet(lambda x: float(omega_max ** 2 - x @ x), lambda x: -2.0 * x, True,
                    "constraint", "speed_ball")


def energy_ellipsoid(J, K: float) -> LevelSet:
    J = np.asarray(J, dtype=float)
    return LevelSet(lambda x: float(K - x @ J @ x), lambda x: -2.0 * J @ x, True, "backup",
                    "energy_ellipsoid")


def cwh_constraint(r_min: float = 0.5) -> IntersectionSet:
    radius = LevelSet(lambda x: float(x[0] ** 2 + x[1] ** 2 - r_min ** 2),
                      lambda x: np.array([2 * x[0], 2 * x[1], 0, 0, 0.0]), True, "constraint",
                      "cwh_radius")
    fuel = halfspace([0, 0, 0, 0, 1.0], name="cwh_fuel")
    return IntersectionSet((radius, fuel), "constraint", "cwh")


# --------------------------------------------------------------------------- safe backward image

@dataclass(frozen=True, eq=False)
class SafeBackwardImageSpec:
    constraint: LevelSet | IntersectionSet
    backup_set: LevelSet | IntersectionSet
    backup_controller: Callable[[Array], Array]
    horizon: float
    n_samples: int
    eps_path: float = EPS_PATH
    eps_terminal: float = EPS_TERMINAL

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("backup horizon must be positive")
        if self.n_samples < 1:
            raise ValueError("need at least one backup sample")


@dataclass(frozen=True, eq=False)
class SBIResult:
    member: bool
    trajectory: Trajectory
    path_margin: float
    terminal_margin: float
    diagnostic: str = ""


def sbi_membership(spec: SafeBackwardImageSpec, x, plant: ContinuousAffinePlant,
                   integrator=flow) -> SBIResult:
    """Check the backup flow from ``x`` against the constraint and backup sets.

    The flow is sampled at ``N + 1`` uniform points of ``[0, T_b]``; the path
    must keep a margin of ``eps_path`` and the endpoint ``eps_terminal``.
    """
    dt = spec.horizon / spec.n_samples
    traj = integrator(plant, spec.backup_controller, x, spec.horizon, dt)
    if traj.blown_up or len(traj) < spec.n_samples + 1:
        return SBIResult(False, traj, -np.inf, -np.inf, traj.diagnostic or "short trajectory")
    path = min(spec.constraint.margin(s) for s in traj.states)
    term = spec.backup_set.margin(traj.states[-1])
    ok = path >= spec.eps_path and term >= spec.eps_terminal
    return SBIResult(bool(ok), traj, path, term)


# --------------------------------------------------------------------------- Nagumo check

@dataclass
class NagumoReport:
    n_boundary: int
    violations: list[tuple[Array, float]] = field(default_factory=list)
    min_rate: float = np.inf

    @property
    def ok(self) -> bool:
        return not self.violations


def boundary_points(s: LevelSet, interior, n_samples: int, seed: int = 0,
                    radius: float = 10.0, iters: int = 60) -> list[Array]:
    """Boundary points of ``s`` found by bisection along random rays from ``interior``."""
    x0 = np.asarray(interior, dtype=float)
    if s.margin(x0) <= 0:
        raise ValueError("no interior point: margin at the seed is not positive")
    rng = np.random.default_rng(seed)
    pts = []
    attempts = 0
    while len(pts) < n_samples and attempts < 20 * n_samples:
        attempts += 1
        d = rng.normal(size=x0.size)
        d /= np.linalg.norm(d)
        if s.margin(x0 + radius * d) >= 0:
            continue
        lo, hi = 0.0, radius
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if s.margin(x0 + mid * d) >= 0:
                lo = mid
            else:
                hi = mid
        pts.append(x0 + lo * d)
    return pts


def nagumo_boundary_check(plant: ContinuousAffinePlant, controller, s: LevelSet,
                          n_samples: int, seed: int = 0, interior=None,
                          radius: float = 10.0, tol: float = TOL_NAGUMO) -> NagumoReport:
    """Sample the boundary of ``s`` and test the sub-tangency condition grad h . F >= 0."""
    if interior is None:
        interior = np.zeros(plant.n)
    pts = boundary_points(s, interior, n_samples, seed, radius)
    report = NagumoReport(len(pts))
    for x in pts:
        rate = float(s.gradient(x) @ eval_dynamics(plant, x, controller(x)))
        report.min_rate = min(report.min_rate, rate)
        if rate < -tol:
            report.violations.append((x, rate))
    return report


def sample_gradient_check(s: LevelSet, states: Sequence[Array], rtol: float = 1e-4) -> float:
    """Largest relative gap between the registered gradient and central differences."""
    worst = 0.0
    for x in states:
        g = s.gradient(x)
        fd = numeric_jacobian(lambda z: np.atleast_1d(s.h(z)), x)[0]
        worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(fd))))
    return worst
