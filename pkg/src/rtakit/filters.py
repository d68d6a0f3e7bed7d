"""Run-time-assurance filters.

Two Simplex filters switch between the desired input and a backup law. Four
active-set-invariance filters (explicit, implicit, robust explicit and
mixed-monotone implicit) solve a small QP that keeps the desired input as long
as a barrier constraint allows it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import qp
from .dynamics import (Box, ContinuousAffinePlant, DiscretePlant, FeedbackLaw, discretize,
                       saturate)
from .integration import Trajectory, flow_with_sensitivity
from .reach import P_DEFAULT, DecompositionFunction, corners, psi
from .sets import EPS_PATH, EPS_TERMINAL, IntersectionSet, LevelSet

Array = np.ndarray
SetLike = LevelSet | IntersectionSet

VARIANTS = ("none", "rbsf", "sbsf", "easif", "iasif", "rasif", "mmasif")
LATCH_RULES = ("instant", "min-hold", "condition")
PASS_TOL = 1e-9


@dataclass(frozen=True)
class AlphaFunction:
    """Extended class-K-infinity function: ``k s``, ``k s^3`` or ``k tanh(s)``."""

    kind: str = "linear"
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic", "tanh"):
            raise ValueError(f"unknown alpha kind {self.kind!r}")
        if not self.gain > 0:
            raise ValueError("alpha gain must be positive")

    def __call__(self, s: float) -> float:
        if self.kind == "linear":
            return self.gain * s
        if self.kind == "cubic":
            return self.gain * s ** 3
        return self.gain * float(np.tanh(s))


@dataclass(frozen=True, eq=False)
class FilterOutput:
    u_act: Array
    intervened: bool
    mode: str  # pass | backup | qp-modified | qp-infeasible-fallback
    margin: float
    backup_traj: Trajectory | None = None
    solver: qp.QPSolution | None = None
    diagnostic: str = ""
    decision: bool | None = None  # raw intervention before latching


@dataclass(frozen=True)
class LatchState:
    latched: bool = False
    since: float | None = None
    rule: str = "instant"
    hold: float = 0.0
    last_t: float | None = None

    def __post_init__(self):
        if self.rule not in LATCH_RULES:
            raise ValueError(f"unknown latch rule {self.rule!r}")
        if self.latched and self.since is None:
            raise ValueError("latched state needs an engage time")


def latch_update(latch: LatchState, intervened_now: bool, t: float,
                 release: bool = False) -> LatchState:
    """Advance the latch given this step's raw intervention decision.

    ``release`` is the value of the release predicate for the ``condition`` rule.
    """
    if latch.last_t is not None and t < latch.last_t:
        raise ValueError(f"time went backwards: {t} < {latch.last_t}")
    if latch.rule == "instant":
        return replace(latch, latched=bool(intervened_now), since=t if intervened_now else None,
                       last_t=t)
    if not latch.latched:
        if intervened_now:
            return replace(latch, latched=True, since=t, last_t=t)
        return replace(latch, last_t=t)
    if latch.rule == "min-hold":
        # compare with a small slack so 10 ticks of 0.1 s count as 1 s
        done = t - latch.since >= latch.hold - 1e-9 and not intervened_now
    else:
        done = bool(release)
    if done:
        return replace(latch, latched=False, since=None, last_t=t)
    return replace(latch, last_t=t)


@dataclass(frozen=True, eq=False)
class FilterConfig:
    variant: str
    plant: ContinuousAffinePlant
    constraint: SetLike
    backup: FeedbackLaw | None = None
    safe_set: SetLike | None = None
    backup_set: SetLike | None = None
    alpha: AlphaFunction = field(default_factory=AlphaFunction)
    horizon: float = 3.0
    dt_backup: float = 0.1
    eps1: float = EPS_PATH
    eps2: float = EPS_TERMINAL
    latch: str = "instant"
    hold: float = 0.0
    release: Callable[[Array], bool] | None = None
    dt_ctrl: float = 0.1
    discrete: DiscretePlant | None = None
    terminal: bool = True
    w_box: Box | None = None
    w_vertices: tuple[Array, ...] | None = None
    decomposition: DecompositionFunction | None = None
    p: float = P_DEFAULT
    path_guard: SetLike | None = None  # caps Psi by this set's margin over the reach tube
    fault: str = ""  # mutation fixture: "barrier-sign" flips every barrier row

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown filter {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.latch not in LATCH_RULES:
            raise ValueError(f"unknown latch rule {self.latch!r}")
        if self.variant in ("rbsf", "sbsf") and self.discrete is None:
            method = "exact-zoh-linear" if self.plant.linear is not None and \
                self.plant.nonaffine is None else "rk4"
            object.__setattr__(self, "discrete", discretize(self.plant, self.dt_ctrl, method,
                                                            substeps=1 if method != "rk4" else 10))
        need = {
            "rbsf": ("safe_set", "backup"),
            "sbsf": ("backup_set", "backup"),
            "easif": ("safe_set",),
            "iasif": ("backup", "backup_set") if self.terminal else ("backup",),
            "rasif": ("safe_set",),
            "mmasif": ("backup", "backup_set", "decomposition"),
        }.get(self.variant, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.variant} needs {', '.join(missing)}")
        if self.variant in ("rasif", "mmasif") and self.disturbance_vertices() is None:
            raise ValueError(f"{self.variant} needs a disturbance set")
        if self.horizon <= 0 or self.dt_backup <= 0:
            raise ValueError("backup horizon and step must be positive")

    @property
    def n_backup(self) -> int:
        return max(1, int(round(self.horizon / self.dt_backup)))

    def disturbance_box(self) -> Box | None:
        return self.w_box if self.w_box is not None else getattr(self.plant, "w_box", None)

    def disturbance_vertices(self) -> list[Array] | None:
        if self.w_vertices is not None:
            return [np.atleast_1d(np.asarray(v, dtype=float)) for v in self.w_vertices]
        box = self.disturbance_box()
        return None if box is None else corners(box.lower, box.upper)


# --------------------------------------------------------------------------- helpers

def _members(s: SetLike) -> tuple[LevelSet, ...]:
    return s.members


def _backup_input(cfg: FilterConfig, x) -> Array:
    return cfg.plant.u_box.clip(cfg.backup(x))


def _output_backup(cfg, x, margin, diag="", traj=None, solver=None,
                   mode="backup") -> FilterOutput:
    return FilterOutput(_backup_input(cfg, x), True, mode, margin, traj, solver, diag, True)


def _sign(cfg) -> float:
    return -1.0 if cfg.fault == "barrier-sign" else 1.0


def _solve(cfg: FilterConfig, x, u_des, rows, margin, traj=None) -> FilterOutput:
    """Solve the ASIF QP and classify the outcome."""
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    spec = qp.QPSpec.from_constraints(u_des, rows, cfg.plant.u_box)
    sol = qp.solve(spec)
    if not sol.optimal:
        if cfg.backup is not None:
            return _output_backup(cfg, x, margin, "qp infeasible", traj, sol,
                                  "qp-infeasible-fallback")
        u = saturate(u_des, cfg.plant.u_box)
        return FilterOutput(u, True, "qp-infeasible-fallback", margin, traj, sol, "qp infeasible",
                            True)
    changed = bool(np.max(np.abs(sol.u_act - u_des)) > PASS_TOL)
    return FilterOutput(sol.u_act, changed, "qp-modified" if changed else "pass", margin, traj,
                        sol, "", changed)


def _lie_rows(cfg, s: SetLike, x, extra_b: float = 0.0):
    plant = cfg.plant
    fx, gx = plant.f(x), plant.g(x)
    rows = []
    for mem in _members(s):
        grad = mem.gradient(x)
        rows.append((_sign(cfg) * (grad @ gx),
                     _sign(cfg) * float(grad @ fx) + extra_b + cfg.alpha(mem.margin(x))))
    return rows


# --------------------------------------------------------------------------- Simplex filters

def rbsf(cfg: FilterConfig, x_curr, u_des, latch: LatchState | None = None) -> FilterOutput:
    """Region-based Simplex: keep ``u_des`` if one step of it lands in the safe set."""
    x = np.asarray(x_curr, dtype=float)
    u_des = cfg.plant.check_input(u_des)
    margin = cfg.constraint.margin(x)
    diag = ""
    try:
        x_cand = cfg.discrete(x, u_des)
        if not np.all(np.isfinite(x_cand)):
            raise FloatingPointError("non-finite candidate state")
        ok = cfg.safe_set.margin(x_cand) >= cfg.eps1
    except FloatingPointError as exc:
        ok, diag = False, str(exc)
    if latch is not None and latch.latched and latch.rule != "instant":
        out = _output_backup(cfg, x, margin, diag or "latched")
        return replace(out, decision=not ok)
    if ok:
        return FilterOutput(cfg.plant.u_box.clip(u_des), False, "pass", margin, decision=False)
    return _output_backup(cfg, x, margin, diag)


def simulate_backup(cfg: FilterConfig, x0, N: int) -> Trajectory:
    """``N`` discrete steps of the backup law from ``x0`` (``N + 1`` samples)."""
    F = cfg.discrete
    xs = [np.asarray(x0, dtype=float)]
    us = []
    diag = ""
    for _ in range(N):
        u = _backup_input(cfg, xs[-1])
        nxt = F(xs[-1], u)
        us.append(u)
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > 1e12:
            diag = "backup simulation blew up"
            break
        xs.append(nxt)
    us.append(_backup_input(cfg, xs[-1]) if not diag else us[-1])
    t = F.dt * np.arange(len(xs))
    return Trajectory(t, np.array(xs), np.array(us[:len(xs)]), bool(diag), diag)


def sbsf(cfg: FilterConfig, x_curr, u_des, latch: LatchState | None = None) -> FilterOutput:
    """Simulation-based Simplex: keep ``u_des`` if the backup flow after it reaches the backup set."""
    x = np.asarray(x_curr, dtype=float)
    u_des = cfg.plant.check_input(u_des)
    margin = cfg.constraint.margin(x)
    N = cfg.n_backup
    x_cand = cfg.discrete(x, u_des)
    if not np.all(np.isfinite(x_cand)):
        return _output_backup(cfg, x, margin, "non-finite candidate state")
    traj = simulate_backup(cfg, x_cand, N)
    if traj.blown_up:
        ok = False
    else:
        path = min(cfg.constraint.margin(s) for s in traj.states[:N])
        ok = path >= cfg.eps1 and cfg.backup_set.margin(traj.states[N]) >= cfg.eps2
    if latch is not None and latch.latched and latch.rule != "instant":
        out = _output_backup(cfg, x, margin, "latched", traj)
        return replace(out, decision=not ok)
    if ok:
        return FilterOutput(cfg.plant.u_box.clip(u_des), False, "pass", margin, traj,
                            decision=False)
    return _output_backup(cfg, x, margin, traj.diagnostic, traj)


# --------------------------------------------------------------------------- ASIF filters

def barrier_rows(cfg: FilterConfig, x) -> list[tuple[Array, float]]:
    """Explicit barrier rows ``(a, b)`` meaning ``a.u + b >= 0`` for easif and rasif.

    rasif repeats every row at each vertex of the disturbance set.
    """
    x = cfg.plant.check_state(x)
    if cfg.variant == "easif":
        return _lie_rows(cfg, cfg.safe_set, x)
    if cfg.variant != "rasif":
        raise ValueError(f"{cfg.variant} has no explicit barrier rows")
    plant = cfg.plant
    g2 = plant.g2(x) if getattr(plant, "g2", None) is not None else None
    rows = []
    for w in cfg.disturbance_vertices():
        for mem in _members(cfg.safe_set):
            grad = mem.gradient(x)
            dist = float(grad @ g2 @ w) if g2 is not None else 0.0
            rows += _lie_rows(cfg, mem, x, _sign(cfg) * dist)
    return rows


def easif(cfg: FilterConfig, x_curr, u_des) -> FilterOutput:
    """Explicit ASIF: one barrier row ``dh.g u + dh.f + alpha(h) >= 0`` per safe-set member."""
    x = cfg.plant.check_state(x_curr)
    return _solve(cfg, x, u_des, barrier_rows(cfg, x), cfg.constraint.margin(x))


def rasif(cfg: FilterConfig, x_curr, u_des) -> FilterOutput:
    """Robust explicit ASIF: the barrier row is imposed at every vertex of the disturbance set."""
    x = cfg.plant.check_state(x_curr)
    return _solve(cfg, x, u_des, barrier_rows(cfg, x), cfg.constraint.margin(x))


def iasif(cfg: FilterConfig, x_curr, u_des) -> FilterOutput:
    """Implicit ASIF: barrier rows along the sampled backup flow, via its sensitivity matrix."""
    plant = cfg.plant
    x = plant.check_state(x_curr)
    margin = cfg.constraint.margin(x)
    try:
        sens = flow_with_sensitivity(plant, cfg.backup, x, cfg.horizon, cfg.horizon / cfg.n_backup)
    except FloatingPointError as exc:
        return _output_backup(cfg, x, margin, f"sensitivity failed: {exc}")
    traj = sens.base
    if traj.blown_up:
        return _output_backup(cfg, x, margin, traj.diagnostic, traj)
    fx, gx = plant.f(x), plant.g(x)
    sgn = _sign(cfg)
    rows = []
    for xk, Qk in zip(traj.states, sens.Q):
        Qf, Qg = Qk @ fx, Qk @ gx
        for mem in _members(cfg.constraint):
            grad = mem.gradient(xk)
            rows.append((sgn * (grad @ Qg), sgn * float(grad @ Qf) + cfg.alpha(mem.margin(xk))))
    if cfg.terminal:
        xN, QN = traj.states[-1], sens.Q[-1]
        for mem in _members(cfg.backup_set):
            grad = mem.gradient(xN)
            rows.append((sgn * (grad @ QN @ gx),
                         sgn * float(grad @ QN @ fx) + cfg.alpha(mem.margin(xN))))
    return _solve(cfg, x, u_des, rows, margin, traj)


def psi_gradient(cfg: FilterConfig, x) -> tuple[float, Array, str]:
    """``Psi(x)`` and its central-difference gradient with step ``1e-4 max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    box = cfg.disturbance_box()
    dt = cfg.horizon / cfg.n_backup

    def value(z):
        return psi(cfg.backup_set, cfg.decomposition, box, z, cfg.horizon, dt, cfg.p,
                   cfg.path_guard)

    centre = value(x)
    if not np.isfinite(centre.value):
        return -np.inf, np.zeros_like(x), centre.diagnostic
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        up, dn = value(x + e), value(x - e)
        if not (np.isfinite(up.value) and np.isfinite(dn.value)):
            return centre.value, grad, up.diagnostic or dn.diagnostic
        grad[i] = (up.value - dn.value) / (2 * h[i])
    return centre.value, grad, ""


def mm_asif(cfg: FilterConfig, x_curr, u_des) -> FilterOutput:
    """Implicit ASIF for disturbed plants using the mixed-monotone certificate ``Psi``."""
    plant = cfg.plant
    x = plant.check_state(x_curr)
    margin = cfg.constraint.margin(x)
    value, grad, diag = psi_gradient(cfg, x)
    if diag:
        return _output_backup(cfg, x, margin, diag)
    fx, gx = plant.f(x), plant.g(x)
    g2 = plant.g2(x) if getattr(plant, "g2", None) is not None else None
    sgn = _sign(cfg)
    rows = []
    for w in cfg.disturbance_vertices():
        drift = fx + (g2 @ w if g2 is not None and w.size else 0.0)
        rows.append((sgn * (grad @ gx), sgn * float(grad @ drift) + cfg.alpha(value)))
    out = _solve(cfg, x, u_des, rows, margin)
    if not out.solver.optimal:
        # infeasible program: hand over to the backup law
        return _output_backup(cfg, x, margin, "qp infeasible", solver=out.solver,
                              mode="qp-infeasible-fallback")
    return out


# --------------------------------------------------------------------------- stateful wrapper

class SafetyFilter:
    """Owns a latch and dispatches to the configured filter variant."""

    def __init__(self, cfg: FilterConfig):
        self.cfg = cfg
        self.latch = LatchState(rule=cfg.latch, hold=cfg.hold)

    def reset(self):
        self.latch = LatchState(rule=self.cfg.latch, hold=self.cfg.hold)

    def step(self, x, u_des, t: float) -> FilterOutput:
        cfg = self.cfg
        x = np.asarray(x, dtype=float)
        if cfg.variant == "none":
            u = cfg.plant.u_box.clip(cfg.plant.check_input(u_des))
            return FilterOutput(u, False, "pass", cfg.constraint.margin(x), decision=False)
        if cfg.variant == "rbsf":
            out = rbsf(cfg, x, u_des, self.latch)
        elif cfg.variant == "sbsf":
            out = sbsf(cfg, x, u_des, self.latch)
        else:
            out = {"easif": easif, "iasif": iasif, "rasif": rasif, "mmasif": mm_asif}[
                cfg.variant](cfg, x, u_des)
            if self.latch.latched and cfg.latch != "instant":
                out = replace(_output_backup(cfg, x, out.margin, "latched"),
                              decision=out.intervened)
        release = bool(cfg.release(x)) if cfg.release is not None else False
        raw = out.intervened if out.decision is None else out.decision
        self.latch = latch_update(self.latch, raw, t, release)
        return out


FILTERS = {"rbsf": rbsf, "sbsf": sbsf, "easif": easif, "iasif": iasif, "rasif": rasif,
           "mmasif": mm_asif}
