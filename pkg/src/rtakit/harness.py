"""Closed-loop execution of a plant, a primary controller and an optional filter,
plus the nuisance and safety metrics computed from a run."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics import ContinuousAffinePlant, eval_dynamics, eval_nondet
from .filters import FilterConfig, FilterOutput, SafetyFilter
from .integration import BLOWUP_GUARD, closed_loop_field, expm, rk4_step
from .sets import IntersectionSet, LevelSet

Array = np.ndarray

TOL_SAFETY = 1e-2
MAX_STEPS = 10_000_000
SUBSTEPS = 10


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    plant: ContinuousAffinePlant
    primary: Callable[[float, Array], Array]
    constraint: LevelSet | IntersectionSet
    x0: Array
    filter: FilterConfig | None = None
    safe_set: LevelSet | IntersectionSet | None = None
    duration: float = 30.0
    rate: float = 10.0
    substeps: int = SUBSTEPS
    seed: int = 0
    disturbance: Callable[[float, Array, np.random.Generator], Array] | None = None
    integrator: str = "auto"  # auto: exact ZOH substeps for LTI plants, else rk4

    def __post_init__(self):
        if self.rate <= 0 or self.duration < 0:
            raise ValueError("rate must be positive and duration nonnegative")
        if self.integrator not in ("auto", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.rate * self.duration > MAX_STEPS:
            raise ValueError(f"run would take more than {MAX_STEPS} control ticks")
        object.__setattr__(self, "x0", self.plant.check_state(np.asarray(self.x0, dtype=float)))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def tick(self) -> float:
        return 1.0 / self.rate


@dataclass
class MetricsReport:
    activation_steps: int
    activation_seconds: float
    control_deviation: float
    min_constraint_margin: float
    min_safe_margin: float
    violated: bool
    first_intervention_time: float | None = None
    first_intervention_margin: float | None = None
    max_control_jump: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class RunResult:
    times: Array  # control ticks
    states: Array  # state at each tick, plus the final state (n_steps + 1 rows)
    u_des: Array
    u_act: Array
    outputs: list[FilterOutput]
    summary: MetricsReport
    truncated: bool = False
    diagnostic: str = ""

    @property
    def intervened(self) -> Array:
        return np.array([o.intervened for o in self.outputs], dtype=bool)


def _metrics(cfg: ScenarioConfig, times, states, u_des, u_act, outputs, cmargin,
             smargin) -> MetricsReport:
    active = [o.intervened for o in outputs]
    steps = int(sum(active))
    dev = float(np.sum(np.linalg.norm(u_act - u_des, axis=1)) * cfg.tick) if len(u_act) else 0.0
    jumps = np.abs(np.diff(u_act, axis=0)) if len(u_act) > 1 else np.zeros((0, 1))
    first_t = first_m = None
    if steps:
        k = active.index(True)
        first_t = float(times[k])
        gauge = cfg.safe_set if cfg.safe_set is not None else cfg.constraint
        first_m = gauge.margin(states[k])
    cmin = float(np.min(cmargin)) if len(cmargin) else np.inf
    return MetricsReport(
        activation_steps=steps,
        activation_seconds=steps / cfg.rate,
        control_deviation=dev,
        min_constraint_margin=cmin,
        min_safe_margin=float(np.min(smargin)) if len(smargin) else float("nan"),
        violated=bool(cmin < -TOL_SAFETY),
        first_intervention_time=first_t,
        first_intervention_margin=first_m,
        max_control_jump=float(np.max(jumps)) if jumps.size else 0.0,
    )


def _zoh_substep(plant, h: float):
    """``(Phi, Gamma)`` with ``x+ = Phi x + Gamma [u; w]`` over one substep, or ``None``."""
    if plant.linear is None or plant.nonaffine is not None:
        return None
    A, B = plant.linear
    n = plant.n
    cols = [B]
    if getattr(plant, "g2", None) is not None:
        cols.append(plant.g2(np.zeros(n)))
    BW = np.hstack(cols)
    k = BW.shape[1]
    M = np.zeros((n + k, n + k))
    M[:n, :n] = A
    M[:n, n:] = BW
    E = expm(M * h)
    return E[:n, :n], E[:n, n:]


def run_closed_loop(cfg: ScenarioConfig) -> RunResult:
    """Sample ``u_des`` at every tick, filter it, and hold the result over the tick.

    Each tick is split into ``substeps`` integrator steps: exact zero-order-hold
    propagation for LTI plants (``integrator="auto"``), RK4 otherwise.
    Constraint margins are evaluated at every integrator sample.
    """
    plant = cfg.plant
    filt = SafetyFilter(cfg.filter) if cfg.filter is not None else None
    rng = np.random.default_rng(cfg.seed)
    h = cfg.tick / cfg.substeps
    zoh = _zoh_substep(plant, h) if cfg.integrator == "auto" else None
    x = cfg.x0.copy()
    times, states, uds, uas, outputs = [], [x.copy()], [], [], []
    cmargin = [cfg.constraint.margin(x)]
    smargin = [cfg.safe_set.margin(x)] if cfg.safe_set is not None else []
    diag = ""
    for k in range(cfg.n_steps):
        t = k * cfg.tick
        ud = plant.check_input(cfg.primary(t, x))
        if filt is not None:
            out = filt.step(x, ud, t)
        else:
            out = FilterOutput(plant.u_box.clip(ud), False, "pass", cfg.constraint.margin(x),
                               decision=False)
        ua = np.asarray(out.u_act, dtype=float)
        times.append(t)
        uds.append(ud)
        uas.append(ua)
        outputs.append(out)
        held = closed_loop_field(plant, lambda s: ua)
        if cfg.disturbance is not None:
            w = np.atleast_1d(cfg.disturbance(t, x, rng))
            eval_nondet(plant, x, ua, w)  # shape checks once per tick
            deriv = lambda s: held(s) + plant.g2(s) @ w  # noqa: E731
            uw = np.concatenate([ua, w])
        else:
            eval_dynamics(plant, x, ua)
            deriv = held
            uw = ua
        if zoh is not None:
            drive = zoh[1] @ uw
            step = lambda s: zoh[0] @ s + drive  # noqa: E731
        else:
            step = lambda s: rk4_step(deriv, s, h)  # noqa: E731
        try:
            for _ in range(cfg.substeps):
                x = step(x)
                cmargin.append(cfg.constraint.margin(x))
                if cfg.safe_set is not None:
                    smargin.append(cfg.safe_set.margin(x))
        except FloatingPointError as exc:
            diag = f"integration failed at t={t:g}: {exc}"
        if not diag and not np.max(np.abs(x)) <= BLOWUP_GUARD:  # also catches NaN
            diag = f"state norm exceeded {BLOWUP_GUARD:g} at t={t:g}"
        if diag:
            break
        states.append(x.copy())
    m = plant.m
    U_d = np.array(uds).reshape(len(uds), m)
    U_a = np.array(uas).reshape(len(uas), m)
    T = np.array(times)
    summary = _metrics(cfg, T, states, U_d, U_a, outputs, np.array(cmargin), np.array(smargin))
    return RunResult(T, np.array(states), U_d, U_a, outputs, summary, bool(diag), diag)


def safe_volume_estimate(cfg: ScenarioConfig, box, n_samples: int, horizon: float,
                         seed: int = 0) -> float:
    """Fraction of initial states in ``box`` whose filtered run stays in the constraint set."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(box.lower), np.asarray(box.upper)
    X0 = lo + (hi - lo) * rng.random((n_samples, lo.size))
    base = replace(cfg, duration=horizon, safe_set=None)
    safe = 0
    for x0 in X0:
        res = run_closed_loop(replace(base, x0=x0))
        safe += int(not res.truncated and res.summary.min_constraint_margin >= -TOL_SAFETY)
    return safe / n_samples


@dataclass
class Comparison:
    reports: dict[str, MetricsReport]
    runs: dict[str, RunResult] = field(repr=False, default_factory=dict)

    def activation_indices(self, name: str) -> Array:
        return np.flatnonzero(self.runs[name].intervened)

    def activation_offset(self, a: str, b: str) -> int:
        """Largest distance (in ticks) from an activation of one run to the nearest of the other.

        ``0`` when both runs never intervene; a large sentinel when only one does.
        """
        ia, ib = self.activation_indices(a), self.activation_indices(b)
        if not len(ia) and not len(ib):
            return 0
        if not len(ia) or not len(ib):
            return 1 << 30

        def one_way(p, q):
            return int(np.max(np.min(np.abs(p[:, None] - q[None, :]), axis=1)))

        return max(one_way(ia, ib), one_way(ib, ia))

    def intervenes_no_later(self, early: str, late: str) -> bool:
        """First intervention of ``early`` happens no later than that of ``late``."""
        te = self.reports[early].first_intervention_time
        tl = self.reports[late].first_intervention_time
        if tl is None:
            return True
        return te is not None and te <= tl


def compare_filters(base: ScenarioConfig, filters: dict[str, FilterConfig]) -> Comparison:
    """One run per filter with identical seed, discretization and initial state."""
    runs = {name: run_closed_loop(replace(base, filter=fc)) for name, fc in filters.items()}
    return Comparison({k: r.summary for k, r in runs.items()}, runs)
