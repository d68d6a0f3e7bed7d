"""Registry of the worked example scenarios.

Each scenario fixes a plant, a primary controller, an initial state, the
constraint set and one filter configuration per supported variant.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .dynamics import (ContinuousAffinePlant, constant_backup, make_plant,
                       rigid_body_backup)
from .filters import VARIANTS, AlphaFunction, FilterConfig
from .harness import ScenarioConfig
from .reach import disturbed_di_backup_decomposition
from .sets import (box_constraint, cwh_constraint, di_constraint, di_stopped_set,
                   di_viability_set, energy_ellipsoid, halfspace, quadratic_set,
                   speed_ball, unicycle_sets)

Array = np.ndarray

EASIF_BUFFER = 0.05  # wall offset for the sampled-data explicit barriers
ROBUST_BUFFER = 0.1  # the same under a bounded disturbance
MM_GUARD_BUFFER = 0.05


class ScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------- primary controllers

@dataclass(frozen=True)
class Primary:
    """Desired-input generator.

    ``constant``: ``value``. ``time-function``: per component
    ``offset + amplitude * sin(rate t + phase)`` (``shape="sin"``) or
    ``offset + amplitude * exp(rate t)`` (``shape="exp"``). ``state-feedback``:
    ``offset + K x``.
    """

    kind: str = "constant"
    value: tuple = (0.0,)
    shape: str = "sin"
    offset: tuple = (0.0,)
    amplitude: tuple = (1.0,)
    rate: tuple = (1.0,)
    phase: tuple = (0.0,)
    K: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "time-function", "state-feedback"):
            raise ScenarioError(f"unknown primary kind {self.kind!r}")
        if self.shape not in ("sin", "exp"):
            raise ScenarioError(f"unknown time-function shape {self.shape!r}")

    def __call__(self, t: float, x: Array) -> Array:
        if self.kind == "constant":
            return np.array(self.value, dtype=float)
        off = np.array(self.offset, dtype=float)
        if self.kind == "state-feedback":
            return off + np.array(self.K, dtype=float) @ x
        amp = np.array(self.amplitude, dtype=float)
        rate = np.array(self.rate, dtype=float)
        if self.shape == "exp":
            return off + amp * np.exp(rate * t)
        return off + amp * np.sin(rate * t + np.array(self.phase, dtype=float))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Primary":
        d = dict(d)
        kind = d.pop("kind", "constant")
        allowed = {"value", "shape", "offset", "amplitude", "rate", "phase", "K"}
        extra = set(d) - allowed
        if extra:
            raise ScenarioError(f"unknown primary field(s) {sorted(extra)}")
        conv = {}
        for k, v in d.items():
            if k == "shape":
                conv[k] = v
            elif k == "K":
                conv[k] = tuple(tuple(float(a) for a in np.atleast_1d(row)) for row in v)
            else:
                conv[k] = tuple(float(a) for a in np.atleast_1d(v))
        return cls(kind, **conv)


# --------------------------------------------------------------------------- scenario bodies

@dataclass(frozen=True)
class Scenario:
    id: str
    plant: str
    default_filter: str
    filters: tuple[str, ...]  # variants this scenario is configured (and expected safe) for
    x0: tuple
    primary: Primary
    duration: float
    rate: float = 10.0
    params: Mapping[str, float] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        bad = [f for f in self.filters if f not in VARIANTS]
        if bad:
            raise ScenarioError(f"unknown filter(s) {bad}")


Builder = Callable[[ContinuousAffinePlant, str, float], tuple]


def _double_integrator(plant, variant, dt):
    C = di_constraint()
    ub = constant_backup(plant, [-1.0], "brake")
    fc = {
        "rbsf": lambda: FilterConfig("rbsf", plant, C, ub, safe_set=di_viability_set(False),
                                     dt_ctrl=dt),
        "sbsf": lambda: FilterConfig("sbsf", plant, C, ub, backup_set=di_stopped_set(),
                                     horizon=3.0, dt_backup=0.1, dt_ctrl=dt),
        "easif": lambda: FilterConfig("easif", plant, C, ub,
                                      safe_set=di_viability_set(True, buffer=EASIF_BUFFER),
                                      dt_ctrl=dt),
        "iasif": lambda: FilterConfig("iasif", plant, C, ub, backup_set=di_stopped_set(),
                                      horizon=3.0, dt_backup=0.2, dt_ctrl=dt),
    }
    return C, fc, None


def _mass_spring_damper(plant, variant, dt):
    C = box_constraint(1.0, 2)
    ub = constant_backup(plant, [0.0], "coast")
    S = quadratic_set()
    Cb = quadratic_set(c=1.0, label="backup", name="lyapunov")
    fc = {
        "rbsf": lambda: FilterConfig("rbsf", plant, C, ub, safe_set=S, dt_ctrl=dt),
        "sbsf": lambda: FilterConfig("sbsf", plant, C, ub, backup_set=Cb, horizon=3.0,
                                     dt_backup=0.1, dt_ctrl=dt),
        "easif": lambda: FilterConfig("easif", plant, C, ub, safe_set=S, dt_ctrl=dt),
        "iasif": lambda: FilterConfig("iasif", plant, C, ub, backup_set=Cb, horizon=3.0,
                                      dt_backup=0.1, dt_ctrl=dt),
    }
    return C, fc, None


def _unicycle(plant, variant, dt):
    C, S = unicycle_sets()
    ub = constant_backup(plant, [1.0], "turn")
    fc = {
        "rbsf": lambda: FilterConfig("rbsf", plant, C, ub, safe_set=S, dt_ctrl=dt),
        "easif": lambda: FilterConfig("easif", plant, C, ub, safe_set=S, dt_ctrl=dt),
    }
    return C, fc, None


def _two_cart(plant, variant, dt):
    C = halfspace([-1.0, 0.0, 1.0, 0.0], name="separation")
    ub = constant_backup(plant, [-1.0, 1.0], "split")
    fc = {
        "iasif": lambda: FilterConfig("iasif", plant, C, ub, alpha=AlphaFunction("linear", 2.0),
                                      horizon=10.0, dt_backup=0.25, terminal=False, dt_ctrl=dt),
    }
    return C, fc, None


def _rigid_body(plant, variant, dt):
    C = speed_ball(plant.params["omega_max"])
    J = np.diag([plant.params["J1"], plant.params["J2"], plant.params["J3"]])
    K = plant.params["omega_max"] ** 2 * float(np.min(np.diag(J)))
    ub = rigid_body_backup(plant)
    fc = {
        "easif": lambda: FilterConfig("easif", plant, C, ub,
                                      safe_set=replace(energy_ellipsoid(J, K), label="safe"),
                                      dt_ctrl=dt),
        "iasif": lambda: FilterConfig("iasif", plant, C, ub, backup_set=energy_ellipsoid(J, K),
                                      horizon=3.0, dt_backup=0.05, dt_ctrl=dt),
    }
    return C, fc, None


def _cwh(plant, variant, dt):
    return cwh_constraint(plant.params["r_min"]), {}, None


def _mm_reach_demo(plant, variant, dt):
    return box_constraint(10.0, 2), {}, None


def _disturbed_double_integrator(plant, variant, dt):
    C = di_constraint()
    ub = constant_backup(plant, [-1.0], "brake")
    w_max = plant.params["w_max"]
    decel = 1.0 - w_max
    S = di_viability_set(True, decel=decel, buffer=ROBUST_BUFFER)
    fc = {
        "easif": lambda: FilterConfig("easif", plant, C, ub, safe_set=S, dt_ctrl=dt),
        "rasif": lambda: FilterConfig("rasif", plant, C, ub, safe_set=S, dt_ctrl=dt),
        "mmasif": lambda: FilterConfig(
            "mmasif", plant, C, ub, backup_set=di_stopped_set(),
            decomposition=disturbed_di_backup_decomposition(-1.0), horizon=3.0,
            dt_backup=0.2, path_guard=halfspace([-1.0, 0.0], -MM_GUARD_BUFFER), dt_ctrl=dt),
    }

    def disturbance(t, x, rng):
        return rng.uniform(-w_max, w_max, 1)

    return C, fc, disturbance


_N_CWH = 0.001027

SCENARIOS: dict[str, tuple[Scenario, Builder]] = {
    s.id: (s, b) for s, b in [
        (Scenario("double_integrator", "double_integrator", "rbsf",
                  ("none", "rbsf", "sbsf", "easif", "iasif"), (-1.75, 0.0),
                  Primary("constant", (1.0,)), 30.0,
                  description="wall at x1 = 0, full throttle towards it"), _double_integrator),
        (Scenario("mass_spring_damper", "mass_spring_damper", "easif",
                  ("none", "rbsf", "sbsf", "easif", "iasif"), (0.0, 0.0),
                  Primary("constant", (1.0,)), 30.0,
                  description="unit-box constraint, step input overshoots"), _mass_spring_damper),
        (Scenario("unicycle", "unicycle", "easif", ("none", "rbsf", "easif"), (3.0, 2.0),
                  Primary("constant", (0.0,)), 30.0,
                  description="constant-speed unicycle heading into the wall x1 = 0"), _unicycle),
        (Scenario("two_cart", "two_cart", "iasif", ("none", "iasif"), (0.0, 0.0, 5.0, 0.0),
                  Primary("time-function", shape="exp", offset=(1.0, -1.0),
                          amplitude=(-1.0, 1.0), rate=(-0.1, -0.25)), 30.0,
                  description="two carts driven towards each other"), _two_cart),
        (Scenario("rigid_body", "rigid_body", "iasif", ("none", "easif", "iasif"),
                  (0.0, 0.0, 0.0),
                  Primary("time-function", shape="sin", offset=(0.0, 0.0, 0.0),
                          amplitude=(1.0, 1.0, 1.0), rate=(0.5, 0.5, 0.25),
                          phase=(0.0, -np.pi / 4, np.pi / 4)), 20.0,
                  description="spin-rate limit under sinusoidal torque commands"), _rigid_body),
        (Scenario("cwh_invariance", "cwh", "none", ("none",),
                  (1.0, 0.0, 0.0, -2 * _N_CWH * 1.0, 1.0), Primary("constant", (0.0, 0.0)),
                  2 * np.pi / _N_CWH, rate=0.1,
                  description="one unforced orbital period on the natural-motion-orbit set"),
         _cwh),
        (Scenario("mm_reach_demo", "mm_example", "none", ("none",), (0.0, 0.0),
                  Primary("constant", ()), 1.0,
                  description="autonomous mixed-monotone example"), _mm_reach_demo),
        (Scenario("disturbed_double_integrator", "double_integrator", "rasif",
                  ("none", "rasif", "mmasif"), (-1.75, 0.0), Primary("constant", (1.0,)), 30.0,
                  params={"w_max": 0.2},
                  description="bounded acceleration disturbance |w| <= 0.2"),
         _disturbed_double_integrator),
    ]
}


def scenario_ids() -> list[str]:
    return sorted(SCENARIOS)


def get_scenario(name: str) -> Scenario:
    if name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; valid: {', '.join(scenario_ids())}")
    return SCENARIOS[name][0]


def _apply_filter_overrides(fc: FilterConfig, ov: Mapping) -> FilterConfig:
    names = {"horizon": "horizon", "dt_backup": "dt_backup", "epsilon1": "eps1",
             "epsilon2": "eps2", "latch": "latch", "hold": "hold", "p": "p"}
    kw = {}
    for k, v in ov.items():
        if k == "kind":
            continue
        if k == "alpha":
            kw["alpha"] = AlphaFunction(v.get("kind", "linear"), float(v.get("gain", 1.0)))
        elif k in names:
            kw[names[k]] = v if k == "latch" else float(v)
        else:
            raise ScenarioError(f"unknown filter field {k!r}")
    return replace(fc, **kw) if kw else fc


def available_filters(name: str) -> list[str]:
    """Variants with a configuration for this scenario (``none`` always included).

    This can be wider than ``Scenario.filters``, which lists only the variants
    the scenario is tuned and expected to be safe for.
    """
    sc, builder = SCENARIOS[get_scenario(name).id]
    plant = make_plant(sc.plant, sc.params)
    _, fcs, _ = builder(plant, "none", 1.0 / sc.rate)
    return ["none"] + [v for v in VARIANTS if v in fcs]


def build_scenario(name: str, filter: str | None = None, *, duration: float | None = None,
                   rate: float | None = None, seed: int = 0,
                   params: Mapping[str, float] | None = None, x0: Sequence[float] | None = None,
                   primary: Primary | None = None,
                   filter_overrides: Mapping | None = None) -> ScenarioConfig:
    """Instantiate a registered scenario as a runnable :class:`ScenarioConfig`."""
    sc = get_scenario(name)
    builder = SCENARIOS[sc.id][1]
    variant = filter or sc.default_filter
    if variant not in VARIANTS:
        raise ScenarioError(f"unknown filter {variant!r}; valid: {', '.join(VARIANTS)}")
    rate = float(rate if rate is not None else sc.rate)
    if not rate > 0:
        raise ScenarioError("rate must be positive")
    plant = make_plant(sc.plant, {**sc.params, **(params or {})})
    C, fcs, disturbance = builder(plant, variant, 1.0 / rate)
    fc = None
    if variant != "none":
        if variant not in fcs:
            valid = ["none"] + [v for v in VARIANTS if v in fcs]
            raise ScenarioError(f"scenario {name} has no {variant} configuration; "
                                f"valid: {', '.join(valid)}")
        fc = _apply_filter_overrides(fcs[variant](), filter_overrides or {})
    safe_set = fc.safe_set if fc is not None and fc.variant in ("rbsf", "easif", "rasif") else None
    return ScenarioConfig(
        name=sc.id, plant=plant, primary=primary or sc.primary, constraint=C,
        x0=np.asarray(x0 if x0 is not None else sc.x0, dtype=float), filter=fc,
        safe_set=safe_set, duration=float(duration if duration is not None else sc.duration),
        rate=rate, seed=int(seed), disturbance=disturbance,
    )
