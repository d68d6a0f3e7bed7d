"""Plant models: control-affine continuous dynamics, their disturbed variant,
sampled-data discretizations, input saturation and closed-loop Jacobians.

All plants are immutable; every function here is pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

Array = np.ndarray
StateFn = Callable[[Array], Array]


def _frozen(a, ndim=1) -> Array:
    arr = np.array(a, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned interval set ``[lower, upper]``."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lo, hi = _frozen(self.lower), _frozen(self.upper)
        if lo.shape != hi.shape:
            raise ValueError(f"box bounds differ in shape: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, bound, dim: int = 1) -> "Box":
        b = np.broadcast_to(np.abs(np.asarray(bound, dtype=float)), (dim,))
        return cls(-b, b)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> Array:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> Array:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> Array:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def vertices(self) -> list[Array]:
        """Corners in binary-counter order (bit i selects upper bound of axis i)."""
        from .reach import corners

        return corners(self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class ContinuousAffinePlant:
    """``x' = f(x) + g(x) u`` with admissible inputs ``u_box``.

    ``linear`` carries ``(A, B)`` when the dynamics are LTI, which enables exact
    zero-order-hold discretization. ``nonaffine`` is an optional extra term
    ``r(x, u)`` added to the vector field (the CWH fuel channel); filters that
    use Lie derivatives ignore it.
    """

    name: str
    n: int
    m: int
    f: StateFn
    g: Callable[[Array], Array]
    u_box: Box
    linear: tuple[Array, Array] | None = None
    nonaffine: Callable[[Array, Array], Array] | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def check_state(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"{self.name}: state must have shape ({self.n},), got {x.shape}")
        return x

    def check_input(self, u) -> Array:
        u = np.zeros(0) if u is None else np.atleast_1d(np.asarray(u, dtype=float)).reshape(-1)
        if u.shape != (self.m,):
            raise ValueError(f"{self.name}: input must have shape ({self.m},), got {u.shape}")
        return u

    def __call__(self, x, u) -> Array:
        return eval_dynamics(self, x, u)


@dataclass(frozen=True, eq=False)
class NondetAffinePlant(ContinuousAffinePlant):
    """``x' = f(x) + g1(x) u + g2(x) w`` with ``w`` confined to ``w_box``."""

    g2: Callable[[Array], Array] | None = None
    w_box: Box | None = None

    @property
    def p(self) -> int:
        return self.w_box.dim

    def deterministic(self) -> ContinuousAffinePlant:
        return ContinuousAffinePlant(
            self.name, self.n, self.m, self.f, self.g, self.u_box,
            self.linear, self.nonaffine, self.params,
        )


@dataclass(frozen=True, eq=False)
class DiscretePlant:
    """State-update map ``x+ = F(x, u)`` over one controller period ``dt``."""

    n: int
    m: int
    F: Callable[[Array, Array], Array]
    dt: float
    method: str
    u_box: Box | None = None

    def __call__(self, x, u) -> Array:
        return self.F(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)))


def eval_dynamics(plant: ContinuousAffinePlant, x, u) -> Array:
    x = plant.check_state(x)
    u = plant.check_input(u)
    dx = plant.f(x) + (plant.g(x) @ u if plant.m else 0.0)
    if plant.nonaffine is not None:
        dx = dx + plant.nonaffine(x, u)
    return np.asarray(dx, dtype=float)


def eval_nondet(plant: NondetAffinePlant, x, u, w) -> Array:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.shape != (plant.p,):
        raise ValueError(f"{plant.name}: disturbance must have shape ({plant.p},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("disturbance must be finite")
    return eval_dynamics(plant, x, u) + plant.g2(plant.check_state(x)) @ w


# --------------------------------------------------------------------------- discretization

def discretize(plant: ContinuousAffinePlant, dt: float, method: str = "rk4",
               substeps: int = 1) -> DiscretePlant:
    """Sampled-data model of ``plant`` with the input held over ``dt``.

    ``exact-zoh-linear`` uses the matrix exponential of the augmented
    ``[[A, B], [0, 0]]`` system and is only defined for plants that declare
    LTI structure. ``rk4`` takes ``substeps`` classical Runge-Kutta steps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if method == "exact-zoh-linear":
        if plant.linear is None or plant.nonaffine is not None:
            raise ValueError(f"exact ZOH requested for non-linear plant {plant.name!r}")
        from .integration import expm

        A, B = plant.linear
        n, m = plant.n, plant.m
        aug = np.zeros((n + m, n + m))
        aug[:n, :n] = A
        aug[:n, n:] = B
        E = expm(aug * dt)
        Ad, Bd = E[:n, :n].copy(), E[:n, n:].copy()
        if plant.name == "double_integrator":
            # closed form keeps the 10 Hz examples free of expm round-off
            Ad = np.array([[1.0, dt], [0.0, 1.0]])
            Bd = np.array([[0.5 * dt * dt], [dt]])

        def F(x, u, Ad=Ad, Bd=Bd):
            return Ad @ x + Bd @ u

        return DiscretePlant(n, m, F, dt, method, plant.u_box)
    if method == "rk4":
        from .integration import rk4_step

        h = dt / substeps

        def F(x, u):
            u = np.asarray(u, dtype=float)
            deriv = lambda s: eval_dynamics(plant, s, u)  # noqa: E731
            for _ in range(substeps):
                x = rk4_step(deriv, x, h)
            return x

        return DiscretePlant(plant.n, plant.m, F, dt, "rk4-discretized", plant.u_box)
    raise ValueError(f"unknown discretization method {method!r}")


# --------------------------------------------------------------------------- saturation

def saturate(u, box: Box, mode: str = "hard") -> Array:
    """Map ``u`` into ``box``.

    Smooth modes apply the unit-interval clamps ``tanh(v)`` and
    ``v / sqrt(1 + v^2)`` in box-normalized coordinates, so the result lies
    strictly inside the open box.
    """
    u = np.asarray(u, dtype=float)
    if mode == "hard":
        return box.clip(u)
    c, r = box.center, box.half_width
    safe_r = np.where(r > 0, r, 1.0)
    v = (u - c) / safe_r
    if mode == "tanh":
        s = np.tanh(v)
    elif mode == "rational":
        s = v / np.sqrt(1.0 + v * v)
    else:
        raise ValueError(f"unknown saturation mode {mode!r}")
    return np.where(r > 0, c + r * s, c)


# --------------------------------------------------------------------------- Jacobians

@dataclass(frozen=True, eq=False)
class FeedbackLaw:
    """State feedback ``u(x)`` with an optional analytic closed-loop Jacobian.

    ``jacobian(x)`` returns ``D(f + g u)(x)`` for the plant the law was built for.
    """

    name: str
    law: Callable[[Array], Array]
    jacobian: Callable[[Array], Array] | None = None

    def __call__(self, x) -> Array:
        return np.atleast_1d(np.asarray(self.law(np.asarray(x, dtype=float)), dtype=float))


def constant_law(u, name: str = "constant") -> FeedbackLaw:
    u = _frozen(u)
    return FeedbackLaw(name, lambda x: u)


def fd_step(x) -> Array:
    return 1e-6 * np.maximum(1.0, np.abs(x))


def numeric_jacobian(fun: StateFn, x, step=None) -> Array:
    """Central-difference Jacobian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if step is None else np.broadcast_to(step, x.shape)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        fp, fm = np.asarray(fun(x + e)), np.asarray(fun(x - e))
        cols.append((fp - fm) / (2 * h[i]))
    J = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError(f"non-finite dynamics near x={x}")
    return J


def closed_loop_jacobian(plant: ContinuousAffinePlant, controller, x) -> Array:
    x = plant.check_state(x)
    jac = getattr(controller, "jacobian", None)
    if jac is not None:
        return np.asarray(jac(x), dtype=float)
    return numeric_jacobian(lambda s: eval_dynamics(plant, s, controller(s)), x)


# --------------------------------------------------------------------------- catalog

CATALOG = (
    "double_integrator", "mass_spring_damper", "unicycle", "cwh",
    "rigid_body", "two_cart", "damped_linear", "mm_example",
)


def _positive(params, *keys):
    for k in keys:
        if not params[k] > 0:
            raise ValueError(f"parameter {k!r} must be positive, got {params[k]!r}")


def _linear_plant(name, A, B, u_box, params) -> ContinuousAffinePlant:
    A = _frozen(A, 2)
    B = _frozen(B, 2)
    return ContinuousAffinePlant(
        name, A.shape[0], B.shape[1],
        f=lambda x: A @ x, g=lambda x: B, u_box=u_box, linear=(A, B), params=params,
    )


def cross3(a, b) -> Array:
    """Cross product of two 3-vectors (``np.cross`` is slow for single vectors)."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def skew(a) -> Array:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def make_plant(name: str, params: Mapping[str, float] | None = None):
    """Build one of the catalog plants, filling unspecified parameters with defaults.

    Passing ``w_max`` to ``double_integrator`` returns the disturbed variant
    ``x2' = u + w`` with ``|w| <= w_max``.
    """
    given = dict(params or {})
    defaults: dict[str, dict[str, float]] = {
        "double_integrator": {"u_max": 1.0},
        "mass_spring_damper": {"mass": 1.0, "stiffness": 1.0, "damping": 1.0, "u_max": 1.0},
        "unicycle": {"speed": 1.0, "u_max": 1.0},
        "cwh": {"mass": 50.0, "n_cwh": 0.001027, "u_max": 0.5, "r_min": 0.5,
                "kappa1": 0.5, "kappa2": 2 * 0.001027, "thrust_scale": 1e-3},
        "rigid_body": {"J1": 12.0, "J2": 12.0, "J3": 5.0, "omega_max": 1.0, "k_d": 1.0,
                       "u_max": 1.0},
        "two_cart": {"b1": 0.1, "b2": 0.25, "u_max": 1.0},
        "damped_linear": {"damping": 1.0, "u_max": 1.0},
        "mm_example": {},
    }
    if name not in defaults:
        raise ValueError(f"unknown plant {name!r}; expected one of {', '.join(CATALOG)}")
    base = defaults[name]
    extra = set(given) - set(base) - ({"w_max"} if name == "double_integrator" else set())
    if extra:
        raise ValueError(f"unknown parameter(s) for {name}: {sorted(extra)}")
    p = {**base, **{k: float(v) for k, v in given.items()}}

    if name == "double_integrator":
        _positive(p, "u_max")
        plant = _linear_plant(name, [[0, 1], [0, 0]], [[0], [1]], Box.symmetric(p["u_max"]), p)
        if "w_max" in p:
            if p["w_max"] < 0:
                raise ValueError("w_max must be nonnegative")
            G2 = _frozen([[0.0], [1.0]], 2)
            return NondetAffinePlant(
                name, 2, 1, plant.f, plant.g, plant.u_box, plant.linear, None, p,
                g2=lambda x: G2, w_box=Box.symmetric(p["w_max"]),
            )
        return plant
    if name == "mass_spring_damper":
        _positive(p, "mass", "stiffness", "u_max")
        if p["damping"] < 0:
            raise ValueError("damping must be nonnegative")
        k, c, mass = p["stiffness"], p["damping"], p["mass"]
        return _linear_plant(name, [[0, 1], [-k / mass, -c / mass]], [[0], [1 / mass]],
                             Box.symmetric(p["u_max"]), p)
    if name == "damped_linear":
        _positive(p, "u_max")
        return _linear_plant(name, [[0, 1], [0, -p["damping"]]], [[0], [1]],
                             Box.symmetric(p["u_max"]), p)
    if name == "two_cart":
        _positive(p, "u_max")
        A = [[0, 1, 0, 0], [0, -p["b1"], 0, 0], [0, 0, 0, 1], [0, 0, 0, -p["b2"]]]
        B = [[0, 0], [1, 0], [0, 0], [0, 1]]
        return _linear_plant(name, A, B, Box.symmetric(p["u_max"], 2), p)
    if name == "unicycle":
        _positive(p, "u_max")
        v = p["speed"]
        G = _frozen([[0.0], [1.0]], 2)
        return ContinuousAffinePlant(
            name, 2, 1, f=lambda x: np.array([v * np.cos(x[1]), 0.0]), g=lambda x: G,
            u_box=Box.symmetric(p["u_max"]), params=p,
        )
    if name == "rigid_body":
        _positive(p, "J1", "J2", "J3", "u_max")
        J = np.diag([p["J1"], p["J2"], p["J3"]])
        Jinv = np.diag(1.0 / np.diag(J))
        Jinv.setflags(write=False)
        return ContinuousAffinePlant(
            name, 3, 3, f=lambda x: Jinv @ (-cross3(x, J @ x)), g=lambda x: Jinv,
            u_box=Box.symmetric(p["u_max"], 3), params=p,
        )
    if name == "cwh":
        _positive(p, "mass", "n_cwh", "u_max", "r_min", "thrust_scale")
        nn, s = p["n_cwh"], p["thrust_scale"] / p["mass"]
        G = np.zeros((5, 2))
        G[2, 0] = G[3, 1] = s
        G.setflags(write=False)

        def f(x):
            return np.array([x[2], x[3], 3 * nn * nn * x[0] + 2 * nn * x[3], -2 * nn * x[2], 0.0])

        def fuel(x, u):
            return np.array([0.0, 0.0, 0.0, 0.0, -abs(u[0]) - abs(u[1])])

        return ContinuousAffinePlant(
            name, 5, 2, f=f, g=lambda x: G, u_box=Box.symmetric(p["u_max"], 2),
            nonaffine=fuel, params=p,
        )
    # mm_example: autonomous system used by the reachability demo
    G0 = np.zeros((2, 0))
    return ContinuousAffinePlant(
        name, 2, 0, f=lambda x: np.array([x[1] ** 2 + 2.0, x[0]]), g=lambda x: G0,
        u_box=Box(np.zeros(0), np.zeros(0)), params=p,
    )


def rigid_body_backup(plant: ContinuousAffinePlant) -> FeedbackLaw:
    """Detumbling law ``tanh(x x Jx - k_d Jx)`` with its analytic closed-loop Jacobian."""
    p = plant.params
    J = np.diag([p["J1"], p["J2"], p["J3"]])
    Jinv = np.diag(1.0 / np.diag(J))
    kd = p["k_d"]

    def law(x):
        Jx = J @ x
        return np.tanh(cross3(x, Jx) - kd * Jx)

    def jac(x):
        Jx = J @ x
        gyro = skew(x) @ J - skew(Jx)  # D(x x Jx)
        s = cross3(x, Jx) - kd * Jx
        du = (1.0 - np.tanh(s) ** 2)[:, None] * (gyro - kd * J)
        return Jinv @ (-gyro) + Jinv @ du

    return FeedbackLaw("rigid_body_detumble", law, jac)


def linear_feedback(plant: ContinuousAffinePlant, K, name: str = "linear") -> FeedbackLaw:
    """``u = K x`` (no saturation) with closed-loop Jacobian ``A + B K``."""
    if plant.linear is None:
        raise ValueError("linear feedback requires an LTI plant")
    K = _frozen(K, 2)
    A, B = plant.linear
    Acl = A + B @ K
    return FeedbackLaw(name, lambda x: K @ x, lambda x: Acl)


def constant_backup(plant: ContinuousAffinePlant, u, name: str = "constant") -> FeedbackLaw:
    """Constant input; the closed-loop Jacobian is ``Df`` (analytic for LTI plants)."""
    u = _frozen(u)
    jac = None
    if plant.linear is not None:
        A = plant.linear[0]
        jac = lambda x: A  # noqa: E731
    return FeedbackLaw(name, lambda x: u, jac)
