"""Small dense QP: project ``u_des`` onto ``{u in box : a_i.u + b_i >= 0}``.

The solver is the Goldfarb-Idnani dual active-set method specialised to the
identity Hessian. It starts from the unconstrained minimiser ``u_des`` and adds
violated constraints one at a time, so an empty feasible set is detected with a
Farkas certificate instead of a phase-one problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import Box

Array = np.ndarray

MAX_INPUT_DIM = 8
TOL_FEAS = 1e-9
TOL_KKT = 1e-8
_EPS = 1e-12


class QPUsageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QPSpec:
    """``min ||u - u_des||^2`` s.t. ``A u + b >= 0`` and ``u`` in ``box``."""

    u_des: Array
    A: Array
    b: Array
    box: Box

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u_des, dtype=float))
        m = u.size
        if m < 1:
            raise QPUsageError("QP needs at least one decision variable")
        if m > MAX_INPUT_DIM:
            raise QPUsageError(f"input dimension {m} exceeds solver cap {MAX_INPUT_DIM}")
        A = np.asarray(self.A, dtype=float).reshape(-1, m)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise QPUsageError("constraint rows and offsets differ in count")
        if self.box.dim != m:
            raise QPUsageError(f"box dimension {self.box.dim} does not match input dimension {m}")
        for arr in (u, A, b, self.box.lower, self.box.upper):
            if not np.all(np.isfinite(arr)):
                raise QPUsageError("QP data must be finite")
        object.__setattr__(self, "u_des", u)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_constraints(cls, u_des, constraints: Sequence[tuple[Array, float]], box: Box):
        m = np.atleast_1d(u_des).size
        if constraints:
            A = np.array([np.atleast_1d(a) for a, _ in constraints], dtype=float)
            b = np.array([bb for _, bb in constraints], dtype=float)
        else:
            A, b = np.zeros((0, m)), np.zeros(0)
        return cls(u_des, A, b, box)

    @property
    def m(self) -> int:
        return self.u_des.size

    def objective(self, u) -> float:
        d = np.asarray(u, dtype=float) - self.u_des
        return float(d @ d)

    def slack(self, u) -> Array:
        return self.A @ np.asarray(u, dtype=float) + self.b


@dataclass(frozen=True, eq=False)
class QPSolution:
    u_act: Array
    status: str  # "optimal" | "infeasible"
    active_indices: tuple[int, ...] = ()
    multipliers: Array = field(default_factory=lambda: np.zeros(0))
    box_multipliers: Array = field(default_factory=lambda: np.zeros(0))
    kkt_residual: float = float("nan")
    iterations: int = 0
    certificate: Array | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _stacked(spec: QPSpec):
    """All constraints as ``N u >= c``: user rows first, then lower and upper box rows."""
    m = spec.m
    eye = np.eye(m)
    N = np.vstack([spec.A, eye, -eye])
    c = np.concatenate([-spec.b, spec.box.lower, -spec.box.upper])
    return N, c


def solve(spec: QPSpec, max_iter: int | None = None) -> QPSolution:
    N, c = _stacked(spec)
    k_user = spec.A.shape[0]
    rows = N.shape[0]
    max_iter = max_iter or 50 * (rows + 1)
    x = spec.u_des.copy()
    active: list[int] = []
    lam: list[float] = []  # multipliers of the 0.5||u - u_des||^2 problem
    it = 0

    while True:
        s = N @ x - c
        viol = np.flatnonzero(s < -TOL_FEAS)
        if viol.size == 0:
            break
        norms = np.linalg.norm(N[viol], axis=1)
        p = int(viol[np.argmin(s[viol] / np.maximum(norms, _EPS))])
        if p in active:
            # numerically re-violated active row; nothing more can be gained
            break
        lam_p = 0.0
        n_p = N[p]
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("active-set iteration cap reached (cycling)")
            if active:
                Na = N[active].T
                r = np.linalg.lstsq(Na, n_p, rcond=None)[0]
                z = n_p - Na @ r
            else:
                r = np.zeros(0)
                z = n_p.copy()
            zz = float(z @ n_p)
            t2 = np.inf if np.linalg.norm(z) <= 1e-10 * max(1.0, np.linalg.norm(n_p)) else \
                -(n_p @ x - c[p]) / zz
            t1, drop = np.inf, -1
            for j, rj in enumerate(r):
                if rj > _EPS:
                    ratio = lam[j] / rj
                    if ratio < t1:
                        t1, drop = ratio, j
            if not np.isfinite(t1) and not np.isfinite(t2):
                cert = np.zeros(rows)
                cert[p] = 1.0
                for j, idx in enumerate(active):
                    cert[idx] = -r[j]
                return _finish(spec, x, "infeasible", active, lam, k_user, it, certificate=cert)
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
            lam = [lj - t * rj for lj, rj in zip(lam, r)]
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam.append(lam_p)
                break
            del active[drop]
            del lam[drop]

    x = spec.box.clip(x)
    return _finish(spec, x, "optimal", active, lam, k_user, it)


def _finish(spec, x, status, active, lam, k_user, it, certificate=None) -> QPSolution:
    m = spec.m
    mult = np.zeros(k_user)
    box_mult = np.zeros(m)
    for idx, lj in zip(active, lam):
        lj = 2.0 * max(lj, 0.0)  # rescale to the ||u - u_des||^2 objective
        if idx < k_user:
            mult[idx] = lj
        elif idx < k_user + m:
            box_mult[idx - k_user] += lj
        else:
            box_mult[idx - k_user - m] -= lj
    user_active = tuple(sorted(i for i in active if i < k_user))
    sol = QPSolution(np.asarray(x, dtype=float), status, user_active, mult, box_mult,
                     iterations=it, certificate=certificate)
    if status == "optimal":
        object.__setattr__(sol, "kkt_residual", kkt_residual(spec, sol))
    return sol


def kkt_residual(spec: QPSpec, candidate: QPSolution) -> float:
    """Stationarity norm plus complementary-slackness and primal-violation sums."""
    u = np.asarray(candidate.u_act, dtype=float)
    lam = np.asarray(candidate.multipliers, dtype=float)
    mu = np.asarray(candidate.box_multipliers, dtype=float)
    if lam.size == 0:
        lam = np.zeros(spec.A.shape[0])
    if mu.size == 0:
        mu = np.zeros(spec.m)
    stat = 2.0 * (u - spec.u_des) - spec.A.T @ lam - mu
    slack = spec.slack(u)
    lo_slack = u - spec.box.lower
    hi_slack = spec.box.upper - u
    comp = float(np.sum(np.abs(lam * slack)))
    comp += float(np.sum(np.abs(np.maximum(mu, 0.0) * lo_slack)))
    comp += float(np.sum(np.abs(np.minimum(mu, 0.0) * hi_slack)))
    primal = float(np.sum(np.maximum(-slack, 0.0)) + np.sum(np.maximum(-lo_slack, 0.0))
                   + np.sum(np.maximum(-hi_slack, 0.0)))
    dual = float(np.sum(np.maximum(-lam, 0.0)))
    return float(np.linalg.norm(stat)) + comp + primal + dual


def feasible_interval(spec: QPSpec) -> tuple[float, float] | None:
    """Feasible set of a scalar-input QP as ``(lo, hi)``, or ``None`` when empty."""
    if spec.m != 1:
        raise QPUsageError("feasible_interval is defined for scalar inputs only")
    lo, hi = float(spec.box.lower[0]), float(spec.box.upper[0])
    for a, b in zip(spec.A[:, 0], spec.b):
        if abs(a) <= _EPS:
            if b < -TOL_FEAS:
                return None
        elif a > 0:
            lo = max(lo, -b / a)
        else:
            hi = min(hi, -b / a)
    if lo > hi + TOL_FEAS:
        return None
    return lo, max(lo, hi)
