"""Invariant checks run by ``rtakit validate``.

Every check compares a library result against an independent oracle: brute
force active-set enumeration for the QP, central differences for gradients and
sensitivities, Monte-Carlo sampling for reachable sets and fine closed-loop
runs for safety.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import qp
from .dynamics import Box, make_plant, numeric_jacobian
from .harness import TOL_SAFETY, run_closed_loop
from .integration import flow, flow_with_sensitivity
from .reach import (Hyperrectangle, disturbed_di_backup_decomposition,
                    disturbed_di_backup_field, mm_example_decomposition, mm_example_field,
                    monte_carlo_endpoints, reach_overapprox, validate_decomposition)
from .scenarios import build_scenario, get_scenario, scenario_ids
from .sets import (LevelSet, cwh_backup_membership, cwh_manifold_defect, nagumo_boundary_check,
                   sample_gradient_check)

Array = np.ndarray

FAULTS = ("barrier-sign",)


@dataclass
class CheckResult:
    scenario: str
    name: str
    passed: bool
    detail: str = ""


# --------------------------------------------------------------------------- QP oracle

def random_qp(rng: np.random.Generator, m: int, max_rows: int = 6) -> qp.QPSpec:
    """Random box-bounded projection problem; some draws are infeasible."""
    k = int(rng.integers(0, max_rows + 1))
    A = rng.normal(size=(k, m))
    b = rng.normal(loc=1.0, scale=1.5, size=k)
    half = rng.uniform(0.2, 2.0, size=m)
    centre = rng.uniform(-0.5, 0.5, size=m)
    u_des = rng.normal(scale=2.0, size=m)
    return qp.QPSpec(u_des, A, b, Box(centre - half, centre + half))


def enumeration_oracle(spec: qp.QPSpec, tol: float = 1e-9) -> Array | None:
    """Exact minimiser by trying every set of at most ``m`` active constraints.

    The projection onto a polytope is the projection onto the affine hull of
    one of its faces, so the best feasible face projection is optimal. Returns
    ``None`` when no candidate is feasible.
    """
    m = spec.m
    eye = np.eye(m)
    N = np.vstack([spec.A, eye, -eye])
    c = np.concatenate([-spec.b, spec.box.lower, -spec.box.upper])
    cands = [spec.u_des[None, :]]
    for size in range(1, m + 1):
        idx = np.array(list(itertools.combinations(range(N.shape[0]), size)))
        M = N[idx]  # (K, size, m)
        G = M @ np.swapaxes(M, 1, 2)
        # drop rank-deficient active sets (parallel or duplicate rows)
        ok = np.abs(np.linalg.det(G)) > 1e-12 * np.maximum(1.0, np.max(np.abs(G), axis=(1, 2)))
        if not np.any(ok):
            continue
        M, G, idx = M[ok], G[ok], idx[ok]
        rhs = c[idx] - M @ spec.u_des
        lam = np.linalg.solve(G, rhs[..., None])[..., 0]
        cands.append(spec.u_des + np.einsum("ksm,ks->km", M, lam))
    U = np.vstack(cands)
    feas = np.all(U @ N.T - c >= -tol, axis=1)
    if not np.any(feas):
        return None
    U = U[feas]
    return U[int(np.argmin(np.sum((U - spec.u_des) ** 2, axis=1)))]


def grid_oracle(spec: qp.QPSpec, resolution: float) -> Array | None:
    """Best feasible point of a uniform grid over the box (``None`` if none is feasible)."""
    axes = [np.linspace(lo, hi, max(2, int(np.ceil((hi - lo) / resolution)) + 1))
            for lo, hi in zip(spec.box.lower, spec.box.upper)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.m)
    if spec.A.shape[0]:
        U = U[np.all(U @ spec.A.T + spec.b >= 0.0, axis=1)]
    if not len(U):
        return None
    return U[int(np.argmin(np.sum((U - spec.u_des) ** 2, axis=1)))]


def check_qp_oracle(n_problems: int, seed: int, dims=(1, 2, 3)) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst_obj = worst_kkt = 0.0
    mismatches = 0
    for i in range(n_problems):
        spec = random_qp(rng, dims[i % len(dims)])
        sol = qp.solve(spec)
        ref = enumeration_oracle(spec)
        if (ref is None) == sol.optimal:
            mismatches += 1
            continue
        if ref is not None:
            worst_obj = max(worst_obj, abs(spec.objective(sol.u_act) - spec.objective(ref)))
            worst_kkt = max(worst_kkt, sol.kkt_residual)
    ok = mismatches == 0 and worst_obj <= 1e-6 and worst_kkt <= qp.TOL_KKT
    return ok, (f"{n_problems} problems, feasibility mismatches {mismatches}, "
                f"worst objective gap {worst_obj:.2e}, worst KKT {worst_kkt:.2e}")


# --------------------------------------------------------------------------- sensitivity

def sensitivity_error(plant, controller, x0, T: float, dt: float, h: float = 1e-5) -> float:
    """Largest relative gap between ``Q(T)`` and central differences of the flow."""
    x0 = np.asarray(x0, dtype=float)
    Q = flow_with_sensitivity(plant, controller, x0, T, dt).Q[-1]
    fd = numeric_jacobian(lambda z: flow(plant, controller, z, T, dt).final, x0,
                          step=np.full(x0.size, h))
    return float(np.max(np.abs(Q - fd)) / max(1.0, float(np.max(np.abs(fd)))))


# --------------------------------------------------------------------------- per-scenario suites

def _smooth_members(*sets):
    out = []
    for s in sets:
        if s is None:
            continue
        out += [m for m in s.members if isinstance(m, LevelSet) and m.smooth
                and m.grad is not None]
    return out


def _safety_checks(sid: str, seed: int, fault: str) -> list[CheckResult]:
    sc = get_scenario(sid)
    out = []
    for variant in sc.filters:
        if variant == "none":
            continue
        cfg = build_scenario(sid, variant, seed=seed)
        if fault:
            cfg = replace(cfg, filter=replace(cfg.filter, fault=fault))
        res = run_closed_loop(cfg)
        s = res.summary
        ok = not res.truncated and not s.violated
        if cfg.safe_set is not None and variant in ("rbsf", "sbsf"):
            ok = ok and s.min_safe_margin >= -TOL_SAFETY
        u = res.u_act
        admissible = bool(np.all(u >= cfg.plant.u_box.lower - 1e-12)
                          and np.all(u <= cfg.plant.u_box.upper + 1e-12))
        out.append(CheckResult(sid, f"safety/{variant}", ok and admissible,
                               f"min margin {s.min_constraint_margin:.4g}, "
                               f"{s.activation_steps} activations"
                               + ("" if admissible else ", input outside box")))
    return out


def _gradient_checks(sid: str, seed: int) -> list[CheckResult]:
    sc = get_scenario(sid)
    rng = np.random.default_rng(seed)
    x0 = np.asarray(sc.x0, dtype=float)
    states = [x0 + rng.normal(scale=0.5, size=x0.size) for _ in range(20)]
    sets = []
    for variant in sc.filters:
        if variant == "none":
            continue
        fc = build_scenario(sid, variant).filter
        sets += _smooth_members(fc.constraint, fc.safe_set, fc.backup_set)
    if not sets:
        cfg = build_scenario(sid, "none")
        sets = _smooth_members(cfg.constraint)
    worst = max((sample_gradient_check(s, states) for s in sets), default=0.0)
    return [CheckResult(sid, "set-gradients", worst <= 1e-4,
                        f"{len(sets)} sets, worst relative gap {worst:.2e}")]


def _sensitivity_checks(sid: str) -> list[CheckResult]:
    sc = get_scenario(sid)
    out = []
    for variant in sc.filters:
        if variant != "iasif":
            continue
        fc = build_scenario(sid, variant).filter
        x0 = np.asarray(sc.x0, dtype=float) + 0.1
        err = sensitivity_error(fc.plant, fc.backup, x0, fc.horizon, fc.horizon / fc.n_backup)
        out.append(CheckResult(sid, "sensitivity", err <= 1e-3, f"relative gap {err:.2e}"))
    return out


def _nagumo_checks(sid: str, seed: int) -> list[CheckResult]:
    """Backup sets must be invariant under the backup law (boundary sub-tangency)."""
    out = []
    sc = get_scenario(sid)
    for variant in sc.filters:
        if variant != "iasif":
            continue
        fc = build_scenario(sid, variant).filter
        if fc.backup_set is None or len(fc.backup_set.members) != 1:
            continue
        rep = nagumo_boundary_check(fc.plant, fc.backup, fc.backup_set.members[0], 200, seed)
        out.append(CheckResult(sid, "nagumo/backup-set", rep.ok,
                               f"{rep.n_boundary} boundary points, min rate {rep.min_rate:.3g}"))
    return out


def _containment_mm(seed: int) -> list[CheckResult]:
    d = mm_example_decomposition()
    rect0 = Hyperrectangle(np.array([-0.5, -0.5]), np.array([0.5, 0.5]))
    R = reach_overapprox(d, None, rect0, 1.0)
    pts = monte_carlo_endpoints(mm_example_field, rect0, None, 1.0, 1000, seed)
    inside = int(np.sum(np.all((pts >= R.lower - 1e-9) & (pts <= R.upper + 1e-9), axis=1)))
    rep = validate_decomposition(d, lambda x, w: mm_example_field(x), Box(-3 * np.ones(2),
                                 3 * np.ones(2)), None, 2000, seed)
    return [CheckResult("mm_reach_demo", "containment", inside == len(pts),
                        f"{inside}/{len(pts)} endpoints inside [{R.lower}, {R.upper}]"),
            CheckResult("mm_reach_demo", "decomposition", rep.ok,
                        f"{rep.violations} violations on {rep.n_samples} samples")]


def _containment_ddi(seed: int) -> list[CheckResult]:
    plant = make_plant("double_integrator", {"w_max": 0.2})
    d = disturbed_di_backup_decomposition(-1.0)
    F = disturbed_di_backup_field(-1.0)
    rect0 = Hyperrectangle(np.array([-1.0, 0.4]), np.array([-0.8, 0.6]))
    R = reach_overapprox(d, plant.w_box, rect0, 1.0)
    pts = monte_carlo_endpoints(F, rect0, plant.w_box, 1.0, 1000, seed)
    inside = int(np.sum(np.all((pts >= R.lower - 1e-9) & (pts <= R.upper + 1e-9), axis=1)))
    rep = validate_decomposition(d, F, Box(-3 * np.ones(2), 3 * np.ones(2)), plant.w_box, 2000,
                                 seed)
    return [CheckResult("disturbed_double_integrator", "containment", inside == len(pts),
                        f"{inside}/{len(pts)} endpoints inside"),
            CheckResult("disturbed_double_integrator", "decomposition", rep.ok,
                        f"{rep.violations} violations on {rep.n_samples} samples")]


def cwh_seed_defects(r: float = 1.0) -> tuple[float, float, float]:
    """Unforced CWH checks: (relative manifold defect after one period, rest-point drift, norm)."""
    plant = make_plant("cwh")
    n = plant.params["n_cwh"]
    zero = lambda x: np.zeros(2)  # noqa: E731
    x_nmt = np.array([r, 0.0, 0.0, -2 * n * r, 1.0])
    period = 2 * np.pi / n
    end = flow(plant, zero, x_nmt, period, 1.0).final
    rel = cwh_manifold_defect(end, n) / float(np.linalg.norm(end[:4]))
    x_rest = np.array([0.0, 2.0 * r, 0.0, 0.0, 1.0])
    drift = float(np.max(np.abs(flow(plant, zero, x_rest, period, 1.0).final - x_rest)))
    return rel, drift, float(np.linalg.norm(end))


def _cwh_checks() -> list[CheckResult]:
    rel, drift, _ = cwh_seed_defects()
    ok_member = cwh_backup_membership(np.array([0.0, 2.0, 0.0, 0.0, 1.0]), "invariant_points")
    return [CheckResult("cwh_invariance", "nmt-manifold", rel < 1e-3,
                        f"relative defect after one period {rel:.2e}"),
            CheckResult("cwh_invariance", "rest-points", drift <= 1e-9 and ok_member,
                        f"drift {drift:.1e}")]


def run_validation(scenarios=None, seed: int = 0, fault: str = "",
                   qp_problems: int = 300) -> list[CheckResult]:
    if fault and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; valid: {', '.join(FAULTS)}")
    ids = list(scenarios) if scenarios else scenario_ids()
    results: list[CheckResult] = []
    ok, detail = check_qp_oracle(qp_problems, seed)
    results.append(CheckResult("*", "qp-oracle", ok, detail))
    for sid in ids:
        get_scenario(sid)
        results += _gradient_checks(sid, seed)
        results += _sensitivity_checks(sid)
        results += _nagumo_checks(sid, seed)
        if sid == "mm_reach_demo":
            results += _containment_mm(seed)
        if sid == "disturbed_double_integrator":
            results += _containment_ddi(seed)
        if sid == "cwh_invariance":
            results += _cwh_checks()
        results += _safety_checks(sid, seed, fault)
    return results

