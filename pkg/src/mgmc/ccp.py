"""Convex-concave procedure driver shared by the MEE, EE and SUM criteria.

``make_fip`` builds a feasible initial point from random precoders and an
admission LP, ``run`` iterates convexify / solve / update until the
penalized surrogate objective stalls, and ``round_and_certify`` maps the
relaxed iterate to a binary schedule that is checked against the original
combinatorial constraints.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import conic
from .criteria import (
    CRITERIA,
    IterateState,
    PenaltyState,
    active_pairs,
    build_fip_lp,
    build_subproblem,
    convexified_margins,
    dc_objective,
    sum_threshold,
    theta_star,
)
from .system import AssignmentState, Metrics, SystemConfig, qos_satisfied, score, sinr_matrix

__all__ = [
    "CONVERGED",
    "MAX_ITERS",
    "SUBPROBLEM_FAILURE",
    "DEFAULT_PENALTIES",
    "CcpConfig",
    "Verdict",
    "SolveReport",
    "make_fip",
    "run",
    "solve_instance",
    "round_and_certify",
    "update_penalties",
    "initial_penalties",
    "fip_structural_violations",
]

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"
SUBPROBLEM_FAILURE = "SubproblemFailure"

# (lambda_eta, lambda_delta, omega) initial values per criterion
DEFAULT_PENALTIES = {
    "MEE": (0.01, 0.01, 2.5),
    "EE": (0.5, 0.5, 5.0),
    "SUM": (0.05, 0.05, 1.0),
}

FIP_MARGIN = 1e-3
FEAS_TOL = 1e-7


@dataclass(frozen=True)
class CcpConfig:
    """Algorithm settings.  Penalty fields left as ``None`` take the criterion defaults."""

    criterion: str = "MEE"
    delta: float = 1e-4
    max_iters: int = 100
    lambda_eta: float | None = None
    lambda_delta: float | None = None
    omega: float | None = None
    lambda_growth: float = 1.2
    omega_step: float = 1.5
    omega_mode: str = "add"
    lambda_max: float = 1e4
    tau_bin: float = 1e-3
    fip_restarts: int = 3
    stall_iters: int = 20
    coupling: str = "rate-lower-bound"
    capacity: str = "per-user"
    solver_tol: float = 1e-10
    solver_max_iter: int = 200

    def __post_init__(self):
        crit = str(self.criterion).upper()
        object.__setattr__(self, "criterion", crit)
        if crit not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lambda_growth < 1 or self.omega_step < 0:
            raise ValueError("penalty growth must be nondecreasing")
        if self.omega_mode not in ("add", "mul"):
            raise ValueError("omega_mode must be 'add' or 'mul'")
        if self.omega_mode == "mul" and self.omega_step < 1:
            raise ValueError("multiplicative omega_step must be >= 1")
        if self.fip_restarts < 1:
            raise ValueError("fip_restarts must be >= 1")
        for name in ("lambda_eta", "lambda_delta", "omega"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")

    def frozen(self) -> "CcpConfig":
        """Same settings with penalties held at their initial values."""
        return CcpConfig(**{**asdict(self), "lambda_growth": 1.0, "omega_step": 0.0, "omega_mode": "add"})

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["delta"]):
            d["delta"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "CcpConfig":
        d = dict(d or {})
        if d.get("delta") in ("inf", "Infinity"):
            d["delta"] = math.inf
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ccp field(s): {sorted(unknown)}")
        return cls(**d)


def initial_penalties(ccp: CcpConfig) -> PenaltyState:
    le, ld, om = DEFAULT_PENALTIES[ccp.criterion]
    return PenaltyState(le if ccp.lambda_eta is None else ccp.lambda_eta,
                        ld if ccp.lambda_delta is None else ccp.lambda_delta,
                        om if ccp.omega is None else ccp.omega)


def update_penalties(pen: PenaltyState, ccp: CcpConfig, k: int) -> PenaltyState:
    """Penalty schedule after iteration ``k``: geometric for lambda, additive (default) for omega."""
    if k < 1:
        raise ValueError("k must be >= 1")
    g = ccp.lambda_growth
    le = min(pen.lambda_eta * g, max(ccp.lambda_max, pen.lambda_eta))
    ld = min(pen.lambda_delta * g, max(ccp.lambda_max, pen.lambda_delta))
    om = pen.omega + ccp.omega_step if ccp.omega_mode == "add" else pen.omega * ccp.omega_step
    return PenaltyState(le, ld, om)


# ---------------------------------------------------------------------------
# feasible initial point
# ---------------------------------------------------------------------------

def _random_precoder(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    W = (rng.standard_normal((cfg.M, cfg.G)) + 1j * rng.standard_normal((cfg.M, cfg.G))) / np.sqrt(2.0)
    return W * np.sqrt(cfg.P_T / np.sum(np.abs(W) ** 2))


def _solve_fip_lp(cfg: SystemConfig, H, W0: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    prog = build_fip_lp(cfg, H, W0)
    sol = conic.solve(prog)
    eta = np.zeros((cfg.N, cfg.G))
    if not sol.ok:
        # the all-zero assignment is always feasible
        return eta, np.zeros(cfg.G), 0.0
    pairs = prog.names["pairs"]
    if len(pairs):
        eta[pairs[:, 0], pairs[:, 1]] = sol.x[prog.names["eta"]]
    delta = sol.x[prog.names["delta"]]
    return eta, delta, float(sol.objective)


def _state_from_assignment(cfg: SystemConfig, H, criterion: str, W0: np.ndarray,
                           eta0: np.ndarray, delta0: np.ndarray, margin: float = FIP_MARGIN) -> IterateState:
    """Derive every slack from precoders and a (relaxed) assignment so that the
    convexified constraints hold at the resulting point."""
    W0 = np.asarray(W0, dtype=complex)
    mask = cfg.interest_mask > 0
    gamma0 = sinr_matrix(H, W0, cfg.sigma2)
    alpha0 = 1.0 + gamma0
    rate0 = np.log2(alpha0)
    eps = cfg.eps
    eta = np.where(mask, np.clip(eta0, 0.0, 1.0), 0.0)
    eta[eta < 1e-7] = 0.0
    # keep eta_ij eps_j <= log2(alpha_ij) exactly despite solver round-off
    with np.errstate(divide="ignore", invalid="ignore"):
        cap = np.where(eps[None, :] > 0, rate0 / eps[None, :], np.inf)
    eta = np.minimum(eta, cap)
    delta = np.clip(np.asarray(delta0, dtype=float), 0.0, 1.0)
    if criterion == "SUM":
        thr = sum_threshold(cfg)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            eta = np.minimum(eta, np.where(thr > 0, gamma0 / thr, np.inf))
    # per-group rate slack: tightest member ratio log2(alpha) / eta
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(eta > 0, rate0 / np.where(eta > 0, eta, 1.0), np.inf)
    ratio = ratio.min(axis=0)
    tstar = theta_star(cfg, H)
    if criterion == "EE":
        delta = np.minimum(1.0, eta.sum(axis=0))
        Theta = np.minimum(np.where(np.isfinite(ratio), ratio, 0.0), delta * tstar)
        Theta = np.maximum(Theta, delta * eps)
        Theta = np.where(delta > 0, Theta, 0.0)
        rates = cfg.B * Theta
        zeta = rates.copy()
    else:
        Theta = np.where(np.isfinite(ratio), np.minimum(ratio, max(tstar, float(eps.max()))), eps)
        Theta = np.maximum(Theta, eps)
        zeta = cfg.B * delta * Theta
        rates = zeta
    t = cfg.P0 + np.sum(np.abs(W0) ** 2) / cfg.rho + cfg.Pi_coeff * float(np.sum(cfg.p(rates))) + margin
    Gamma = float(np.sqrt(np.sum(cfg.B * cfg.psi * Theta))) if criterion == "EE" else 0.0
    return IterateState(W0.copy(), eta, delta, Theta, zeta, alpha0, t, Gamma)


def fip_structural_violations(cfg: SystemConfig, H, criterion: str, state: IterateState,
                              tol: float = FEAS_TOL, coupling: str = "rate-lower-bound") -> list[str]:
    """Every convexified constraint evaluated at its own expansion point."""
    out = []
    s = state
    mask = cfg.interest_mask > 0
    if np.any(s.eta < -tol) or np.any(s.eta > 1 + tol) or np.any(s.delta < -tol) or np.any(s.delta > 1 + tol):
        out.append("box")
    if np.any(s.eta[~mask] != 0):
        out.append("interest mask")
    if np.any(s.eta.sum(axis=1) > 1 + tol):
        out.append("per-user sum")
    if np.any(s.eta.sum(axis=0) > cfg.N * s.delta + tol):
        out.append("group capacity")
    if np.any(s.eta > s.delta[None, :] + tol):
        out.append("per-user capacity")
    if np.sum(np.abs(s.W) ** 2) > cfg.P_T * (1 + tol):
        out.append("power budget")
    if criterion in ("MEE", "EE"):
        if np.any(s.Theta < s.delta * cfg.eps - tol):
            out.append("QoS")
        if np.any(s.alpha[mask] < 1 - tol):
            out.append("alpha >= 1")
    if criterion == "EE":
        if np.any(s.Theta > s.delta * theta_star(cfg, H) + tol):
            out.append("rate cap")
        if np.any(s.eta.sum(axis=0) < s.delta - tol):
            out.append("group link")
        if s.Gamma ** 2 > np.sum(cfg.B * cfg.psi * s.Theta) + tol:
            out.append("throughput")
    margins = convexified_margins(criterion, cfg, H, s, s, mask, coupling=coupling)
    for fam, m in margins.items():
        if m.size and np.min(m) < -tol * (1 + np.max(np.abs(m))):
            out.append(fam)
    return out


def make_fip(cfg: SystemConfig, H, ccp: CcpConfig, seed: int | None = 0,
             W0: np.ndarray | None = None) -> IterateState:
    """Feasible initial point: best admission LP over ``ccp.fip_restarts`` precoder draws.

    Passing ``W0`` skips the random draws and uses the given precoders.
    """
    H = np.asarray(H, dtype=complex)
    rng = np.random.default_rng(seed)
    if W0 is not None:
        draws = [np.asarray(W0, dtype=complex)]
    else:
        draws = [_random_precoder(cfg, rng) for _ in range(ccp.fip_restarts)]
    best = None
    for W in draws:
        eta, delta, obj = _solve_fip_lp(cfg, H, W)
        if best is None or obj > best[0] + 1e-9:
            best = (obj, W, eta, delta)
    _, W, eta, delta = best
    state = _state_from_assignment(cfg, H, ccp.criterion, W, eta, delta)
    if fip_structural_violations(cfg, H, ccp.criterion, state, coupling=ccp.coupling):
        # trivial point: silent precoders, nobody admitted
        zero = np.zeros((cfg.M, cfg.G), dtype=complex)
        state = _state_from_assignment(cfg, H, ccp.criterion, zero, np.zeros((cfg.N, cfg.G)),
                                       np.ones(cfg.G) if ccp.criterion != "EE" else np.zeros(cfg.G))
        bad = fip_structural_violations(cfg, H, ccp.criterion, state, coupling=ccp.coupling)
        if bad:
            raise RuntimeError(f"feasible initial point check failed: {bad}")
    return state


# ---------------------------------------------------------------------------
# rounding and certification
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    feasible: bool
    violations: list[str] = field(default_factory=list)
    dropped_users: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "violations": list(self.violations),
                "dropped_users": [list(p) for p in self.dropped_users]}


def round_and_certify(cfg: SystemConfig, H, state: IterateState) -> tuple[AssignmentState, np.ndarray, Verdict]:
    """Binary schedule from a relaxed iterate plus a check of the original constraints.

    Returns the rounded assignment, the (possibly pruned) precoders and the
    verdict.  Users failing QoS at the final precoders are dropped, never added.
    """
    H = np.asarray(H, dtype=complex)
    mask = cfg.interest_mask > 0
    n_int = mask.sum(axis=0)
    order = sorted(range(cfg.G), key=lambda j: (-float(state.delta[j]), -int(n_int[j]), j))
    selected = np.zeros(cfg.G, dtype=bool)
    selected[order[:cfg.M]] = True
    W = state.W.copy()
    W[:, ~selected] = 0.0
    cand = (state.eta > 0.5) & selected[None, :] & mask
    eta = np.zeros((cfg.N, cfg.G))
    for i in range(cfg.N):
        js = np.flatnonzero(cand[i])
        if js.size:
            eta[i, js[np.argmax(state.eta[i, js])]] = 1.0
    pw = float(np.sum(np.abs(W) ** 2))
    if pw > cfg.P_T:
        W *= np.sqrt(cfg.P_T / pw)
    a = AssignmentState(eta, selected.astype(float))
    _, viol = qos_satisfied(cfg, H, W, a)
    for i, j in viol:
        eta[i, j] = 0.0
    # silent precoders for selected groups left without members
    W[:, eta.sum(axis=0) == 0] = 0.0
    a = AssignmentState(eta, selected.astype(float))
    problems = a.structural_violations(cfg)
    ok, still = qos_satisfied(cfg, H, W, a)
    if not ok:
        problems.append(f"QoS violated for {still}")
    if float(np.sum(np.abs(W) ** 2)) > cfg.P_T * (1 + 1e-9):
        problems.append("total power exceeds P_T")
    return a, W, Verdict(not problems, problems, [tuple(map(int, p)) for p in viol])


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("iteration", "surrogate_obj", "dc_obj", "binary_residual", "power",
                 "lambda", "omega")


def _f(x: float) -> float | str:
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class SolveReport:
    criterion: str
    status: str
    iterations: int
    surrogate_trace: list[float]
    dc_trace: list[float]
    penalty_trace: list[dict]
    binary_residual_trace: list[float]
    power_trace: list[float]
    assignment: AssignmentState
    W: np.ndarray
    metrics: Metrics
    verdict: Verdict
    initial_objective: float = float("nan")
    stalled: bool = False
    final_state: IterateState | None = None
    wall_clock: list[float] = field(default_factory=list)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "criterion": self.criterion,
            "status": self.status,
            "iterations": self.iterations,
            "initial_objective": _f(self.initial_objective),
            "stalled": self.stalled,
            "traces": {
                "surrogate_obj": [_f(v) for v in self.surrogate_trace],
                "dc_obj": [_f(v) for v in self.dc_trace],
                "binary_residual": [_f(v) for v in self.binary_residual_trace],
                "power": [_f(v) for v in self.power_trace],
                "penalties": self.penalty_trace,
            },
            "assignment": self.assignment.to_dict(),
            "W_re": np.real(self.W).tolist(),
            "W_im": np.imag(self.W).tolist(),
            "metrics": self.metrics.to_dict(),
            "verdict": self.verdict.to_dict(),
        }
        if include_timing:
            d["wall_clock"] = list(self.wall_clock)
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(self.iterations):
            p = self.penalty_trace[k]
            w.writerow([k + 1, repr(self.surrogate_trace[k]), repr(self.dc_trace[k]),
                        repr(self.binary_residual_trace[k]), repr(self.power_trace[k]),
                        repr(p["lambda_eta"]), repr(p["omega"])])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _subproblem_kwargs(ccp: CcpConfig) -> dict:
    kw = {"capacity": ccp.capacity}
    if ccp.criterion == "MEE":
        kw["coupling"] = ccp.coupling
    return kw


def run(cfg: SystemConfig, H, ccp: CcpConfig, fip: IterateState, *,
        dump_dir: str | Path | None = None) -> SolveReport:
    """Iterate the CCP from ``fip`` and return the rounded, certified result."""
    H = np.asarray(H, dtype=complex)
    crit = ccp.criterion
    mask = active_pairs(cfg)
    pen = initial_penalties(ccp)
    state = fip.copy()
    prev = dc_objective(crit, cfg, H, state, pen)
    initial = prev
    surr_t, dc_t, pen_t, bin_t, pow_t, clock = [], [], [], [], [], []
    status = MAX_ITERS
    stalled_for = 0
    stalled = False
    failures = 0
    k = 0
    while k < ccp.max_iters:
        k += 1
        t0 = time.perf_counter()
        sub = build_subproblem(crit, cfg, H, state, pen, **_subproblem_kwargs(ccp))
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            (Path(dump_dir) / f"program_{k:03d}.json").write_text(sub.program.to_json())
        sol = conic.solve(sub.program, max_iter=ccp.solver_max_iter, tol=ccp.solver_tol)
        if not sol.ok:
            # one retry with a looser interior-point target before giving up
            sol = conic.solve(sub.program, max_iter=4 * ccp.solver_max_iter, tol=1e-8)
        if not sol.ok:
            failures += 1
            k -= 1
            if failures >= 2:
                status = SUBPROBLEM_FAILURE
                break
            # perturb nothing: grow penalties and rebuild from the same iterate
            pen = update_penalties(pen, ccp, max(k, 1))
            continue
        failures = 0
        state = sub.decode(sol.x, cfg, H)
        surr = sol.objective
        surr_t.append(surr)
        dc_t.append(dc_objective(crit, cfg, H, state, pen))
        pen_t.append(pen.to_dict())
        bres = state.binary_residual(mask)
        bin_t.append(bres)
        pow_t.append(float(np.sum(np.abs(state.W) ** 2)))
        clock.append(time.perf_counter() - t0)
        done = abs(surr - prev) < ccp.delta
        prev = surr
        if stalled_for:
            stalled_for += 1
            if bres <= ccp.tau_bin or stalled_for > ccp.stall_iters:
                status = CONVERGED
                break
        elif done:
            if bres <= ccp.tau_bin or not math.isfinite(ccp.delta) or ccp.stall_iters == 0:
                status = CONVERGED
                break
            stalled, stalled_for = True, 1
        pen = update_penalties(pen, ccp, k)
    if status == MAX_ITERS and stalled:
        status = CONVERGED
    assignment, W, verdict = round_and_certify(cfg, H, state)
    metrics = score(cfg, H, W, assignment)
    return SolveReport(crit, status, len(surr_t), surr_t, dc_t, pen_t, bin_t, pow_t,
                       assignment, W, metrics, verdict, initial, stalled, state, clock)


def solve_instance(cfg: SystemConfig, H, ccp: CcpConfig, seed: int | None = 0, **kw) -> SolveReport:
    """``make_fip`` followed by ``run``."""
    return run(cfg, H, ccp, make_fip(cfg, H, ccp, seed), **kw)
