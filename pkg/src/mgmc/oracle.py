"""Ground-truth machinery for tiny instances.

Three independent tools the test-suite leans on:

* exhaustive enumeration of every rounded assignment, each scored with a
  multi-start fixed-assignment precoder solve (best-found, not certified),
* a loop-based metric evaluator that shares no code with :func:`score`,
* central finite differences over the real embedding for gradient checks.

Inner precoding for a frozen assignment stays non-convex, so the optimum
reported by :func:`exhaustive_best` is the best point found over the
restarts.  Gaps measured against it are lower bounds on the true gap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .ccp import FIP_MARGIN, _random_precoder, _state_from_assignment
from .criteria import CRITERIA, IterateState, PenaltyState, build_subproblem, convexified_margins
from .system import AssignmentState, ChannelSet, Metrics, SystemConfig, qos_satisfied, score

__all__ = [
    "MAX_ASSIGNMENTS",
    "TinyInstance",
    "enumerate_assignments",
    "assignment_count",
    "best_fixed_assignment",
    "exhaustive_best",
    "criterion_score",
    "brute_force_metrics",
    "check_gradient",
    "OracleResult",
]

MAX_ASSIGNMENTS = 256
ORACLE_RESTARTS = 8


@dataclass(frozen=True)
class TinyInstance:
    cfg: SystemConfig
    channels: ChannelSet

    def __post_init__(self):
        c = self.cfg
        if c.N > 4 or c.G > 3 or c.M > 2:
            raise ValueError(f"tiny instance needs N <= 4, G <= 3, M <= 2 (got N={c.N}, G={c.G}, M={c.M})")
        if (c.G + 1) ** c.N > MAX_ASSIGNMENTS:
            raise ValueError("enumeration would exceed 256 assignments")
        if self.channels.H.shape != (c.N, c.M):
            raise ValueError("channel shape does not match the configuration")

    @property
    def H(self) -> np.ndarray:
        return self.channels.H


def assignment_count(cfg: SystemConfig) -> int:
    """Closed-form size of :func:`enumerate_assignments`."""
    mask = cfg.interest_mask > 0
    total = 0
    for S in itertools.combinations(range(cfg.G), cfg.M):
        total += int(np.prod(mask[:, list(S)].sum(axis=1) + 1))
    return total


def enumerate_assignments(inst: TinyInstance) -> list[AssignmentState]:
    """Every rounded assignment: exactly ``M`` selected groups, each user in at
    most one selected group it is interested in (or in none)."""
    cfg = inst.cfg
    mask = cfg.interest_mask > 0
    out = []
    for S in itertools.combinations(range(cfg.G), cfg.M):
        delta = np.zeros(cfg.G)
        delta[list(S)] = 1.0
        choices = [[None] + [j for j in S if mask[i, j]] for i in range(cfg.N)]
        for pick in itertools.product(*choices):
            eta = np.zeros((cfg.N, cfg.G))
            for i, j in enumerate(pick):
                if j is not None:
                    eta[i, j] = 1.0
            out.append(AssignmentState(eta, delta.copy()))
    return out


def criterion_score(criterion: str, m: Metrics) -> float:
    """Scalar the criterion maximizes, read off a :class:`Metrics` record."""
    criterion = criterion.upper()
    if criterion == "MEE":
        return m.mee
    if criterion == "EE":
        return m.ee
    if criterion == "SUM":
        return float(m.scheduled_users)
    raise ValueError(f"unknown criterion {criterion!r}")


def _rank(criterion: str, m: Metrics) -> tuple:
    # SUM ties (same head count) are broken by energy efficiency
    return (criterion_score(criterion, m), m.ee)


def _fixed_ccp(criterion, cfg, H, fixed, state, *, phase_one=False, max_iters=100, delta=1e-6):
    """Penalty-free CCP with the assignment frozen; returns the last iterate and objective."""
    pen = PenaltyState()
    prev = -math.inf
    obj = -math.inf
    for _ in range(max_iters):
        kw = {"phase_one": True} if phase_one else {}
        sub = build_subproblem(criterion, cfg, H, state, pen, fixed=fixed, **kw)
        sol = conic.solve(sub.program)
        if not sol.ok:
            break
        state = sub.decode(sol.x, cfg, H)
        obj = sol.objective
        if phase_one and obj > -1e-9:
            break
        if abs(obj - prev) < delta:
            break
        prev = obj
    return state, obj


def _phase_one(cfg, H, fixed, W0) -> np.ndarray | None:
    """Precoders under which every frozen member meets its QoS, or None."""
    G = cfg.G
    live = fixed.eta.sum(axis=0) > 0
    W0 = np.where(live[None, :], W0, 0.0)
    eta = fixed.eta.astype(float)
    state = IterateState(W0, eta, live.astype(float), np.zeros(G), np.zeros(G),
                         np.ones_like(eta), 1.0)
    state, _ = _fixed_ccp("SUM", cfg, H, fixed, state, phase_one=True, max_iters=60)
    ok, _ = qos_satisfied(cfg, H, state.W, fixed)
    return state.W if ok else None


def best_fixed_assignment(inst: TinyInstance, assignment: AssignmentState, criterion: str,
                          restarts: int = ORACLE_RESTARTS, seed: int = 0):
    """Best precoders found for a frozen assignment.

    Each restart draws random precoders, repairs them to QoS feasibility with
    a slack-minimizing CCP and then runs the criterion's CCP with the binary
    variables frozen and penalties off.  Returns ``(W, Metrics)``, or
    ``(None, None)`` when no restart reached a feasible point.
    """
    criterion = criterion.upper()
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    cfg, H = inst.cfg, np.asarray(inst.H, dtype=complex)
    bad = assignment.structural_violations(cfg)
    if bad:
        raise ValueError("assignment must be rounded and valid: " + "; ".join(bad))
    if not np.any(assignment.eta):
        W = np.zeros((cfg.M, cfg.G), dtype=complex)
        return W, score(cfg, H, W, assignment)
    rng = np.random.default_rng(seed)
    mask = assignment.eta > 0.5
    live = mask.any(axis=0)
    best = None
    for _ in range(restarts):
        W = _phase_one(cfg, H, assignment, _random_precoder(cfg, rng))
        if W is None:
            continue
        if criterion != "SUM":
            state = _state_from_assignment(cfg, H, criterion, W, assignment.eta, live.astype(float),
                                           margin=FIP_MARGIN)
            if criterion == "MEE":
                state.Theta = np.where(live, state.Theta, 0.0)
                state.zeta = np.where(live, state.zeta, 0.0)
            margins = convexified_margins(criterion, cfg, H, state, state, mask)
            if all(m.size == 0 or m.min() >= -1e-7 for m in margins.values()):
                state, _ = _fixed_ccp(criterion, cfg, H, assignment, state)
                W_try = state.W
                if qos_satisfied(cfg, H, W_try, assignment)[0] and np.sum(np.abs(W_try) ** 2) <= cfg.P_T * (1 + 1e-9):
                    W = W_try
        m = score(cfg, H, W, assignment)
        if best is None or _rank(criterion, m) > _rank(criterion, best[1]):
            best = (W, m)
        if criterion == "SUM":
            # every feasible point scores the same head count
            break
    if best is None:
        return None, None
    return best


@dataclass
class OracleResult:
    assignment: AssignmentState
    W: np.ndarray
    metrics: Metrics
    evaluated: int
    infeasible: int

    def to_dict(self) -> dict:
        d = self.metrics.to_dict()
        d["assignment"] = self.assignment.to_dict()
        return d


def exhaustive_best(inst: TinyInstance, criterion: str, restarts: int = ORACLE_RESTARTS,
                    incumbents=(), seed: int = 0) -> OracleResult:
    """Best assignment over the full enumeration.

    ``incumbents`` are ``(AssignmentState, W)`` pairs scored as-is and added to
    the candidate set, which makes the result dominate any heuristic whose
    output is passed in.
    """
    criterion = criterion.upper()
    cfg, H = inst.cfg, np.asarray(inst.H, dtype=complex)
    best = None
    n_bad = 0
    cands = enumerate_assignments(inst)
    for k, a in enumerate(cands):
        W, m = best_fixed_assignment(inst, a, criterion, restarts, seed=seed + k)
        if m is None:
            n_bad += 1
            continue
        if best is None or _rank(criterion, m) > _rank(criterion, best[2]):
            best = (a, W, m)
    for a, W in incumbents:
        W = np.asarray(W, dtype=complex)
        if a.structural_violations(cfg) or not qos_satisfied(cfg, H, W, a)[0]:
            continue
        m = score(cfg, H, W, a)
        if best is None or _rank(criterion, m) > _rank(criterion, best[2]):
            best = (a, W, m)
    if best is None:
        # the empty schedule is always feasible
        a = cands[0]
        W = np.zeros((cfg.M, cfg.G), dtype=complex)
        best = (a, W, score(cfg, H, W, a))
    return OracleResult(best[0], best[1], best[2], len(cands), n_bad)


def brute_force_metrics(cfg: SystemConfig, H, W, assignment: AssignmentState) -> Metrics:
    """Scalar-loop evaluation of the metrics (independent of :func:`score`)."""
    H = np.asarray(H, dtype=complex)
    W = np.asarray(W, dtype=complex)
    N, G, M = cfg.N, cfg.G, cfg.M
    eta, delta = assignment.eta, assignment.delta

    def amp2(i, l):
        s = 0j
        for m in range(M):
            s += H[i, m] * W[m, l]
        return s.real ** 2 + s.imag ** 2

    min_rates = []
    for j in range(G):
        members = [i for i in range(N) if eta[i, j] > 0.5]
        if delta[j] < 0.5 or not members:
            min_rates.append(0.0)
            continue
        worst = math.inf
        for i in members:
            interf = cfg.sigma2
            for l in range(G):
                if l != j:
                    interf += amp2(i, l)
            worst = min(worst, amp2(i, j) / interf)
        min_rates.append(cfg.B * math.log2(1.0 + worst))
    power = cfg.P0
    for j in range(G):
        col = 0.0
        for m in range(M):
            col += abs(W[m, j]) ** 2
        power += col / cfg.rho + cfg.Pi_coeff * float(cfg.p(min_rates[j]))
    sizes = [sum(1 for i in range(N) if eta[i, j] > 0.5) for j in range(G)]
    thr = sum(min_rates)
    mee = sum(cfg.psi[j] * sizes[j] * min_rates[j] for j in range(G)) / power
    return Metrics(mee=mee, ee=thr / power, throughput=thr, consumed_power=power,
                   scheduled_users=int(sum(sizes)), scheduled_groups=int(round(sum(delta))),
                   min_rates=tuple(min_rates))


def check_gradient(fn, grad, point, h: float = 1e-5) -> float:
    """Max relative error between ``grad(point)`` and central differences of ``fn``.

    ``point`` is a real vector (complex quantities enter through their real
    embedding).  The error of each coordinate is scaled by ``max(1, |g|)``,
    so vanishing gradients are compared absolutely.
    """
    x = np.asarray(point, dtype=float).ravel()
    g = np.asarray(grad(x), dtype=float).ravel()
    if g.shape != x.shape:
        raise ValueError("gradient and point have different sizes")
    fd = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fd[k] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return float(np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g)))) if x.size else 0.0
