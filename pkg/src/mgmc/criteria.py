"""Per-iteration convex subproblems for the MEE, EE and SUM criteria.

Each builder lowers one convexified subproblem onto :class:`ProgramBuilder`
over the real embedding of the decision variables:

* precoders ``W = Wr + 1j * Wi`` (``M x G`` each),
* assignment relaxations ``eta`` (one variable per active user/group pair)
  and ``delta`` (one per group),
* slacks ``Theta``, ``zeta``, ``alpha``, ``t`` and ``Gamma``,
* auxiliary epigraph variables (log rates, power, quadratic penalties).

Only pairs allowed by the interest mask become variables; all other
``eta_ij`` are the constant 0.  In *fixed* mode (used by the oracle) the
assignment is frozen: ``eta`` and ``delta`` are constants and only member
pairs carry rate and interference constraints.

Besides the builders, the module evaluates the surrogate objective, the
penalized DC objective and the margins of every convexified / original
constraint family with plain numpy.  These evaluators are independent of
the lowering and are what the tests and the CCP engine compare against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import surrogates as sg
from .conic import Affine, ConeProgram, ProgramBuilder, lower_log_lb, lower_quad_over_lin
from .system import AssignmentState, SystemConfig, channel_gains, sinr_matrix

__all__ = [
    "CRITERIA",
    "IterateState",
    "PenaltyState",
    "Subproblem",
    "theta_star",
    "sum_threshold",
    "active_pairs",
    "build_mee_subproblem",
    "build_ee_subproblem",
    "build_sum_subproblem",
    "build_subproblem",
    "build_fip_lp",
    "dc_objective",
    "surrogate_objective",
    "convexified_margins",
    "original_margins",
]

CRITERIA = ("MEE", "EE", "SUM")
LN2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# state types
# ---------------------------------------------------------------------------

@dataclass
class IterateState:
    """All optimization variables of one CCP iterate."""

    W: np.ndarray
    eta: np.ndarray
    delta: np.ndarray
    Theta: np.ndarray
    zeta: np.ndarray
    alpha: np.ndarray
    t: float
    Gamma: float = 0.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=complex)
        for name in ("eta", "delta", "Theta", "zeta", "alpha"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.t = float(self.t)
        self.Gamma = float(self.Gamma)

    def copy(self) -> "IterateState":
        return IterateState(self.W.copy(), self.eta.copy(), self.delta.copy(), self.Theta.copy(),
                            self.zeta.copy(), self.alpha.copy(), self.t, self.Gamma)

    def binary_residual(self, mask: np.ndarray | None = None) -> float:
        eta = self.eta if mask is None else self.eta[mask > 0]
        r = [np.minimum(self.delta, 1.0 - self.delta)]
        if eta.size:
            r.append(np.minimum(eta, 1.0 - eta))
        return float(max(np.max(np.abs(x)) for x in r))

    def to_dict(self) -> dict:
        return {"W_re": self.W.real.tolist(), "W_im": self.W.imag.tolist(),
                "eta": self.eta.tolist(), "delta": self.delta.tolist(),
                "Theta": self.Theta.tolist(), "zeta": self.zeta.tolist(),
                "alpha": self.alpha.tolist(), "t": self.t, "Gamma": self.Gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "IterateState":
        W = np.asarray(d["W_re"], dtype=float) + 1j * np.asarray(d["W_im"], dtype=float)
        return cls(W, d["eta"], d["delta"], d["Theta"], d["zeta"], d["alpha"], d["t"], d.get("Gamma", 0.0))


@dataclass(frozen=True)
class PenaltyState:
    """Penalty weights of the active criterion.

    ``lambda_eta`` / ``lambda_delta`` weigh the binary-promoting entropy
    terms of ``eta`` and ``delta``; ``omega`` weighs ``(sum(delta) - M)^2``.
    """

    lambda_eta: float = 0.0
    lambda_delta: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if min(self.lambda_eta, self.lambda_delta, self.omega) < 0:
            raise ValueError("penalty weights must be nonnegative")

    def to_dict(self) -> dict:
        return {"lambda_eta": self.lambda_eta, "lambda_delta": self.lambda_delta, "omega": self.omega}


@dataclass
class Subproblem:
    """A lowered subproblem plus what is needed to read its solution back."""

    criterion: str
    program: ConeProgram
    ep: IterateState
    mask: np.ndarray  # active pairs
    fixed: AssignmentState | None
    dropped: float  # entropy constants included in the objective offset
    meta: dict = field(default_factory=dict)

    def decode(self, x: np.ndarray, cfg: SystemConfig, H) -> IterateState:
        names = self.program.names
        ep = self.ep

        def get(name, default):
            return x[names[name]] if name in names else default

        W = get("Wr", ep.W.real) + 1j * get("Wi", ep.W.imag)
        if self.fixed is not None:
            eta = np.asarray(self.fixed.eta, dtype=float).copy()
            delta = np.asarray(self.meta["delta_fixed"], dtype=float).copy()
        else:
            eta = np.zeros_like(ep.eta)
            eta[self.mask] = x[names["eta"]]
            delta = x[names["delta"]].copy()
        eta = np.clip(eta, 0.0, 1.0)
        delta = np.clip(delta, 0.0, 1.0)
        # slacks of inactive pairs are not variables; keep them tight at the new W
        alpha = 1.0 + sinr_matrix(H, W, cfg.sigma2)
        if "alpha" in names:
            alpha[self.mask] = np.maximum(x[names["alpha"]], 1.0)
        Theta = np.maximum(get("Theta", ep.Theta), 0.0)
        zeta = np.maximum(get("zeta", ep.zeta), 0.0)
        t = float(get("t", ep.t)) if "t" in names else ep.t
        Gamma = max(float(x[names["Gamma"]]), 0.0) if "Gamma" in names else ep.Gamma
        return IterateState(W, eta, delta, np.array(Theta, dtype=float), np.array(zeta, dtype=float),
                            alpha, t, Gamma)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def theta_star(cfg: SystemConfig, H) -> float:
    """Cap on any achievable per-group rate (bits/s/Hz): single-user matched-filter bound."""
    g = float(np.max(np.sum(np.abs(np.asarray(H)) ** 2, axis=1)))
    return max(float(np.log2(1.0 + cfg.P_T * g / cfg.sigma2)), float(np.max(cfg.eps)))


def sum_threshold(cfg: SystemConfig) -> np.ndarray:
    """SINR threshold ``2^eps - 1`` per group (the SUM admission constraint)."""
    return np.exp2(cfg.eps) - 1.0


def active_pairs(cfg: SystemConfig, fixed: AssignmentState | None = None) -> np.ndarray:
    if fixed is not None:
        return np.asarray(fixed.eta) > 0.5
    return cfg.interest_mask > 0


def _fixed_groups(fixed: AssignmentState) -> np.ndarray:
    """Groups that actually carry members under a frozen assignment."""
    return (np.asarray(fixed.eta) > 0.5).any(axis=0).astype(float)


# ---------------------------------------------------------------------------
# lowering helpers
# ---------------------------------------------------------------------------

class _Assembler:
    """Shared variable layout and expression helpers for all builders."""

    def __init__(self, cfg: SystemConfig, H, ep: IterateState, fixed: AssignmentState | None):
        self.cfg, self.ep, self.fixed = cfg, ep, fixed
        self.H = np.asarray(H, dtype=complex)
        self.b = ProgramBuilder()
        self.mask = active_pairs(cfg, fixed)
        self.pairs = np.argwhere(self.mask)
        M, G = cfg.M, cfg.G
        self.Wr = self.b.variable("Wr", (M, G))
        self.Wi = self.b.variable("Wi", (M, G))
        if fixed is None:
            self.live = np.ones(G, dtype=bool)
            eta_idx = self.b.variable("eta", len(self.pairs))
            self.eta = {(int(i), int(j)): Affine.var(k) for k, (i, j) in zip(eta_idx, self.pairs)}
            d_idx = self.b.variable("delta", G)
            self.delta = [Affine.var(k) for k in d_idx]
        else:
            dfix = _fixed_groups(fixed)
            self.live = dfix > 0.5
            self.eta = {(int(i), int(j)): Affine.constant(1.0) for i, j in self.pairs}
            self.delta = [Affine.constant(v) for v in dfix]
            # precoders of groups without members stay silent
            self.b.fix(self.Wr[:, ~self.live], 0.0)
            self.b.fix(self.Wi[:, ~self.live], 0.0)
        self.obj: list = []

    # received amplitude h_i^H w_l in the real embedding
    def hw(self, i: int, l: int) -> tuple[Affine, Affine]:
        h = self.H[i]
        idx = np.concatenate([self.Wr[:, l], self.Wi[:, l]])
        re = Affine(idx, np.concatenate([h.real, -h.imag]))
        im = Affine(idx, np.concatenate([h.imag, h.real]))
        return re, im

    def lin_hw(self, i: int, g: np.ndarray) -> Affine:
        """``sum_l Re{conj(g_l) h_i^H w_l}`` as an affine expression."""
        a = np.conj(np.asarray(g))[None, :] * self.H[i][:, None]  # M x G
        idx = np.concatenate([self.Wr.ravel(), self.Wi.ravel()])
        return Affine(idx, np.concatenate([a.real.ravel(), -a.imag.ravel()]))

    def interference_terms(self, i: int, j: int) -> list[Affine]:
        u = []
        for l in range(self.cfg.G):
            if l != j:
                u.extend(self.hw(i, l))
        return u

    def add_structural(self, capacity: str = "per-user"):
        """Boxes, per-user sum, group capacity (relaxed mode only).

        ``capacity="per-user"`` adds ``eta_ij <= delta_j`` next to the aggregate
        row; both agree on binary points but the per-user rows keep a group
        with a full member from sitting at ``delta_j = 1 / N``.
        """
        if capacity not in ("per-user", "aggregate"):
            raise ValueError(f"unknown capacity form {capacity!r}")
        if self.fixed is not None:
            return
        b, N = self.b, self.cfg.N
        eta_idx, d_idx = self.b.names["eta"], self.b.names["delta"]
        if eta_idx.size:
            b.add_nonneg([Affine.var(k) for k in eta_idx])
            b.add_nonneg([1.0 - Affine.var(k) for k in eta_idx])
        b.add_nonneg([Affine.var(k) for k in d_idx])
        b.add_nonneg([1.0 - Affine.var(k) for k in d_idx])
        per_user = []
        for i in range(N):
            terms = [self.eta[(i, j)] for j in range(self.cfg.G) if (i, j) in self.eta]
            if len(terms) > 1:
                per_user.append(1.0 - Affine.sum(terms))
        if per_user:
            b.add_nonneg(per_user)
        cap = []
        for j in range(self.cfg.G):
            terms = [self.eta[(i, j)] for i in range(N) if (i, j) in self.eta]
            if terms:
                cap.append(N * self.delta[j] - Affine.sum(terms))
            if capacity == "per-user":
                cap.extend(self.delta[j] - e for e in terms)
        if cap:
            b.add_nonneg(cap)

    def add_power_budget(self) -> Affine:
        """``|W|_F^2 <= S <= P_T``; returns ``S``."""
        S = Affine.var(self.b.variable("S"))
        wl = [Affine.var(k) for k in np.concatenate([self.Wr.ravel(), self.Wi.ravel()])]
        lower_quad_over_lin(self.b, wl, S, 1.0)
        self.b.add_le(S, self.cfg.P_T)
        return S

    def add_gsc_penalty(self, omega: float) -> None:
        if omega == 0.0 or self.fixed is not None:
            return
        e = Affine.var(self.b.variable("gsc"))
        lower_quad_over_lin(self.b, Affine.sum(self.delta) - float(self.cfg.M), e, 1.0)
        self.obj.append(-omega * e)

    def add_entropy(self, pen: PenaltyState) -> float:
        """Linearized entropy penalties; returns the dropped constant (kept in the offset)."""
        if self.fixed is not None:
            return 0.0
        dropped = 0.0
        if pen.lambda_eta and len(self.pairs):
            ii, jj = self.pairs[:, 0], self.pairs[:, 1]
            tg = sg.taylor_entropy(self.ep.eta[ii, jj])
            idx = self.b.names["eta"]
            self.obj.append(Affine(idx, pen.lambda_eta * tg.slope))
            dropped += pen.lambda_eta * float(np.sum(tg.dropped))
        if pen.lambda_delta:
            tg = sg.taylor_entropy(self.ep.delta)
            self.obj.append(Affine(self.b.names["delta"], pen.lambda_delta * tg.slope))
            dropped += pen.lambda_delta * float(np.sum(tg.dropped))
        self.obj.append(dropped)
        return dropped

    def add_p1_epigraph(self, z: Affine, name: str) -> Affine:
        """Variable ``q`` with ``q >= p1(z)``; supports the built-in convex families."""
        spec = self.cfg.power_fn
        kind, prm = spec.p1_kind, spec.p1_params
        if kind == "zero":
            return Affine.constant(0.0)
        if kind == "quadratic":
            a, bl = float(prm.get("a", 0.0)), float(prm.get("b", 0.0))
            if a == 0.0:
                return bl * z
            q = Affine.var(self.b.variable(name))
            lower_quad_over_lin(self.b, z, (q - bl * z) / a, 1.0)
            return q
        if kind == "exponential":
            scale, c = float(prm.get("scale", 1.0)), float(prm.get("c", 1.0))
            q = Affine.var(self.b.variable(name))
            self.b.add_exp(c * z, 1.0, (q + scale) / scale)
            return q
        raise ValueError(f"p1 family {kind!r} has no conic lowering")

    def add_power_model(self, S: Affine, rates: list[Affine], rates0: np.ndarray) -> Affine:
        """``P0 + S / rho + Pi sum_j (p1(r_j) - p2~(r_j)) <= t``; returns ``t``."""
        cfg = self.cfg
        t = Affine.var(self.b.variable("t"))
        p2 = sg.taylor_p2(rates0, cfg.power_fn)
        terms = [cfg.P0, S / cfg.rho]
        for j, r in enumerate(rates):
            q = self.add_p1_epigraph(r, f"q{j}")
            terms.append(cfg.Pi_coeff * (q - (float(p2.const[j]) + float(p2.a[j]) * r)))
        self.b.add_le(Affine.sum(terms), t)
        return t

    def add_sinr_slacks(self):
        """Interference against the linearized J and the log-rate epigraph; returns (alpha, L)."""
        cfg, ep = self.cfg, self.ep
        n = len(self.pairs)
        a_idx = self.b.variable("alpha", n)
        L_idx = self.b.variable("lograte", n)
        if n == 0:
            return {}, {}
        tj = sg.taylor_J(self.H, ep.W, np.maximum(ep.alpha, 1.0), cfg.sigma2)
        alpha, L = {}, {}
        lb = []
        for k, (i, j) in enumerate(self.pairs):
            i, j = int(i), int(j)
            a = Affine.var(a_idx[k])
            Jt = self.lin_hw(i, tj.hw_coef[i, j]) + float(tj.scalar_coef[i, j]) * a + float(tj.const[i, j])
            rhs = Jt - cfg.sigma2
            u = self.interference_terms(i, j)
            if u:
                lower_quad_over_lin(self.b, u, rhs, 1.0)
            else:
                self.b.add_nonneg(rhs)
            lb.append(a - 1.0)
            # L <= log2(alpha)
            lower_log_lb(self.b, a, LN2 * Affine.var(L_idx[k]))
            alpha[(i, j)] = a
            L[(i, j)] = Affine.var(L_idx[k])
        self.b.add_nonneg(lb)
        return alpha, L

    def add_rate_link(self, Theta: list[Affine], L: dict) -> None:
        """Rate coupling: ``(eta + Theta)^2 <= 2 L + G~(eta, Theta)`` i.e. ``eta Theta <= log2(alpha)``."""
        ep = self.ep
        for (i, j), l in L.items():
            tg = sg.taylor_G(ep.eta[i, j], ep.Theta[j])
            e = self.eta[(i, j)]
            rhs = 2.0 * l + float(tg.const) + float(tg.a) * e + float(tg.b) * Theta[j]
            lower_quad_over_lin(self.b, e + Theta[j], rhs, 1.0)

    def finish(self, criterion: str, pen: PenaltyState, dropped: float, **meta) -> Subproblem:
        prog = self.b.build(Affine.sum(self.obj), maximize=True)
        if self.fixed is not None:
            meta["delta_fixed"] = _fixed_groups(self.fixed)
        return Subproblem(criterion, prog, self.ep, self.mask, self.fixed, dropped, meta)


def _check_ep(cfg: SystemConfig, H, ep: IterateState) -> None:
    M, G, N = cfg.M, cfg.G, cfg.N
    if ep.W.shape != (M, G) or ep.eta.shape != (N, G) or ep.alpha.shape != (N, G):
        raise ValueError("expansion point has wrong shapes")
    if ep.delta.shape != (G,) or ep.Theta.shape != (G,) or ep.zeta.shape != (G,):
        raise ValueError("expansion point has wrong group-vector shapes")
    if not ep.t > 0:
        raise ValueError("expansion point needs t > 0")
    vals = [ep.W.real, ep.W.imag, ep.eta, ep.delta, ep.Theta, ep.zeta, ep.alpha]
    if not all(np.all(np.isfinite(v)) for v in vals) or not np.isfinite(ep.t):
        raise ValueError("expansion point must be finite")
    if np.asarray(H).shape != (N, M):
        raise ValueError("channel shape does not match the configuration")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_mee_subproblem(cfg: SystemConfig, H, ep: IterateState, pen: PenaltyState, *,
                         fixed: AssignmentState | None = None,
                         coupling: str = "rate-lower-bound",
                         capacity: str = "per-user") -> Subproblem:
    """Convexified MEE subproblem at the expansion point ``ep``.

    ``coupling`` selects how the power slack ``zeta_j`` is tied to the
    group rate: ``"rate-lower-bound"`` (default) enforces
    ``zeta_j >= B delta_j Theta_j`` so the rate-dependent power is never
    under-counted; ``"as-printed"`` uses ``zeta_j / B + delta_j^2 + Theta_j^2
    <= (delta_j + Theta_j)^2`` linearized on the right.
    """
    _check_ep(cfg, H, ep)
    A = _Assembler(cfg, H, ep, fixed)
    b, G = A.b, cfg.G
    A.add_structural(capacity)
    Th_idx = b.variable("Theta", G)
    z_idx = b.variable("zeta", G)
    Theta = [Affine.var(k) for k in Th_idx]
    zeta = [Affine.var(k) for k in z_idx]
    b.add_nonneg(Theta)
    b.add_nonneg(zeta)
    if fixed is not None:
        b.fix(Th_idx[~A.live], 0.0)
        b.fix(z_idx[~A.live], 0.0)
    # QoS
    qos = [Theta[j] - float(cfg.eps[j]) * A.delta[j] for j in range(G) if A.live[j]]
    if qos:
        b.add_nonneg(qos)
    alpha, L = A.add_sinr_slacks()
    A.add_rate_link(Theta, L)
    # power coupling
    for j in range(G):
        if not A.live[j]:
            continue
        if coupling == "rate-lower-bound":
            tg = sg.taylor_G(ep.delta[j], ep.Theta[j])
            rhs = 2.0 * zeta[j] / cfg.B + float(tg.const) + float(tg.a) * A.delta[j] + float(tg.b) * Theta[j]
            lower_quad_over_lin(b, A.delta[j] + Theta[j], rhs, 1.0)
        elif coupling == "as-printed":
            tk = sg.taylor_K(ep.delta[j], ep.Theta[j])
            rhs = float(tk.const) + float(tk.a) * A.delta[j] + float(tk.b) * Theta[j] - zeta[j] / cfg.B
            lower_quad_over_lin(b, [A.delta[j], Theta[j]], rhs, 1.0)
        else:
            raise ValueError(f"unknown coupling {coupling!r}")
    S = A.add_power_budget()
    t = A.add_power_model(S, zeta, ep.zeta)
    # objective: sum of f~ over active pairs
    weight = cfg.B * cfg.psi
    for j in range(G):
        rows = [int(i) for i in np.flatnonzero(A.mask[:, j])]
        if not rows:
            continue
        tf = sg.taylor_f(ep.eta[rows, j], ep.Theta[j], ep.t, weight[j])
        for k, i in enumerate(rows):
            A.obj.append(float(tf.coef_u[k]) * (A.eta[(i, j)] + Theta[j]) + float(tf.coef_t[k]) * t)
        v = Affine.var(b.variable(f"fq{j}"))
        u = [A.eta[(i, j)] for i in rows] + [np.sqrt(len(rows)) * Theta[j]]
        lower_quad_over_lin(b, u, t, 2.0 * v)
        A.obj.append(-float(weight[j]) * v)
    dropped = A.add_entropy(pen)
    A.add_gsc_penalty(pen.omega)
    return A.finish("MEE", pen, dropped, coupling=coupling)


def build_ee_subproblem(cfg: SystemConfig, H, ep: IterateState, pen: PenaltyState, *,
                        fixed: AssignmentState | None = None,
                        theta_cap: float | None = None,
                        capacity: str = "per-user") -> Subproblem:
    """Convexified EE subproblem (objective: tangent of ``Gamma^2 / t``)."""
    _check_ep(cfg, H, ep)
    cap = theta_star(cfg, H) if theta_cap is None else float(theta_cap)
    A = _Assembler(cfg, H, ep, fixed)
    b, G, N = A.b, cfg.G, cfg.N
    A.add_structural(capacity)
    Th_idx = b.variable("Theta", G)
    Theta = [Affine.var(k) for k in Th_idx]
    b.add_nonneg(Theta)
    if fixed is not None:
        b.fix(Th_idx[~A.live], 0.0)
    qos = [Theta[j] - float(cfg.eps[j]) * A.delta[j] for j in range(G) if A.live[j]]
    if qos:
        b.add_nonneg(qos)
    # rate cap forcing Theta_j -> 0 for unscheduled groups
    b.add_nonneg([cap * A.delta[j] - Theta[j] for j in range(G)])
    if fixed is None:
        # a scheduled group must hold at least one (fractional) member
        link = []
        for j in range(G):
            terms = [A.eta[(i, j)] for i in range(N) if (i, j) in A.eta]
            link.append(Affine.sum(terms) - A.delta[j] if terms else -A.delta[j])
        b.add_nonneg(link)
    alpha, L = A.add_sinr_slacks()
    A.add_rate_link(Theta, L)
    S = A.add_power_budget()
    rates = [cfg.B * Theta[j] for j in range(G)]
    t = A.add_power_model(S, rates, cfg.B * ep.Theta)
    Gamma = Affine.var(b.variable("Gamma"))
    b.add_nonneg(Gamma)
    thr = Affine.sum([float(cfg.B * cfg.psi[j]) * Theta[j] for j in range(G)])
    lower_quad_over_lin(b, Gamma, thr, 1.0)
    tg = sg.taylor_gamma_sq(ep.Gamma, ep.t)
    A.obj.append(float(tg.a) * Gamma + float(tg.b) * t)
    dropped = A.add_entropy(pen)
    A.add_gsc_penalty(pen.omega)
    return A.finish("EE", pen, dropped, theta_cap=cap)


def build_sum_subproblem(cfg: SystemConfig, H, ep: IterateState, pen: PenaltyState, *,
                         fixed: AssignmentState | None = None,
                         phase_one: bool = False,
                         capacity: str = "per-user") -> Subproblem:
    """Convexified SUM subproblem (maximize admitted users).

    With ``phase_one=True`` (requires ``fixed``) each admission constraint
    receives a nonnegative slack and the objective minimizes the total
    slack; a zero optimum certifies that the frozen assignment is feasible.
    """
    _check_ep(cfg, H, ep)
    if phase_one and fixed is None:
        raise ValueError("phase_one requires a fixed assignment")
    A = _Assembler(cfg, H, ep, fixed)
    b = A.b
    A.add_structural(capacity)
    A.add_power_budget()
    thr = sum_threshold(cfg)
    n = len(A.pairs)
    slack = b.variable("slack", n) if phase_one else None
    if n:
        ti = sg.taylor_I(A.H, ep.W, ep.eta, thr[None, :], cfg.sigma2)
        for k, (i, j) in enumerate(A.pairs):
            i, j = int(i), int(j)
            It = (A.lin_hw(i, ti.hw_coef[i, j]) + float(ti.scalar_coef[i, j]) * A.eta[(i, j)]
                  + float(ti.const[i, j]))
            rhs = It - cfg.sigma2
            if phase_one:
                rhs = rhs + Affine.var(slack[k])
            u = A.interference_terms(i, j)
            if u:
                lower_quad_over_lin(b, u, rhs, 1.0)
            else:
                b.add_nonneg(rhs)
    if phase_one:
        if n:
            b.add_nonneg([Affine.var(k) for k in slack])
            A.obj.append(-Affine.sum([Affine.var(k) for k in slack]))
        return A.finish("SUM", pen, 0.0, phase_one=True)
    if fixed is None:
        A.obj.append(Affine.sum([A.eta[p] for p in A.eta]))
    dropped = A.add_entropy(pen)
    A.add_gsc_penalty(pen.omega)
    return A.finish("SUM", pen, dropped)


def build_subproblem(criterion: str, cfg: SystemConfig, H, ep: IterateState, pen: PenaltyState,
                     **kw) -> Subproblem:
    builders = {"MEE": build_mee_subproblem, "EE": build_ee_subproblem, "SUM": build_sum_subproblem}
    try:
        return builders[criterion.upper()](cfg, H, ep, pen, **kw)
    except KeyError:
        raise ValueError(f"unknown criterion {criterion!r}") from None


def build_fip_lp(cfg: SystemConfig, H, W0: np.ndarray) -> ConeProgram:
    """LP picking a large admissible assignment for fixed precoders ``W0``.

    maximize ``sum(delta) + sum(eta)`` subject to the boxes, one group per
    user, group capacity and ``eta_ij eps_j <= log2(1 + gamma0_ij)``.
    """
    W0 = np.asarray(W0, dtype=complex)
    if np.sum(np.abs(W0) ** 2) > cfg.P_T * (1 + 1e-9):
        raise ValueError("W0 exceeds the power budget")
    N, G = cfg.N, cfg.G
    gamma0 = sinr_matrix(H, W0, cfg.sigma2)
    rate0 = np.log2(1.0 + gamma0)
    mask = cfg.interest_mask > 0
    pairs = np.argwhere(mask)
    b = ProgramBuilder()
    e_idx = b.variable("eta", len(pairs))
    d_idx = b.variable("delta", G)
    eta = {(int(i), int(j)): Affine.var(k) for k, (i, j) in zip(e_idx, pairs)}
    cons = [Affine.var(k) for k in d_idx] + [1.0 - Affine.var(k) for k in d_idx]
    for (i, j), e in eta.items():
        cons += [e, 1.0 - e]
        if cfg.eps[j] > 0:
            cons.append(float(rate0[i, j]) - float(cfg.eps[j]) * e)
    for i in range(N):
        terms = [eta[(i, j)] for j in range(G) if (i, j) in eta]
        if len(terms) > 1:
            cons.append(1.0 - Affine.sum(terms))
    for j in range(G):
        terms = [eta[(i, j)] for i in range(N) if (i, j) in eta]
        if terms:
            cons.append(N * Affine.var(d_idx[j]) - Affine.sum(terms))
    b.add_nonneg(cons)
    obj = Affine.sum([Affine.var(k) for k in d_idx] + list(eta.values()))
    prog = b.build(obj, maximize=True)
    prog.names["pairs"] = pairs
    return prog


# ---------------------------------------------------------------------------
# numeric evaluators
# ---------------------------------------------------------------------------

def _power(cfg: SystemConfig, W: np.ndarray, rates: np.ndarray) -> float:
    return float(cfg.P0 + np.sum(np.abs(W) ** 2) / cfg.rho + cfg.Pi_coeff * np.sum(cfg.p(rates)))


def _penalties(cfg, state, pen, mask, fixed) -> float:
    if fixed is not None:
        return 0.0
    v = -pen.omega * (float(np.sum(state.delta)) - cfg.M) ** 2
    v += pen.lambda_eta * float(np.sum(sg.entropy(state.eta[mask])))
    v += pen.lambda_delta * float(np.sum(sg.entropy(state.delta)))
    return v


def dc_objective(criterion: str, cfg: SystemConfig, H, state: IterateState, pen: PenaltyState,
                 fixed: AssignmentState | None = None) -> float:
    """Penalized (unconvexified) objective evaluated at ``state``."""
    criterion = criterion.upper()
    mask = active_pairs(cfg, fixed)
    pen_v = _penalties(cfg, state, pen, mask, fixed)
    if criterion == "MEE":
        ii, jj = np.nonzero(mask)
        f = sg.f_exact(state.eta[ii, jj], state.Theta[jj], state.t, cfg.B * cfg.psi[jj])
        return float(np.sum(f)) + pen_v
    if criterion == "EE":
        return state.Gamma ** 2 / state.t + pen_v
    if criterion == "SUM":
        return (float(np.sum(state.eta[mask])) if fixed is None else 0.0) + pen_v
    raise ValueError(f"unknown criterion {criterion!r}")


def surrogate_objective(criterion: str, cfg: SystemConfig, H, ep: IterateState, pen: PenaltyState,
                        state: IterateState, fixed: AssignmentState | None = None) -> float:
    """Convexified objective around ``ep`` evaluated at ``state`` (dropped constants included)."""
    criterion = criterion.upper()
    mask = active_pairs(cfg, fixed)
    v = 0.0
    if fixed is None:
        v -= pen.omega * (float(np.sum(state.delta)) - cfg.M) ** 2
        if pen.lambda_eta and mask.any():
            v += pen.lambda_eta * float(np.sum(sg.taylor_entropy(ep.eta[mask])(state.eta[mask])))
        if pen.lambda_delta:
            v += pen.lambda_delta * float(np.sum(sg.taylor_entropy(ep.delta)(state.delta)))
    if criterion == "MEE":
        ii, jj = np.nonzero(mask)
        tf = sg.taylor_f(ep.eta[ii, jj], ep.Theta[jj], ep.t, cfg.B * cfg.psi[jj])
        v += float(np.sum(tf(state.eta[ii, jj], state.Theta[jj], state.t)))
    elif criterion == "EE":
        tg = sg.taylor_gamma_sq(ep.Gamma, ep.t)
        v += float(tg.a * state.Gamma + tg.b * state.t)
    elif criterion == "SUM":
        if fixed is None:
            v += float(np.sum(state.eta[mask]))
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return v


def _interference(H, W, sigma2):
    g = channel_gains(H, W)
    return g.sum(axis=1, keepdims=True) - g + sigma2, g.sum(axis=1) + sigma2


def original_margins(criterion: str, cfg: SystemConfig, H, state: IterateState,
                     mask: np.ndarray | None = None, coupling: str = "rate-lower-bound") -> dict:
    """Slack (``>= 0`` when satisfied) of the DC constraint families before convexification."""
    criterion = criterion.upper()
    mask = cfg.interest_mask > 0 if mask is None else mask
    interf, total = _interference(H, state.W, cfg.sigma2)
    s = state
    out = {}
    if criterion in ("MEE", "EE"):
        J = total[:, None] / s.alpha
        out["interference"] = (J - interf)[mask]
        jj = np.nonzero(mask)[1]
        eta, th = s.eta[mask], s.Theta[jj]
        out["rate"] = 2 * np.log2(s.alpha[mask]) + eta ** 2 + th ** 2 - (eta + th) ** 2
        if criterion == "MEE":
            if coupling == "rate-lower-bound":
                out["power_coupling"] = 2 * s.zeta / cfg.B + s.delta ** 2 + s.Theta ** 2 - (s.delta + s.Theta) ** 2
            else:
                out["power_coupling"] = (s.delta + s.Theta) ** 2 - s.zeta / cfg.B - s.delta ** 2 - s.Theta ** 2
            out["power_total"] = np.array([s.t - _power(cfg, s.W, s.zeta)])
        else:
            out["power_total"] = np.array([s.t - _power(cfg, s.W, cfg.B * s.Theta)])
    elif criterion == "SUM":
        thr = sum_threshold(cfg)[None, :]
        I = total[:, None] / (1.0 + s.eta * thr)
        out["admission"] = (I - interf)[mask]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return out


def convexified_margins(criterion: str, cfg: SystemConfig, H, ep: IterateState, state: IterateState,
                        mask: np.ndarray | None = None, coupling: str = "rate-lower-bound") -> dict:
    """Slack of the convexified constraint families around ``ep``, evaluated at ``state``."""
    criterion = criterion.upper()
    mask = cfg.interest_mask > 0 if mask is None else mask
    H = np.asarray(H, dtype=complex)
    interf, total = _interference(H, state.W, cfg.sigma2)
    s = state
    out = {}
    if criterion in ("MEE", "EE"):
        tj = sg.taylor_J(H, ep.W, np.maximum(ep.alpha, 1.0), cfg.sigma2)
        out["interference"] = (tj(H, s.W, s.alpha) - interf)[mask]
        jj = np.nonzero(mask)[1]
        eta, th = s.eta[mask], s.Theta[jj]
        tg = sg.taylor_G(ep.eta[mask], ep.Theta[jj])
        out["rate"] = 2 * np.log2(s.alpha[mask]) + tg(eta, th) - (eta + th) ** 2
        if criterion == "MEE":
            if coupling == "rate-lower-bound":
                g2 = sg.taylor_G(ep.delta, ep.Theta)
                out["power_coupling"] = 2 * s.zeta / cfg.B + g2(s.delta, s.Theta) - (s.delta + s.Theta) ** 2
            else:
                k2 = sg.taylor_K(ep.delta, ep.Theta)
                out["power_coupling"] = k2(s.delta, s.Theta) - s.zeta / cfg.B - s.delta ** 2 - s.Theta ** 2
            r, r0 = s.zeta, ep.zeta
        else:
            r, r0 = cfg.B * s.Theta, cfg.B * ep.Theta
        p2 = sg.taylor_p2(r0, cfg.power_fn)
        pw = (cfg.P0 + np.sum(np.abs(s.W) ** 2) / cfg.rho
              + cfg.Pi_coeff * np.sum(cfg.power_fn.p1(r) - (p2.const + p2.a * r)))
        out["power_total"] = np.array([s.t - pw])
    elif criterion == "SUM":
        thr = sum_threshold(cfg)[None, :]
        ti = sg.taylor_I(H, ep.W, ep.eta, thr, cfg.sigma2)
        out["admission"] = (ti(H, s.W, s.eta) - interf)[mask]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return out
