"""Standard-form cone programs over linear, second-order and exponential cones.

A :class:`ConeProgram` is

    minimize    c^T x
    subject to  A x = b,
                x[idx_k] in K_k   for every cone entry k,

where each ``K_k`` is the nonnegative orthant, a second-order cone
``{(t, u): |u| <= t}`` or the (closed) exponential cone
``{(a, b, c): b exp(a / b) <= c, b > 0}``.  Cone entries index directly into
``x``; constraints on affine expressions are lifted by :class:`ProgramBuilder`
into auxiliary variables tied by equality rows.

The numerical work is delegated to Clarabel (a primal-dual interior-point
method for these cones).  Residuals, duality gap and cone membership are
recomputed here from the raw data so that the acceptance contract does not
depend on the backend's internal scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Affine",
    "Cone",
    "ConeProgram",
    "ConicSolution",
    "ProgramBuilder",
    "solve",
    "lower_quad_over_lin",
    "lower_log_lb",
    "cone_violation",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "MAX_ITER",
    "NUMERICAL_FAILURE",
]

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAX_ITER = "MaxIter"
NUMERICAL_FAILURE = "NumericalFailure"

CONTRACT_TOL = 1e-7


# ---------------------------------------------------------------------------
# affine expressions
# ---------------------------------------------------------------------------

class Affine:
    """Sparse affine expression ``sum_k coef[k] * x[idx[k]] + const``.

    Duplicate indices are allowed and summed when the program is assembled.
    """

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        self.coef = np.asarray(coef, dtype=float).reshape(-1)
        self.const = float(const)

    @staticmethod
    def var(i: int, coef: float = 1.0) -> "Affine":
        return Affine([int(i)], [coef])

    @staticmethod
    def constant(v: float) -> "Affine":
        return Affine((), (), v)

    @staticmethod
    def sum(terms: Iterable["Affine | float"]) -> "Affine":
        idx, coef, const = [], [], 0.0
        for t in terms:
            if isinstance(t, Affine):
                idx.append(t.idx)
                coef.append(t.coef)
                const += t.const
            else:
                const += float(t)
        if not idx:
            return Affine((), (), const)
        return Affine(np.concatenate(idx), np.concatenate(coef), const)

    @staticmethod
    def dot(idx, coef, const: float = 0.0) -> "Affine":
        return Affine(idx, coef, const)

    def __add__(self, other):
        if isinstance(other, Affine):
            return Affine(np.concatenate([self.idx, other.idx]),
                          np.concatenate([self.coef, other.coef]), self.const + other.const)
        return Affine(self.idx, self.coef, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        s = float(s)
        return Affine(self.idx, self.coef * s, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx] + self.const) if self.idx.size else self.const

    @property
    def is_plain_variable(self) -> bool:
        return self.idx.size == 1 and self.coef[0] == 1.0 and self.const == 0.0

    def __repr__(self):
        terms = " + ".join(f"{c:g}*x{i}" for i, c in zip(self.idx, self.coef))
        return f"Affine({terms} + {self.const:g})"


def _as_affine(e) -> Affine:
    return e if isinstance(e, Affine) else Affine.constant(float(e))


# ---------------------------------------------------------------------------
# program data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Cone:
    kind: str  # "nonneg" | "soc" | "exp"
    index: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=np.int64).reshape(-1)
        if self.kind not in ("nonneg", "soc", "exp"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.kind == "exp" and idx.size != 3:
            raise ValueError("exponential cone entries index exactly three variables")
        if idx.size == 0:
            raise ValueError("empty cone")
        object.__setattr__(self, "index", idx)


@dataclass(eq=False)
class ConeProgram:
    """``minimize c^T x + offset`` s.t. ``A x = b`` and cone memberships.

    ``sign`` maps the solver objective back to the modelling objective:
    the reported model value is ``sign * (c^T x + offset)``; builders for
    maximization problems use ``sign = -1``.
    """

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list[Cone]
    names: dict[str, np.ndarray] = field(default_factory=dict)
    offset: float = 0.0
    sign: float = 1.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = sp.csr_matrix(self.A)
        self.validate()

    @property
    def n(self) -> int:
        return self.c.size

    def validate(self) -> None:
        n = self.c.size
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"A is {self.A.shape}, expected {(self.b.size, n)}")
        if not self.cones and self.b.size == 0:
            raise ValueError("program has neither cones nor equalities")
        for k in self.cones:
            if k.index.min() < 0 or k.index.max() >= n:
                raise ValueError("cone index out of range")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise ValueError("program data must be finite")

    def model_objective(self, x: np.ndarray) -> float:
        return self.sign * (float(self.c @ x) + self.offset)

    def value_of(self, name: str, x: np.ndarray) -> np.ndarray:
        return x[self.names[name]]

    def to_json(self) -> str:
        A = self.A.tocoo()
        return json.dumps({
            "n": self.n,
            "objective": {"c": self.c.tolist(), "offset": self.offset, "sign": self.sign},
            "A": {"rows": A.row.tolist(), "cols": A.col.tolist(), "vals": A.data.tolist(),
                  "shape": list(A.shape)},
            "b": self.b.tolist(),
            "cones": [{"kind": k.kind, "index": k.index.tolist()} for k in self.cones],
            "names": {k: np.asarray(v).tolist() for k, v in self.names.items()},
        })

    @classmethod
    def from_json(cls, s: str) -> "ConeProgram":
        d = json.loads(s)
        a = d["A"]
        A = sp.coo_matrix((a["vals"], (a["rows"], a["cols"])), shape=tuple(a["shape"]))
        return cls(np.asarray(d["objective"]["c"]), A, np.asarray(d["b"]),
                   [Cone(k["kind"], k["index"]) for k in d["cones"]],
                   {k: np.asarray(v) for k, v in d["names"].items()},
                   d["objective"]["offset"], d["objective"]["sign"])


@dataclass(eq=False)
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int = 0
    objective: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------

class ProgramBuilder:
    """Incrementally assemble a :class:`ConeProgram` from affine constraints."""

    def __init__(self):
        self.n = 0
        self.names: dict[str, np.ndarray] = {}
        self._rows: list[Affine] = []
        self._cones: list[Cone] = []

    def variable(self, name: str, shape: int | tuple = ()) -> np.ndarray:
        size = int(np.prod(shape)) if shape != () else 1
        idx = np.arange(self.n, self.n + size).reshape(shape) if shape != () else np.int64(self.n)
        self.n += size
        if name in self.names:
            raise ValueError(f"duplicate variable name {name!r}")
        self.names[name] = np.asarray(idx)
        return idx

    def _aux(self, count: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        return idx

    def _slots(self, exprs: Sequence) -> np.ndarray:
        """Variable indices holding the values of ``exprs`` (lifting when needed)."""
        exprs = [_as_affine(e) for e in exprs]
        out = np.empty(len(exprs), dtype=np.int64)
        lift = [k for k, e in enumerate(exprs) if not e.is_plain_variable]
        for k, e in enumerate(exprs):
            if e.is_plain_variable:
                out[k] = e.idx[0]
        if lift:
            aux = self._aux(len(lift))
            for a, k in zip(aux, lift):
                out[k] = a
                self._rows.append(Affine.var(a) - exprs[k])
        return out

    def add_eq(self, expr) -> None:
        self._rows.append(_as_affine(expr))

    def add_nonneg(self, *exprs) -> None:
        """Each expression is constrained to be >= 0."""
        if len(exprs) == 1 and isinstance(exprs[0], (list, tuple)):
            exprs = tuple(exprs[0])
        self._cones.append(Cone("nonneg", self._slots(exprs)))

    def add_le(self, lhs, rhs) -> None:
        self.add_nonneg(_as_affine(rhs) - lhs)

    def add_soc(self, t, u: Sequence) -> None:
        """``|u|_2 <= t``."""
        self._cones.append(Cone("soc", self._slots([t, *u])))

    def add_exp(self, a, b, c) -> None:
        """``b exp(a / b) <= c``."""
        self._cones.append(Cone("exp", self._slots([a, b, c])))

    def fix(self, idx, values) -> None:
        for i, v in zip(np.ravel(idx), np.ravel(values)):
            self._rows.append(Affine.var(int(i)) - float(v))

    def build(self, objective, maximize: bool = False) -> ConeProgram:
        obj = _as_affine(objective)
        c = np.zeros(self.n)
        np.add.at(c, obj.idx, obj.coef)
        sign = -1.0 if maximize else 1.0
        rows, cols, vals, b = [], [], [], np.empty(len(self._rows))
        for r, e in enumerate(self._rows):
            rows.append(np.full(e.idx.size, r))
            cols.append(e.idx)
            vals.append(e.coef)
            b[r] = -e.const
        if self._rows:
            A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(len(self._rows), self.n)).tocsr()
        else:
            A = sp.csr_matrix((0, self.n))
        A.sum_duplicates()
        A.eliminate_zeros()
        return ConeProgram(sign * c, A, b, list(self._cones), dict(self.names),
                           offset=sign * obj.const, sign=sign)


# ---------------------------------------------------------------------------
# lowering helpers
# ---------------------------------------------------------------------------

def lower_quad_over_lin(builder: ProgramBuilder, u, t, s) -> None:
    """Encode ``|u|^2 <= s t`` (``t >= 0``) as ``|[2u; t - s]| <= t + s``.

    ``u`` may be a single affine expression or a sequence of them.
    """
    if isinstance(u, (Affine, int, float)):
        u = [u]
    t, s = _as_affine(t), _as_affine(s)
    builder.add_soc(t + s, [2.0 * _as_affine(e) for e in u] + [t - s])


def lower_log_lb(builder: ProgramBuilder, alpha, beta) -> None:
    """Encode ``log(alpha) >= beta`` (natural log) as ``(beta, 1, alpha) in K_exp``."""
    builder.add_exp(beta, 1.0, alpha)


# ---------------------------------------------------------------------------
# cone membership (independent of the solver)
# ---------------------------------------------------------------------------

def _exp_violation(a: float, b: float, c: float) -> float:
    if b > 1e-300:
        e = math.log(b) + a / b
        lhs = math.exp(min(e, 700.0))
        return max(0.0, lhs - c)
    # closed-cone boundary: b == 0 requires a <= 0 and c >= 0
    return max(0.0, -b) + max(0.0, a) + max(0.0, -c)


def _exp_dual_violation(u: float, v: float, w: float) -> float:
    # K_exp^* = {(u, v, w): u < 0, -u exp(v / u) <= e w} U {(0, v, w): v, w >= 0}
    if u < -1e-300:
        lhs = -u * math.exp(min(v / u, 700.0))
        return max(0.0, lhs - math.e * w)
    return max(0.0, u) + max(0.0, -v) + max(0.0, -w)


def cone_violation(kind: str, v: np.ndarray, dual: bool = False) -> float:
    """Nonnegative measure of how far ``v`` is from the cone (0 if inside)."""
    if kind == "nonneg":
        return float(np.linalg.norm(np.minimum(v, 0.0)))
    if kind == "soc":
        return max(0.0, float(np.linalg.norm(v[1:]) - v[0])) / math.sqrt(2.0)
    if kind == "exp":
        return (_exp_dual_violation if dual else _exp_violation)(*map(float, v))
    raise ValueError(kind)


def residuals(p: ConeProgram, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> tuple[float, float, float]:
    """Primal residual, dual residual and relative duality gap of a pair.

    Dual feasibility is ``c - A^T y - E^T z = 0`` with ``z`` in the dual
    cones, where ``E`` stacks the cone index selections.
    """
    rp2 = float(np.sum((p.A @ x - p.b) ** 2))
    dual_lin = p.c - p.A.T @ y
    pos = 0
    rd_cone2 = 0.0
    for k in p.cones:
        seg = z[pos:pos + k.index.size]
        np.subtract.at(dual_lin, k.index, seg)
        rp2 += cone_violation(k.kind, x[k.index]) ** 2
        rd_cone2 += cone_violation(k.kind, seg, dual=True) ** 2
        pos += k.index.size
    rd = math.sqrt(float(np.sum(dual_lin ** 2)) + rd_cone2)
    pobj = float(p.c @ x)
    dobj = float(p.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return math.sqrt(rp2), rd, gap


def meets_contract(p: ConeProgram, rp: float, rd: float, gap: float, tol: float = CONTRACT_TOL) -> bool:
    return (rp <= tol * (1.0 + np.linalg.norm(p.b))
            and rd <= tol * (1.0 + np.linalg.norm(p.c))
            and gap <= tol)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": MAX_ITER,
    "MaxTime": MAX_ITER,
}


# Backend settings tried in order; the first attempt whose iterate passes the
# independent residual check is accepted.  Later entries trade speed for
# robustness on badly scaled programs.
FALLBACK_SETTINGS = (
    {},
    {"static_regularization_constant": 1e-7},
    {"max_step_fraction": 0.9},
    {"equilibrate_enable": False},
)


def _settings(max_iter: int, tol: float, **overrides):
    import clarabel

    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iter
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_ktratio = 1e-7
    s.max_threads = 1
    s.presolve_enable = False
    for k, v in overrides.items():
        setattr(s, k, v)
    return s


def solve(p: ConeProgram, warm_start: ConicSolution | None = None, *,
          max_iter: int = 200, tol: float = 1e-10) -> ConicSolution:
    """Solve ``p``; failures are reported through ``status``, not raised.

    ``warm_start`` is accepted for interface compatibility; the interior-point
    backend always cold-starts, so it cannot alter the accepted-solution
    contract.
    """
    import clarabel

    p.validate()
    n = p.n
    m_eq = p.b.size
    cone_rows = sum(k.index.size for k in p.cones)
    sel_rows = np.arange(cone_rows)
    sel_cols = np.concatenate([k.index for k in p.cones]) if p.cones else np.empty(0, dtype=np.int64)
    E = sp.coo_matrix((-np.ones(cone_rows), (sel_rows, sel_cols)), shape=(cone_rows, n))
    A_cl = sp.vstack([p.A, E]).tocsc()
    b_cl = np.concatenate([p.b, np.zeros(cone_rows)])
    cones = []
    if m_eq:
        cones.append(clarabel.ZeroConeT(m_eq))
    # merge consecutive nonnegative entries to keep the cone list short
    run = 0
    for k in p.cones:
        if k.kind == "nonneg":
            run += k.index.size
            continue
        if run:
            cones.append(clarabel.NonnegativeConeT(run))
            run = 0
        cones.append(clarabel.SecondOrderConeT(k.index.size) if k.kind == "soc"
                     else clarabel.ExponentialConeT())
    if run:
        cones.append(clarabel.NonnegativeConeT(run))
    P = sp.csc_matrix((n, n))
    sol = None
    for overrides in FALLBACK_SETTINGS:
        sol = _attempt(p, P, A_cl, b_cl, cones, m_eq, _settings(max_iter, tol, **overrides))
        if sol.status in (OPTIMAL, INFEASIBLE, UNBOUNDED):
            break
    return sol


def _attempt(p, P, A_cl, b_cl, cones, m_eq, settings) -> ConicSolution:
    import clarabel

    solver = clarabel.DefaultSolver(P, p.c, A_cl, b_cl, cones, settings)
    raw = solver.solve()
    status = _STATUS_MAP.get(str(raw.status), NUMERICAL_FAILURE)
    x = np.asarray(raw.x, dtype=float)
    lam = np.asarray(raw.z, dtype=float)
    y = -lam[:m_eq]
    z = lam[m_eq:]
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
        return ConicSolution(np.nan_to_num(x), np.nan_to_num(y), np.nan_to_num(z), NUMERICAL_FAILURE,
                             math.inf, math.inf, math.inf, int(raw.iterations))
    rp, rd, gap = residuals(p, x, y, z)
    met = meets_contract(p, rp, rd, gap)
    if status == OPTIMAL and not met:
        status = NUMERICAL_FAILURE
    elif status in (MAX_ITER, NUMERICAL_FAILURE) and met:
        # the backend stalled but its best iterate passes the independent check
        status = OPTIMAL
    return ConicSolution(x, y, z, status, rp, rd, gap, int(raw.iterations), p.model_objective(x))
