import math

import numpy as np
import pytest
import scipy.sparse as sp

from _support import (
    ball_halfspace,
    bisection_oracle,
    lp_program,
    random_lp,
    socp_program,
    vertex_oracle,
)
from mgmc import conic
from mgmc.conic import Affine, Cone, ConeProgram, ProgramBuilder, lower_log_lb, lower_quad_over_lin


def _solve_min(build):
    b = ProgramBuilder()
    obj = build(b)
    p = b.build(obj)
    sol = conic.solve(p)
    assert sol.ok, sol.status
    return p, sol


# ---------------------------------------------------------------------------
# hand examples
# ---------------------------------------------------------------------------

def test_linear_lower_bound():
    def build(b):
        x = b.variable("x")
        b.add_nonneg(Affine.var(x) - 1.0)
        return Affine.var(x)

    p, sol = _solve_min(build)
    assert sol.x[p.names["x"]] == pytest.approx(1.0, abs=1e-7)


def test_fixed_second_order_cone():
    def build(b):
        t = b.variable("t")
        b.add_soc(Affine.var(t), [3.0, 4.0])
        return Affine.var(t)

    _, sol = _solve_min(build)
    assert sol.objective == pytest.approx(5.0, abs=1e-7)


def test_exponential_cone_definition():
    def build(b):
        c = b.variable("c")
        b.add_exp(1.0, 1.0, Affine.var(c))
        return Affine.var(c)

    _, sol = _solve_min(build)
    assert sol.objective == pytest.approx(math.e, abs=1e-6)


@pytest.mark.parametrize("u,t,expected", [(2.0, 1.0, 4.0), (0.0, 3.0, 0.0), (3.0, 2.0, 4.5)])
def test_quad_over_lin(u, t, expected):
    def build(b):
        s = b.variable("s")
        lower_quad_over_lin(b, u, t, Affine.var(s))
        return Affine.var(s)

    _, sol = _solve_min(build)
    assert sol.objective == pytest.approx(expected, abs=1e-6)


def test_quad_over_lin_vector_argument():
    def build(b):
        s = b.variable("s")
        lower_quad_over_lin(b, [1.0, 2.0], 5.0, Affine.var(s))
        return Affine.var(s)

    _, sol = _solve_min(build)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("beta,expected", [(0.0, 1.0), (1.0, math.e), (math.log(10.0), 10.0)])
def test_log_lower_bound(beta, expected):
    def build(b):
        a = b.variable("alpha")
        lower_log_lb(b, Affine.var(a), beta)
        return Affine.var(a)

    _, sol = _solve_min(build)
    assert sol.objective == pytest.approx(expected, abs=1e-6)


def test_maximize_sign_convention():
    b = ProgramBuilder()
    x = b.variable("x")
    b.add_le(Affine.var(x), 2.5)
    p = b.build(Affine.var(x) + 1.0, maximize=True)
    sol = conic.solve(p)
    assert sol.ok
    assert sol.objective == pytest.approx(3.5, abs=1e-7)


# ---------------------------------------------------------------------------
# failure statuses and malformed input
# ---------------------------------------------------------------------------

def test_infeasible_status():
    b = ProgramBuilder()
    x = b.variable("x")
    b.add_nonneg(Affine.var(x) - 1.0, -Affine.var(x))
    sol = conic.solve(b.build(Affine.var(x)))
    assert sol.status == conic.INFEASIBLE


def test_unbounded_status():
    b = ProgramBuilder()
    x = b.variable("x")
    b.add_nonneg(-Affine.var(x))
    sol = conic.solve(b.build(Affine.var(x)))
    assert sol.status == conic.UNBOUNDED


def test_malformed_programs_raise():
    with pytest.raises(ValueError):
        ConeProgram(np.zeros(2), sp.csr_matrix((1, 3)), np.zeros(1), [])
    with pytest.raises(ValueError):
        ConeProgram(np.zeros(2), sp.csr_matrix((0, 2)), np.zeros(0), [])
    with pytest.raises(ValueError):
        ConeProgram(np.zeros(2), sp.csr_matrix((0, 2)), np.zeros(0), [Cone("nonneg", [5])])
    with pytest.raises(ValueError):
        ConeProgram(np.array([np.nan, 0.0]), sp.csr_matrix((0, 2)), np.zeros(0), [Cone("nonneg", [0])])
    with pytest.raises(ValueError):
        Cone("psd", [0])
    with pytest.raises(ValueError):
        Cone("exp", [0, 1])


def test_cone_violation_is_zero_inside():
    assert conic.cone_violation("soc", np.array([5.0, 3.0, 4.0])) == 0.0
    assert conic.cone_violation("soc", np.array([4.0, 3.0, 4.0])) > 0.0
    assert conic.cone_violation("exp", np.array([1.0, 1.0, math.e + 1e-9])) == 0.0
    assert conic.cone_violation("exp", np.array([1.0, 1.0, 2.7])) > 0.0
    # boundary of the closed exponential cone
    assert conic.cone_violation("exp", np.array([-1.0, 0.0, 0.0])) == 0.0
    assert conic.cone_violation("exp", np.array([1.0, 0.0, 5.0])) > 0.0


# ---------------------------------------------------------------------------
# random programs against independent oracles
# ---------------------------------------------------------------------------

def _assert_contract(p, sol):
    rp, rd, gap = conic.residuals(p, sol.x, sol.y, sol.z)
    assert conic.meets_contract(p, rp, rd, gap)
    # weak duality: primal >= dual for minimization, up to the gap tolerance
    pobj, dobj = float(p.c @ sol.x), float(p.b @ sol.y)
    assert pobj - dobj >= -conic.CONTRACT_TOL * (1 + abs(pobj) + abs(dobj))


@pytest.mark.parametrize("seed", range(5))
def test_random_lps_match_vertex_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(10):
        c, A, b = random_lp(rng)
        p = lp_program(c, A, b)
        sol = conic.solve(p)
        assert sol.ok
        _assert_contract(p, sol)
        assert sol.objective == pytest.approx(vertex_oracle(c, A, b), abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_random_socps_match_bisection(seed):
    rng = np.random.default_rng(200 + seed)
    for _ in range(10):
        inst = ball_halfspace(rng)
        p = socp_program(*inst)
        sol = conic.solve(p)
        assert sol.ok
        _assert_contract(p, sol)
        assert sol.objective == pytest.approx(bisection_oracle(*inst), abs=1e-6)


def test_returned_point_is_cone_feasible():
    rng = np.random.default_rng(7)
    p = socp_program(*ball_halfspace(rng))
    sol = conic.solve(p)
    for k in p.cones:
        assert conic.cone_violation(k.kind, sol.x[k.index]) <= 1e-7


def test_deterministic_and_json_round_trip():
    rng = np.random.default_rng(9)
    p = socp_program(*ball_halfspace(rng))
    s1, s2 = conic.solve(p), conic.solve(p)
    assert s1.x.tobytes() == s2.x.tobytes()
    q = ConeProgram.from_json(p.to_json())
    assert q.to_json() == p.to_json()
    s3 = conic.solve(q)
    assert s3.objective == pytest.approx(s1.objective, abs=1e-9)


def test_warm_start_does_not_change_result():
    rng = np.random.default_rng(11)
    p = lp_program(*random_lp(rng))
    s1 = conic.solve(p)
    s2 = conic.solve(p, warm_start=s1)
    assert s2.ok and s2.objective == pytest.approx(s1.objective, abs=1e-12)
