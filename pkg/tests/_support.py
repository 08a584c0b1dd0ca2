"""Shared helpers for the test-suite (sampling around iterates, instance builders)."""

import itertools
import math

import numpy as np

from mgmc.conic import Affine, ProgramBuilder
from mgmc.criteria import IterateState, convexified_margins, original_margins


def perturb(state: IterateState, rng: np.random.Generator, scale: float = 0.3) -> IterateState:
    """Random point near ``state`` respecting the variable domains (boxes, alpha >= 1, t > 0)."""
    s = state
    noise = rng.standard_normal(s.W.shape) + 1j * rng.standard_normal(s.W.shape)
    w_scale = scale * (1.0 + np.sqrt(np.mean(np.abs(s.W) ** 2)))
    return IterateState(
        s.W + w_scale * noise,
        np.clip(s.eta + scale * rng.standard_normal(s.eta.shape), 0.0, 1.0),
        np.clip(s.delta + scale * rng.standard_normal(s.delta.shape), 0.0, 1.0),
        np.maximum(s.Theta + scale * (1.0 + s.Theta) * rng.standard_normal(s.Theta.shape), 0.0),
        np.maximum(s.zeta + scale * (1.0 + s.zeta) * rng.standard_normal(s.zeta.shape), 0.0),
        np.maximum(s.alpha * (1.0 + scale * rng.standard_normal(s.alpha.shape)), 1.0),
        max(s.t * (1.0 + scale * rng.standard_normal()), 1e-3),
        max(s.Gamma * (1.0 + scale * rng.standard_normal()), 0.0),
    )


def inner_approximation_counts(criterion, cfg, H, ep, samples, rng, scale=0.3, tol=1e-9):
    """Per constraint family: (entries satisfying the convexified constraint,
    those among them violating the original one)."""
    counts = {}
    for _ in range(samples):
        s = perturb(ep, rng, scale)
        conv = convexified_margins(criterion, cfg, H, ep, s)
        orig = original_margins(criterion, cfg, H, s)
        for fam, c in conv.items():
            ok = c >= 0
            o = orig[fam][ok]
            bad = int(np.sum(o < -tol * (1.0 + np.abs(o))))
            n, b = counts.get(fam, (0, 0))
            counts[fam] = (n + int(ok.sum()), b + bad)
    return counts


# ---------------------------------------------------------------------------
# random cone programs and their oracles
# ---------------------------------------------------------------------------

def random_lp(rng):
    """``min c^T x  s.t.  A x <= b`` with a box so the polytope is bounded."""
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 5))
    A = rng.standard_normal((m, n))
    x_in = rng.uniform(-1, 1, n)
    b = A @ x_in + rng.uniform(0.1, 1.0, m)
    box = rng.uniform(1.5, 3.0)
    A = np.vstack([A, np.eye(n), -np.eye(n)])
    b = np.concatenate([b, np.full(2 * n, box)])
    return rng.standard_normal(n), A, b


def vertex_oracle(c, A, b):
    """Minimum of ``c^T x`` over the vertices of ``{A x <= b}``."""
    n = c.size
    best = math.inf
    for rows in itertools.combinations(range(A.shape[0]), n):
        Ar = A[list(rows)]
        if abs(np.linalg.det(Ar)) < 1e-10:
            continue
        v = np.linalg.solve(Ar, b[list(rows)])
        if np.all(A @ v <= b + 1e-9):
            best = min(best, float(c @ v))
    return best


def lp_program(c, A, b):
    pb = ProgramBuilder()
    x = pb.variable("x", c.size)
    pb.add_nonneg([float(bi) - Affine.dot(x, Ai) for Ai, bi in zip(A, b)])
    return pb.build(Affine.dot(x, c))


def ball_halfspace(rng):
    """``min c^T x  s.t.  |x - x0| <= r,  a^T x <= beta`` (nonempty interior)."""
    n = int(rng.integers(2, 5))
    c, a, x0 = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
    r = rng.uniform(0.5, 2.0)
    beta = float(a @ x0 + r * np.linalg.norm(a) * rng.uniform(-0.8, 0.8))
    return c, a, x0, r, beta


def bisection_oracle(c, a, x0, r, beta):
    """Maximize the concave dual ``q(mu)`` of the halfspace constraint by bisection on ``q'``."""
    def q(mu):
        v = c + mu * a
        return float(v @ x0 - r * np.linalg.norm(v) - mu * beta)

    def dq(mu):
        v = c + mu * a
        return float(a @ x0 - r * (v @ a) / np.linalg.norm(v) - beta)

    if dq(0.0) <= 0:
        return q(0.0)
    lo, hi = 0.0, 1.0
    while dq(hi) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dq(mid) > 0:
            lo = mid
        else:
            hi = mid
    return q(0.5 * (lo + hi))


def socp_program(c, a, x0, r, beta):
    pb = ProgramBuilder()
    x = pb.variable("x", c.size)
    pb.add_soc(r, [Affine.var(x[k]) - float(x0[k]) for k in range(c.size)])
    pb.add_le(Affine.dot(x, a), beta)
    return pb.build(Affine.dot(x, c))
