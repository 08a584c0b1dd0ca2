"""Physical model of the single-cell multigroup multicast downlink.

Holds the configuration, channel generation, SINR evaluation, the
rate-dependent power consumption model and the efficiency metrics used to
score a (rounded) grouping/scheduling decision together with a precoder.

Conventions
-----------
* ``H`` is an ``N x M`` complex matrix whose row ``i`` is ``h_i^H``; hence
  ``(H @ W)[i, j] = h_i^H w_j``.
* ``W`` is ``M x G``; column ``j`` is the precoder of group ``j``.
* Rates are in bits/s (``B * log2(1 + SINR)``); QoS thresholds ``eps`` are in
  bits/s/Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

__all__ = [
    "ConfigError",
    "DCFunctionSpec",
    "SystemConfig",
    "ChannelSet",
    "AssignmentState",
    "Metrics",
    "generate_channels",
    "channel_gains",
    "sinr",
    "sinr_matrix",
    "consumed_power",
    "score",
    "qos_satisfied",
    "dbw_to_watts",
    "watts_to_dbw",
]


class ConfigError(ValueError):
    """Raised for invalid system or solver configuration."""


def dbw_to_watts(dbw: float) -> float:
    return 10.0 ** (dbw / 10.0)


def watts_to_dbw(watts: float) -> float:
    return 10.0 * math.log10(watts)


# ---------------------------------------------------------------------------
# rate-dependent processing power p(x) = p1(x) - p2(x)
# ---------------------------------------------------------------------------

_FAMILIES = ("zero", "quadratic", "exponential")


def _family_eval(kind: str, params: dict) -> tuple[Callable, Callable]:
    if kind == "zero":
        return (lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                lambda x: np.zeros_like(np.asarray(x, dtype=float)))
    if kind == "quadratic":
        a = float(params.get("a", 0.0))
        b = float(params.get("b", 0.0))
        return (lambda x: a * np.square(x) + b * np.asarray(x, dtype=float),
                lambda x: 2.0 * a * np.asarray(x, dtype=float) + b)
    if kind == "exponential":
        s = float(params.get("scale", 1.0))
        c = float(params.get("c", 1.0))
        return (lambda x: s * np.expm1(c * np.asarray(x, dtype=float)),
                lambda x: s * c * np.exp(c * np.asarray(x, dtype=float)))
    raise ConfigError(f"unknown power function family {kind!r}; expected one of {_FAMILIES}")


@dataclass(frozen=True)
class DCFunctionSpec:
    """Difference-of-convex rate-dependent power ``p(x) = p1(x) - p2(x)``.

    Both parts are drawn from built-in families so that ``p1`` can be lowered
    to a cone constraint and ``p2`` linearized:

    * ``"zero"``: 0
    * ``"quadratic"``: ``a x^2 + b x`` (``a, b >= 0``)
    * ``"exponential"``: ``scale * (exp(c x) - 1)`` (``scale, c >= 0``)

    The default is ``p1(x) = x^2``, ``p2 = 0``.
    """

    p1_kind: str = "quadratic"
    p1_params: dict = field(default_factory=lambda: {"a": 1.0, "b": 0.0})
    p2_kind: str = "zero"
    p2_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p1_kind == "zero":
            raise ConfigError("p1 must be a nonzero convex family")
        for kind, params in ((self.p1_kind, self.p1_params), (self.p2_kind, self.p2_params)):
            _family_eval(kind, params)
            if any(float(v) < 0 for v in params.values()):
                raise ConfigError(f"power function parameters must be nonnegative: {params}")

    @property
    def tag(self) -> str:
        return f"{self.p1_kind}{_fmt(self.p1_params)}-{self.p2_kind}{_fmt(self.p2_params)}"

    def p1(self, x):
        return _family_eval(self.p1_kind, self.p1_params)[0](x)

    def dp1(self, x):
        return _family_eval(self.p1_kind, self.p1_params)[1](x)

    def p2(self, x):
        return _family_eval(self.p2_kind, self.p2_params)[0](x)

    def dp2(self, x):
        return _family_eval(self.p2_kind, self.p2_params)[1](x)

    def p(self, x):
        return self.p1(x) - self.p2(x)

    def check(self, grid: np.ndarray | None = None) -> None:
        """Numerically verify the invariants on a grid; raise ConfigError otherwise."""
        if grid is None:
            grid = np.linspace(0.0, 10.0, 201)
        if abs(float(self.p1(0.0)) - float(self.p2(0.0))) > 1e-12:
            raise ConfigError("power function must satisfy p(0) = 0")
        for name, fn in (("p1", self.p1), ("p2", self.p2)):
            v = fn(grid)
            if np.any(np.diff(v) < -1e-12 * (1 + np.abs(v[1:]))):
                raise ConfigError(f"{name} is not nondecreasing on [0, inf)")
            if np.any(v[:-2] - 2 * v[1:-1] + v[2:] < -1e-9 * (1 + np.abs(v[1:-1]))):
                raise ConfigError(f"{name} is not convex")
        if np.any(self.p(grid) < -1e-9):
            raise ConfigError("power function p = p1 - p2 must be nonnegative")
        hstep = 1e-6
        for fn, dfn in ((self.p1, self.dp1), (self.p2, self.dp2)):
            fd = (fn(grid + hstep) - fn(grid - hstep)) / (2 * hstep)
            an = dfn(grid)
            err = np.abs(fd - an) / np.maximum(1.0, np.abs(an))
            if np.max(err) > 1e-6:
                raise ConfigError("power function derivative does not match finite differences")

    def to_dict(self) -> dict:
        return {"p1": {"kind": self.p1_kind, **self.p1_params},
                "p2": {"kind": self.p2_kind, **self.p2_params}}

    @classmethod
    def from_dict(cls, d: dict | None) -> "DCFunctionSpec":
        if d is None:
            return cls()
        p1 = dict(d.get("p1", {"kind": "quadratic", "a": 1.0}))
        p2 = dict(d.get("p2", {"kind": "zero"}))
        k1, k2 = p1.pop("kind"), p2.pop("kind")
        return cls(k1, {k: float(v) for k, v in p1.items()}, k2, {k: float(v) for k, v in p2.items()})


def _fmt(params: dict) -> str:
    if not params:
        return ""
    return "(" + ",".join(f"{k}={v:g}" for k, v in sorted(params.items())) + ")"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Physical constants of one multigroup multicast scenario.

    ``eps`` and ``psi`` accept a scalar (broadcast to all groups) or a length-G
    sequence.  ``interest_mask`` defaults to every user being interested in
    every message.  Defaults for the power model follow the usual simulation
    setting (``P0 = 16 W``, ``rho = 0.2``, ``Pi = 2.4``, ``p(x) = x^2``,
    ``B = 1 Hz``, ``sigma2 = 1``).
    """

    M: int
    N: int
    G: int
    P_T: float
    B: float = 1.0
    sigma2: float = 1.0
    eps: np.ndarray | float = 1.0
    psi: np.ndarray | float = 1.0
    P0: float = 16.0
    rho: float = 0.2
    Pi_coeff: float = 2.4
    power_fn: DCFunctionSpec = field(default_factory=DCFunctionSpec)
    interest_mask: np.ndarray | None = None

    def __post_init__(self):
        for name in ("M", "N", "G"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.N < self.M:
            raise ConfigError(f"need N >= M, got N={self.N}, M={self.M}")
        if self.G < self.M:
            raise ConfigError(f"need G >= M, got G={self.G}, M={self.M}")
        for name in ("P_T", "sigma2", "B"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
            object.__setattr__(self, name, float(getattr(self, name)))
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]")
        if self.P0 < 0 or self.Pi_coeff < 0:
            raise ConfigError("P0 and Pi_coeff must be nonnegative")
        eps = np.broadcast_to(np.asarray(self.eps, dtype=float), (self.G,)).copy()
        psi = np.broadcast_to(np.asarray(self.psi, dtype=float), (self.G,)).copy()
        if np.any(eps < 0):
            raise ConfigError("QoS thresholds eps must be nonnegative")
        if np.any(psi <= 0):
            raise ConfigError("group weights psi must be positive")
        eps.flags.writeable = False
        psi.flags.writeable = False
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "psi", psi)
        if self.interest_mask is None:
            mask = np.ones((self.N, self.G), dtype=bool)
        else:
            mask = np.asarray(self.interest_mask).astype(bool)
            if mask.shape != (self.N, self.G):
                raise ConfigError(f"interest_mask must be {self.N}x{self.G}, got {mask.shape}")
            mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "interest_mask", mask)
        self.power_fn.check()

    def p(self, x):
        return self.power_fn.p(x)

    def replace(self, **changes) -> "SystemConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        if "N" in changes or "G" in changes:
            kw["interest_mask"] = None
        if "G" in changes:
            for name in ("eps", "psi"):
                v = getattr(self, name)
                if not np.all(v == v[0]):
                    raise ConfigError(f"cannot change G with non-uniform {name}")
                kw[name] = float(v[0])
        kw.update(changes)
        return SystemConfig(**kw)

    def to_dict(self) -> dict:
        return {
            "M": self.M, "N": self.N, "G": self.G, "P_T": self.P_T, "B": self.B,
            "sigma2": self.sigma2, "eps": self.eps.tolist(), "psi": self.psi.tolist(),
            "P0": self.P0, "rho": self.rho, "Pi_coeff": self.Pi_coeff,
            "power_fn": self.power_fn.to_dict(),
            "interest_mask": self.interest_mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if "power_fn" in d:
            d["power_fn"] = DCFunctionSpec.from_dict(d["power_fn"])
        if d.get("interest_mask") is not None:
            d["interest_mask"] = np.asarray(d["interest_mask"], dtype=bool)
        return cls(**d)


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChannelSet:
    H: np.ndarray
    seed: int | None = None
    distribution: str = "iid-rayleigh"

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        if H.ndim != 2 or not np.all(np.isfinite(H)):
            raise ConfigError("channel matrix must be a finite 2-D array")
        H.flags.writeable = False
        object.__setattr__(self, "H", H)

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    def check(self, cfg: SystemConfig) -> None:
        if self.H.shape != (cfg.N, cfg.M):
            raise ConfigError(f"channel is {self.H.shape}, config expects {(cfg.N, cfg.M)}")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "N": self.N, "M": self.M,
                "H_re": self.H.real.tolist(), "H_im": self.H.imag.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSet":
        H = np.asarray(d["H_re"], dtype=float) + 1j * np.asarray(d["H_im"], dtype=float)
        if H.shape != (d["N"], d["M"]):
            raise ConfigError("channel JSON dimensions disagree with N, M")
        return cls(H, d.get("seed"))


def generate_channels(cfg: SystemConfig, seed: int) -> ChannelSet:
    """I.i.d. circularly-symmetric unit-variance complex Gaussian channels."""
    rng = np.random.default_rng(seed)
    H = (rng.standard_normal((cfg.N, cfg.M)) + 1j * rng.standard_normal((cfg.N, cfg.M))) / np.sqrt(2.0)
    return ChannelSet(H, seed)


def _as_H(H) -> np.ndarray:
    return H.H if isinstance(H, ChannelSet) else np.asarray(H)


def channel_gains(H, W: np.ndarray) -> np.ndarray:
    """``|h_i^H w_j|^2`` for all users and groups (``N x G``)."""
    return np.abs(_as_H(H) @ np.asarray(W)) ** 2


def sinr_matrix(H, W: np.ndarray, sigma2: float) -> np.ndarray:
    gains = channel_gains(H, W)
    interference = gains.sum(axis=1, keepdims=True) - gains
    return gains / (interference + sigma2)


def sinr(H, W: np.ndarray, i: int, j: int, sigma2: float) -> float:
    """SINR of user ``i`` decoding the message of group ``j``."""
    g = channel_gains(np.atleast_2d(_as_H(H)[i]), W)[0]
    return float(g[j] / (g.sum() - g[j] + sigma2))


def consumed_power(cfg: SystemConfig, W: np.ndarray, r: np.ndarray) -> float:
    """Base-station power ``P0 + sum_j (|w_j|^2 / rho + Pi p(r_j))`` in Watts."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("rates must be nonnegative")
    W = np.asarray(W)
    tx = float(np.sum(np.abs(W) ** 2))
    return float(cfg.P0 + tx / cfg.rho + cfg.Pi_coeff * np.sum(cfg.p(r)))


# ---------------------------------------------------------------------------
# assignments and metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AssignmentState:
    """Grouping/scheduling indicators, relaxed (in [0, 1]) or rounded."""

    eta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        delta = np.array(self.delta, dtype=float).reshape(-1)
        if eta.ndim != 2 or eta.shape[1] != delta.shape[0]:
            raise ValueError("eta must be N x G and delta length G")
        eta.flags.writeable = False
        delta.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "delta", delta)

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.eta == 0) | (self.eta == 1)) and np.all((self.delta == 0) | (self.delta == 1)))

    def structural_violations(self, cfg: SystemConfig | None = None, M: int | None = None) -> list[str]:
        out = []
        if not self.is_binary:
            out.append("not binary")
        if np.any(self.eta.sum(axis=1) > 1 + 1e-9):
            out.append("UGC: a user belongs to more than one group")
        if np.any(self.eta > self.delta[None, :] + 1e-9):
            out.append("member assigned to an unscheduled group")
        if cfg is not None and np.any(self.eta[~cfg.interest_mask] > 0):
            out.append("user assigned to an uninterested group")
        if M is not None and int(round(self.delta.sum())) != M:
            out.append(f"GSC: {int(round(self.delta.sum()))} groups scheduled, expected {M}")
        return out

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.eta[:, j] > 0.5)

    def to_dict(self) -> dict:
        return {"eta": self.eta.tolist(), "delta": self.delta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AssignmentState":
        return cls(np.asarray(d["eta"], dtype=float), np.asarray(d["delta"], dtype=float))


@dataclass(frozen=True)
class Metrics:
    mee: float
    ee: float
    throughput: float
    consumed_power: float
    scheduled_users: int
    scheduled_groups: int
    min_rates: tuple

    def to_dict(self) -> dict:
        return {"mee": self.mee, "ee": self.ee, "throughput": self.throughput,
                "consumed_power": self.consumed_power, "scheduled_users": self.scheduled_users,
                "scheduled_groups": self.scheduled_groups, "min_rates": list(self.min_rates)}

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(d["mee"], d["ee"], d["throughput"], d["consumed_power"],
                   int(d["scheduled_users"]), int(d["scheduled_groups"]), tuple(d["min_rates"]))


def group_min_rates(cfg: SystemConfig, H, W: np.ndarray, assignment: AssignmentState) -> np.ndarray:
    gam = sinr_matrix(H, W, cfg.sigma2)
    rates = np.zeros(cfg.G)
    for j in range(cfg.G):
        members = assignment.members(j)
        if assignment.delta[j] > 0.5 and members.size:
            rates[j] = cfg.B * np.log2(1.0 + gam[members, j].min())
    return rates


def score(cfg: SystemConfig, H, W: np.ndarray, assignment: AssignmentState) -> Metrics:
    """MEE, EE, throughput and power of a rounded assignment with precoder ``W``."""
    problems = assignment.structural_violations(cfg)
    if problems:
        raise ValueError("score needs a rounded, structurally valid assignment: " + "; ".join(problems))
    rates = group_min_rates(cfg, H, W, assignment)
    sizes = assignment.eta.sum(axis=0)
    power = consumed_power(cfg, W, rates)
    throughput = float(rates.sum())
    mee = float(np.sum(cfg.psi * sizes * rates) / power)
    return Metrics(
        mee=mee,
        ee=throughput / power,
        throughput=throughput,
        consumed_power=power,
        scheduled_users=int(round(assignment.eta.sum())),
        scheduled_groups=int(round(assignment.delta.sum())),
        min_rates=tuple(float(r) for r in rates),
    )


def qos_satisfied(cfg: SystemConfig, H, W: np.ndarray, assignment: AssignmentState,
                  tol: float = 1e-6) -> tuple[bool, list[tuple[int, int]]]:
    """Check ``log2(1 + SINR) >= eps_j`` for every scheduled member.

    Returns the verdict and the list of violating ``(user, group)`` pairs.
    """
    gam = sinr_matrix(H, W, cfg.sigma2)
    violators = []
    for i, j in zip(*np.nonzero(assignment.eta > 0.5)):
        if np.log2(1.0 + gam[i, j]) < cfg.eps[j] - tol:
            violators.append((int(i), int(j)))
    return not violators, violators
