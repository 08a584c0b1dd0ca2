"""Joint user grouping, scheduling and precoding for multigroup multicast.

Three design criteria are supported: multicast energy efficiency (``MEE``),
energy efficiency (``EE``) and the number of admitted users (``SUM``).  Each
is solved by a convex-concave procedure over penalized relaxations of the
binary grouping/scheduling variables; every convex subproblem is lowered to a
linear / second-order / exponential cone program.
"""

from .ccp import CcpConfig, SolveReport, make_fip, round_and_certify, run, solve_instance
from .conic import ConeProgram, ConicSolution, ProgramBuilder
from .system import (
    AssignmentState,
    ChannelSet,
    ConfigError,
    DCFunctionSpec,
    Metrics,
    SystemConfig,
    consumed_power,
    dbw_to_watts,
    generate_channels,
    qos_satisfied,
    score,
    sinr,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentState",
    "CcpConfig",
    "ChannelSet",
    "ConeProgram",
    "ConfigError",
    "ConicSolution",
    "DCFunctionSpec",
    "Metrics",
    "ProgramBuilder",
    "SolveReport",
    "SystemConfig",
    "consumed_power",
    "dbw_to_watts",
    "generate_channels",
    "make_fip",
    "qos_satisfied",
    "round_and_certify",
    "run",
    "score",
    "sinr",
    "solve_instance",
]
