"""Small dense conic solvers sized for desk-scale problems.

Three problem classes are covered:

* semidefinite programs with block-diagonal matrix variables, free scalar
  variables, and linear equality constraints (``sdp``),
* convex quadratic programs with linear inequality/equality constraints
  (``qp``),
* linear programs with vertex reporting and an exhaustive enumeration
  cross-check for low dimensions (``lp``).

Problems and solutions are immutable values; distinct solves may run in
parallel.
"""

from .sdp import (
    LinFunc,
    SdpOptions,
    SdpProblem,
    SdpSolution,
    SdpStatus,
    export_sdpa,
    read_sdpa,
    solve_sdp,
)
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .lp import (
    LpProblem,
    LpSolution,
    LpStatus,
    cross_check_vertex_optimum,
    enumerate_vertices,
    solve_lp,
)

__all__ = [
    "LinFunc",
    "SdpOptions",
    "SdpProblem",
    "SdpSolution",
    "SdpStatus",
    "export_sdpa",
    "read_sdpa",
    "solve_sdp",
    "QpProblem",
    "QpSolution",
    "QpStatus",
    "solve_qp",
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "cross_check_vertex_optimum",
    "enumerate_vertices",
    "solve_lp",
]
