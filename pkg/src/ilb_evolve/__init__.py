"""Evolution maps on chains of Lie groups with loss of derivatives.

Solve ``y' = gamma(t).y, y(0) = e`` for merely integrable controls ``gamma``
by Picard contraction on short pieces glued together by right translation.

Typical use::

    from ilb_evolve import make_instance, ControlSignal, evolve

    chain = make_instance("so3")
    gamma = ControlSignal.step([0, 0.5, 1], [[0, 0, 1], [1, 0, 0]])
    report = evolve(chain, 1, gamma)
    report.endpoint
"""

from .chain import Chain, ChainReport, CheckResult, RightInvariantField, validate_chain
from .controls import (
    ControlSignal,
    choose_subdivision_count,
    l1_norm,
    load_control,
    save_control,
    scale,
    subdivide,
    time_reverse_negate,
)
from .errors import (
    ContractError,
    NoConvergence,
    NonContraction,
    SolverError,
    TrustBallExit,
    UnsupportedOperation,
)
from .instances import (
    AbelianChain,
    DiffIntervalChain,
    LoopChain,
    MatrixChain,
    exp_point,
    invert,
    make_instance,
)
from .solver import (
    EvolutionReport,
    LocalBounds,
    SolverConfig,
    Trajectory,
    compute_bounds,
    continuity_probe,
    evol_full,
    evolve,
    picard_solve,
    right_log_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "ChainReport",
    "CheckResult",
    "RightInvariantField",
    "validate_chain",
    "ControlSignal",
    "choose_subdivision_count",
    "l1_norm",
    "load_control",
    "save_control",
    "scale",
    "subdivide",
    "time_reverse_negate",
    "ContractError",
    "NoConvergence",
    "NonContraction",
    "SolverError",
    "TrustBallExit",
    "UnsupportedOperation",
    "AbelianChain",
    "DiffIntervalChain",
    "LoopChain",
    "MatrixChain",
    "exp_point",
    "invert",
    "make_instance",
    "EvolutionReport",
    "LocalBounds",
    "SolverConfig",
    "Trajectory",
    "compute_bounds",
    "continuity_probe",
    "evol_full",
    "evolve",
    "picard_solve",
    "right_log_derivative",
]
