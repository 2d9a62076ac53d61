"""Solver-level invariants checked on seeded random controls.

These complement :func:`ilb_evolve.chain.validate_chain`, which only looks at
the group structure.  Each check returns a :class:`CheckResult`.
"""

from __future__ import annotations

import numpy as np

from .chain import ChainReport, CheckResult
from .errors import UnsupportedOperation
from .solver import SolverConfig, evolve


def _tolerance(chain, exact, loose):
    return exact if chain.exact else loose


def _controls(chain, count, seed, mass):
    rng = np.random.default_rng(seed)
    return [chain.sample_control(rng, int(rng.integers(1, 5)), mass) for _ in range(count)]


def check_start(chain, reports):
    dev = max(float(chain.norm(r.level, r.trajectory.start - chain.identity(r.level))) for r in reports)
    return CheckResult("starts_at_identity", dev, 0.0, dev == 0.0)


def check_contraction(reports, slack=0.05):
    worst = 0.0
    for r in reports:
        if r.bounds is None:
            continue
        for ratios, mass in zip(r.ratios, r.masses):
            if ratios:
                worst = max(worst, max(ratios) - r.bounds.L * mass)
    return CheckResult(
        "contraction_certificate", max(worst, 0.0), slack, worst <= slack,
        {"max_ratio": max(r.max_ratio for r in reports)},
    )


def check_glued_residual(chain, reports):
    worst = max(r.glued_residual for r in reports)
    thr = _tolerance(chain, 1e-9, 1e-6)
    return CheckResult("glued_residual", worst, thr, worst <= thr)


def check_subdivision(chain, control, config, level=1):
    a = evolve(chain, level, control, config)
    b = evolve(chain, level, control, config.replace(force_N=2 * a.N))
    # the 2N grid contains every sample of the N grid
    t = a.trajectory.times
    dev = float(np.max(chain.norm(level, a.trajectory(t) - b.trajectory(t))))
    thr = _tolerance(chain, 1e-8, 1e-6)
    return CheckResult("subdivision_invariance", dev, thr, dev <= thr, {"N": a.N})


def check_inverse(chain, control, config, level=1):
    fwd = evolve(chain, level, control, config).endpoint
    bwd = evolve(chain, level, control.time_reverse_negate(), config).endpoint
    e = chain.identity(level)
    dev = float(chain.norm(level, chain.product(level, level, bwd, fwd) - e))
    thr = _tolerance(chain, 1e-8, 1e-6)
    return CheckResult("inverse_identity", dev, thr, dev <= thr)


def check_oracle(chain, reports, controls):
    from .oracle import step_product_endpoint

    try:
        devs = [
            float(chain.norm(1, r.endpoint - step_product_endpoint(chain, c).endpoint))
            for r, c in zip(reports, controls)
        ]
    except UnsupportedOperation:
        return None
    dev = max(devs)
    return CheckResult("step_product_oracle", dev, 1e-9, dev <= 1e-9)


def solver_checks(chain, config=None, count=3, seed=0, mass=1.0):
    """Run the solver invariant suite on ``count`` seeded controls at level 1."""
    cfg = config or SolverConfig()
    controls = _controls(chain, count, seed, mass)
    reports = [evolve(chain, 1, c, cfg) for c in controls]
    checks = [
        check_start(chain, reports),
        check_contraction(reports),
        check_glued_residual(chain, reports),
        check_subdivision(chain, controls[0], cfg),
        check_inverse(chain, controls[0], cfg),
    ]
    oracle = check_oracle(chain, reports, controls)
    if oracle is not None:
        checks.append(oracle)
    return ChainReport(chain.name, checks)
