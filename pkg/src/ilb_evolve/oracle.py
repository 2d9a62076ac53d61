"""Reference computations for cross-checking the solver.

Nothing here touches the solver, the chain products or the instances'
exponentials: matrices are rebuilt from raw coordinates, rotations use the
Rodrigues formula, general matrices a Taylor series with scaling and
squaring, and the diffeomorphism flow integrates each grid point on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ContractError, UnsupportedOperation

METHODS = ("step_product", "dense_rk4", "pointwise_flow", "logistic")


@dataclass
class OracleResult:
    """Reference endpoint, optional sampled trajectory, and an error estimate."""

    endpoint: np.ndarray
    method: str
    error: float = 0.0
    times: np.ndarray | None = None
    trajectory: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown oracle method {self.method!r}")


# -- exponentials --------------------------------------------------------------


def _skew(w):
    w1, w2, w3 = (float(c) for c in w)
    return np.array([[0.0, -w3, w2], [w3, 0.0, -w1], [-w2, w1, 0.0]])


def rodrigues(w):
    """Rotation ``exp(hat(w))`` by the Rodrigues formula."""
    theta = math.sqrt(float(np.dot(w, w)))
    k = _skew(w)
    if theta < 1e-4:
        # series for sin(x)/x and (1 - cos x)/x^2
        a = 1 - theta**2 / 6 + theta**4 / 120
        b = 0.5 - theta**2 / 24 + theta**4 / 720
    else:
        a = math.sin(theta) / theta
        b = (1 - math.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def taylor_expm(a, terms=24):
    """Matrix exponential by Taylor series after scaling to norm below 1/2."""
    a = np.asarray(a, dtype=float)
    nrm = np.abs(a).sum(axis=1).max() if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(nrm / 0.5)))) if nrm > 0.5 else 0
    b = a / 2.0**squarings
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms + 1):
        term = term @ b / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def _kind(chain):
    name = chain.name
    if name.startswith("abelian"):
        return "abelian"
    if name == "so3":
        return "so3"
    if name.startswith("gl:"):
        return "gl"
    if name.startswith("diffint"):
        return "diffint"
    return name.partition(":")[0]


def _as_matrix(chain, v):
    kind = _kind(chain)
    if kind == "so3":
        return _skew(v)
    d = chain.d
    return np.asarray(v, dtype=float).reshape(d, d)


def group_exp(chain, v):
    """Oracle exponential of one algebra vector, returned in point coordinates."""
    kind = _kind(chain)
    v = np.asarray(v, dtype=float)
    if kind == "abelian":
        return v.copy()
    if kind == "so3":
        return rodrigues(v).reshape(-1)
    if kind == "gl":
        return taylor_expm(_as_matrix(chain, v)).reshape(-1)
    raise UnsupportedOperation(f"no oracle exponential for {chain.name}")


# -- step products -------------------------------------------------------------


def step_product_endpoint(chain, control):
    """``exp(d_{K-1} v_{K-1}) ... exp(d_0 v_0)`` for a piecewise-constant control.

    Later steps multiply on the left.
    """
    kind = _kind(chain)
    if kind not in ("abelian", "so3", "gl"):
        raise UnsupportedOperation(f"step products need an abelian or matrix chain, not {chain.name}")
    if control.kind != "step":
        raise ContractError("step_product_endpoint needs a piecewise-constant control")
    widths = np.diff(control.breakpoints)
    if kind == "abelian":
        end = (widths[:, None] * control.values).sum(axis=0)
        return OracleResult(end, "step_product")
    d = 3 if kind == "so3" else chain.d
    y = np.eye(d)
    for w, v in zip(widths, control.values):
        y = group_exp(chain, w * v).reshape(d, d) @ y
    return OracleResult(y.reshape(-1), "step_product")


# -- fixed-step Runge-Kutta ------------------------------------------------------


def matrix_field(chain):
    """``(y, v) -> v.y`` in point coordinates, built from raw matrices."""
    kind = _kind(chain)
    if kind == "abelian":
        return lambda y, v: np.asarray(v, dtype=float)
    if kind in ("so3", "gl"):
        d = 3 if kind == "so3" else chain.d

        def f(y, v):
            return (_as_matrix(chain, v) @ np.reshape(y, (d, d))).reshape(-1)

        return f
    raise UnsupportedOperation(f"no oracle field for {chain.name}")


def _rk4(f, control, y0, steps, t1):
    h = t1 / steps
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for i in range(steps):
        t = i * h
        k1 = f(y, control(t))
        k2 = f(y + 0.5 * h * k1, control(t + 0.5 * h))
        k3 = f(y + 0.5 * h * k2, control(t + 0.5 * h))
        k4 = f(y + h * k3, control(t + h))
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y.copy())
    return np.array(out)


def dense_rk4(field_fn, control, y0, steps=1000, t1=1.0):
    """Classical RK4 at a fixed step for ``y' = f(y, gamma(t))``.

    Parameters
    ----------
    field_fn : callable or chain
        ``f(y, v)``; a chain instance is turned into one by
        :func:`matrix_field`.
    control : callable
        ``t -> gamma(t)``; should be continuous on ``[0, t1]``.
    y0 : array_like
        Initial state.
    steps : int
        Number of RK4 steps; the run is repeated at ``2 * steps`` and the
        Richardson difference ``|y_h - y_{h/2}| / 15`` is reported as the
        error of the finer solution, which is the one returned.
    """
    if not callable(field_fn) or hasattr(field_fn, "algebra_dim"):
        field_fn = matrix_field(field_fn)
    coarse = _rk4(field_fn, control, y0, steps, t1)
    fine = _rk4(field_fn, control, y0, 2 * steps, t1)
    err = float(np.max(np.abs(fine[::2] - coarse))) / 15.0
    times = np.linspace(0.0, t1, 2 * steps + 1)
    return OracleResult(fine[-1], "dense_rk4", err, times, fine)


# -- diffeomorphism flow -------------------------------------------------------


def logistic_flow(x0, t, rate=1.0):
    """Closed-form flow of ``x' = rate * x (1 - x)``."""
    x0 = np.asarray(x0, dtype=float)
    e = np.exp(rate * t)
    return x0 * e / (1 - x0 + x0 * e)


def pointwise_flow(chain, control, resolution=400, field_fn=None):
    """Flow every grid point of a diffeomorphism chain through the control.

    Each point solves ``x' = v_t(x)`` with RK4, restarting at every control
    breakpoint so steps never straddle a jump.  The spatial field is either
    ``field_fn(t, x)`` or a not-a-knot cubic spline of the control's grid
    samples.

    Parameters
    ----------
    resolution : int
        RK4 steps per unit time (at least one per control segment).
    """
    if _kind(chain) != "diffint":
        raise UnsupportedOperation("pointwise_flow needs a diffeomorphism chain")
    x = chain.x
    if field_fn is None:
        if control.kind != "step":
            raise ContractError("grid-sampled flows need a step control")
        splines = [CubicSpline(x, v) for v in control.values]

        def field_fn(t, p):
            k = min(np.searchsorted(control.breakpoints, t, side="right") - 1, len(splines) - 1)
            return splines[k](p)

    bps = control.breakpoints if control.kind == "step" else np.array([0.0, 1.0])

    def run(res):
        p = x.copy()
        times, traj = [0.0], [p.copy()]
        for a, b in zip(bps[:-1], bps[1:]):
            steps = max(1, int(math.ceil((b - a) * res)))
            h = (b - a) / steps
            for i in range(steps):
                # evaluate the segment's field just inside the segment
                t = a + i * h
                tm = min(t + 0.5 * h, b - 1e-15)
                te = min(t + h, b - 1e-15)
                k1 = field_fn(t, p)
                k2 = field_fn(tm, p + 0.5 * h * k1)
                k3 = field_fn(tm, p + 0.5 * h * k2)
                k4 = field_fn(te, p + h * k3)
                p = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                times.append(t + h)
                traj.append(p.copy())
        return np.array(times), np.array(traj)

    _, coarse = run(resolution)
    times, fine = run(2 * resolution)
    err = float(np.max(np.abs(fine[-1] - coarse[-1]))) / 15.0
    return OracleResult(fine[-1].copy(), "pointwise_flow", err, times, fine)


__all__ = [
    "OracleResult",
    "METHODS",
    "rodrigues",
    "taylor_expm",
    "group_exp",
    "step_product_endpoint",
    "matrix_field",
    "dense_rk4",
    "logistic_flow",
    "pointwise_flow",
]
