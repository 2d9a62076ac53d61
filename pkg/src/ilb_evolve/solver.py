"""Carathéodory evolution on a chain: Picard contraction, subdivision, gluing.

The pipeline for ``evolve(chain, n, control)``:

1. certify local constants ``L`` (Lipschitz in the state) and ``S`` (operator
   bound) on a trust ball of radius ``R`` around the identity and derive the
   admissible per-piece mass ``eps = safety * min(1/L, R/S)``;
2. split the control into ``N`` rescaled pieces of mass at most ``eps``;
3. solve every piece from the identity by Picard iteration;
4. glue the rescaled pieces by right translation, multiplying the earlier
   endpoints from right to left.

Time discretization: each piece is covered by a grid containing every
control breakpoint (plus geometric grading at singular endpoints).  Inside a
cell the iterate is represented by its values on Gauss-Lobatto nodes and the
integral ``int f(eta(s), gamma(s)) ds`` is taken against exact moments of the
control, so step controls incur no quadrature error beyond the collocation
order.
"""

from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain import RightInvariantField
from .controls import ControlSignal, _lagrange_basis, choose_subdivision_count
from .errors import (
    ContractError,
    NoConvergence,
    NonContraction,
    SolverError,
    TrustBallExit,
)

# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.  ``None`` entries take the chain's defaults."""

    tol: float | None = None
    cells: int = 256
    nodes: int = 3
    trust_radius: float | None = None
    safety: float = 0.5
    lipschitz_safety: float = 2.0
    lipschitz_samples: int = 256
    analytic_bounds: bool = True
    force_N: int | None = None
    seed: int = 0
    max_iter: int = 200
    field_offset: int | None = None
    collapse_offsets: bool | None = None
    grading_cells: int = 64
    grading_ratio: float = 0.5
    max_retries: int = 3
    threads: int | None = None

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in data.items():
            key = key.strip().replace("-", "_")
            if key == "force_n":
                key = "force_N"
            if key not in fields:
                raise ContractError(f"unknown config key {key!r}")
            kw[key] = _coerce(raw)
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        """Read a flat ``key = value`` file (``#`` starts a comment)."""
        data = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                sep = "=" if "=" in line else ":"
                key, found, value = line.partition(sep)
                if not found:
                    raise ContractError(f"{path}:{lineno}: expected key = value")
                data[key.strip()] = value.strip()
        return cls.from_mapping(data)


def _coerce(raw):
    if not isinstance(raw, str):
        return raw
    low = raw.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError as exc:
        raise ContractError(f"cannot parse config value {raw!r}") from exc


@dataclass(frozen=True)
class _Resolved:
    tol: float
    radius: float
    offset: int
    collapse: bool
    threads: int


def _resolve(chain, cfg):
    threads = cfg.threads
    if threads is None:
        threads = int(os.environ.get("ILB_EVOLVE_THREADS", "1") or 1)
    return _Resolved(
        tol=chain.default_tol if cfg.tol is None else float(cfg.tol),
        radius=chain.default_trust_radius if cfg.trust_radius is None else float(cfg.trust_radius),
        offset=chain.field_offset if cfg.field_offset is None else int(cfg.field_offset),
        collapse=(chain.loss == 0) if cfg.collapse_offsets is None else bool(cfg.collapse_offsets),
        threads=max(1, threads),
    )


# -- local bounds ------------------------------------------------------------------


@dataclass(frozen=True)
class LocalBounds:
    L: float
    S: float
    R: float
    eps: float
    analytic: bool = False

    def to_dict(self):
        return {
            "L": self.L,
            "S": self.S,
            "R": self.R,
            "eps": self.eps if math.isfinite(self.eps) else "inf",
            "analytic": self.analytic,
        }


def _ball_pairs(fld, center, radius, samples, rng):
    chain = fld.chain
    y1 = chain.sample_points(fld.level, rng, samples, radius, center)
    y2 = chain.sample_points(fld.level, rng, samples, radius, center)
    # half the pairs are close, probing the local derivative
    half = samples // 2
    step = chain.sample_tangent(fld.level, rng, half) * (1e-3 * radius)
    y2[:half] = y1[:half] + step
    return y1, y2


def estimate_lipschitz(fld, center, radius, samples=256, seed=0, safety=2.0):
    """Sampled Lipschitz constant of ``y -> f(y, .)`` on the ball, times ``safety``.

    Estimates ``sup ||f(y2, z) - f(y1, z)|| / (||y2 - y1|| ||z||)`` over random
    pairs in the closed ball and random controls ``z``.
    """
    if samples < 1:
        raise ContractError("sampling budget must be positive")
    if not radius > 0:
        raise ContractError("radius must be positive")
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    y1, y2 = _ball_pairs(fld, center, radius, samples, rng)
    z = fld.chain.sample_algebra(fld.control_level, rng, samples)
    num = fld.state_norm(fld.apply(y2, z) - fld.apply(y1, z))
    den = fld.state_norm(y2 - y1) * fld.control_norm(z)
    ok = den > 0
    raw = float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
    return safety * raw


def estimate_operator_bound(fld, center, radius, samples=256, seed=0, safety=2.0):
    """Sampled ``sup_y ||f(y, .)||_op`` over the closed ball, times ``safety``."""
    if samples < 1:
        raise ContractError("sampling budget must be positive")
    rng = np.random.default_rng(seed + 7919)
    y = fld.chain.sample_points(fld.level, rng, samples, radius, np.asarray(center, dtype=float))
    z = fld.chain.sample_algebra(fld.control_level, rng, samples)
    raw = float(np.max(fld.state_norm(fld.apply(y, z)) / fld.control_norm(z)))
    return safety * raw


def compute_bounds(fld, start, config=None, radius=None):
    """Trust-ball constants ``L, S, R`` and admissible piece mass ``eps``."""
    cfg = config or SolverConfig()
    chain = fld.chain
    if radius is None:
        radius = chain.default_trust_radius if cfg.trust_radius is None else cfg.trust_radius
    radius = float(radius)
    if not radius > 0:
        raise ContractError("trust radius must be positive")
    exact = chain.analytic_bounds(fld.level, fld.offset, start, radius) if cfg.analytic_bounds else None
    if exact is not None:
        L, S = map(float, exact)
    else:
        kw = dict(samples=cfg.lipschitz_samples, seed=cfg.seed, safety=cfg.lipschitz_safety)
        L = estimate_lipschitz(fld, start, radius, **kw)
        S = estimate_operator_bound(fld, start, radius, **kw)
    if not (math.isfinite(L) and math.isfinite(S)) or L < 0 or S < 0:
        raise ContractError(f"nonfinite local bounds: L={L}, S={S}")
    if S == 0:
        eps = math.inf
    elif L == 0:
        eps = cfg.safety * radius / S
    else:
        eps = cfg.safety * min(1.0 / L, radius / S)
    return LocalBounds(L, S, radius, eps, analytic=exact is not None)


# -- time grids and trajectories -------------------------------------------------


def lobatto_nodes(count):
    """Gauss-Lobatto nodes on [0, 1]."""
    if count < 2:
        raise ContractError("need at least two nodes per cell")
    inner = np.polynomial.legendre.Legendre.basis(count - 1).deriv().roots()
    x = np.concatenate([[-1.0], np.sort(inner.real), [1.0]])
    return 0.5 * (x + 1.0)


def integration_matrix(nodes):
    """``Q[i, j] = int_0^{nodes[i]} l_j(x) dx`` for the Lagrange basis on ``nodes``."""
    gx, gw = np.polynomial.legendre.leggauss(len(nodes) + 2)
    q = np.zeros((len(nodes), len(nodes)))
    for i, xi in enumerate(nodes):
        pts = 0.5 * xi * (gx + 1.0)
        q[i] = 0.5 * xi * gw @ _lagrange_basis(nodes, pts)
    return q


def build_grid(control, interval=(0.0, 1.0), cells=256, grading_cells=64, grading_ratio=0.5):
    """Cell boundaries covering ``interval``: uniform cells plus breakpoints.

    Singular endpoints receive ``grading_cells`` extra boundaries that
    shrink geometrically toward the singularity.
    """
    a, b = map(float, interval)
    if not b > a:
        raise ContractError("empty interval")
    span = b - a
    uniform = a + span * np.arange(cells + 1) / cells
    uniform[-1] = b
    bp = control.breakpoints
    bp = bp[(bp > a) & (bp < b)]
    if bp.size:
        gap = np.min(np.abs(uniform[:, None] - bp[None, :]), axis=1)
        uniform = uniform[(gap > 1e-12 * span) | (uniform == a) | (uniform == b)]
    parts = [uniform, bp]
    h0 = span / cells
    for s in control.singular_points():
        if a <= s <= b:
            offs = h0 * grading_ratio ** np.arange(1, grading_cells + 1)
            # near s != 0 the floats run out long before the grading does
            offs = offs[offs > 64 * np.spacing(abs(s))]
            graded = s + offs if s == a else s - offs
            parts.append(graded[(graded > a) & (graded < b)])
    grid = np.unique(np.concatenate(parts))
    return grid


@dataclass
class PicardStats:
    iterations: int
    ratios: list
    residual: float
    mass: float
    contraction_bound: float

    @property
    def max_ratio(self):
        return max(self.ratios) if self.ratios else 0.0


@dataclass
class Trajectory:
    """Samples of a curve on Gauss-Lobatto nodes of each grid cell.

    ``points[c * s + j]`` is the value at node ``j`` of cell ``c`` where
    ``s = len(nodes) - 1``; consecutive cells share their boundary sample.
    """

    cells: np.ndarray
    nodes: np.ndarray
    points: np.ndarray
    level: int
    breakpoints: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    stats: PicardStats | None = None

    @property
    def s(self):
        return len(self.nodes) - 1

    @property
    def times(self):
        h = np.diff(self.cells)
        inner = self.cells[:-1, None] + h[:, None] * self.nodes[None, :-1]
        return np.concatenate([inner.reshape(-1), self.cells[-1:]])

    @property
    def start(self):
        return self.points[0]

    @property
    def endpoint(self):
        return self.points[-1]

    def __call__(self, t):
        """Dense evaluation by the per-cell interpolating polynomial."""
        t = np.asarray(t, dtype=float)
        c = np.clip(np.searchsorted(self.cells, t, side="right") - 1, 0, len(self.cells) - 2)
        h = self.cells[c + 1] - self.cells[c]
        xi = (t - self.cells[c]) / h
        basis = _lagrange_basis(self.nodes, xi)
        idx = c[..., None] * self.s + np.arange(self.s + 1)
        return np.einsum("...j,...jd->...d", basis, self.points[idx])

    def to_csv(self, path, precision=17):
        t = self.times
        header = "t," + ",".join(f"x{i}" for i in range(self.points.shape[1]))
        data = np.column_stack([t, self.points])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=f"%.{precision}g")


class _PicardMap:
    """The integral operator ``eta -> y0 + int_a^t f(eta, gamma)`` on a fixed grid."""

    def __init__(self, fld, control, cells, nodes):
        self.fld = fld
        self.cells = np.asarray(cells, dtype=float)
        self.nodes = nodes
        self.s = len(nodes) - 1
        q = integration_matrix(nodes)
        self.values = control.cell_values(self.cells)
        self.weights = control.cell_weights(self.cells, nodes, q)
        ncell = len(self.cells) - 1
        self.idx = (np.arange(ncell)[:, None] * self.s + np.arange(self.s + 1)).reshape(-1)
        self.vrep = np.repeat(self.values, self.s + 1, axis=0)
        self.size = ncell * self.s + 1

    def __call__(self, eta, y0):
        ncell = len(self.cells) - 1
        f = self.fld.apply(eta[self.idx], self.vrep).reshape(ncell, self.s + 1, -1)
        partial = self.weights @ f
        starts = np.empty((ncell, eta.shape[1]))
        starts[0] = y0
        np.cumsum(partial[:-1, -1], axis=0, out=starts[1:])
        starts[1:] += y0
        new = np.empty_like(eta)
        new[:-1] = (starts[:, None, :] + partial[:, :-1]).reshape(-1, eta.shape[1])
        new[0] = y0
        new[-1] = starts[-1] + partial[-1, -1]
        return new


def picard_solve(fld, control, y0, interval=(0.0, 1.0), bounds=None, config=None, tol=None):
    """Fixed point of the Picard map started from the constant curve ``y0``.

    Raises :class:`NonContraction` when the control mass breaks the bounds,
    :class:`TrustBallExit` when an iterate leaves the trust ball and
    :class:`NoConvergence` after ``config.max_iter`` iterations.
    """
    cfg = config or SolverConfig()
    chain = fld.chain
    tol = (chain.default_tol if cfg.tol is None else cfg.tol) if tol is None else tol
    y0 = np.asarray(y0, dtype=float)
    a, b = interval
    mass = float(control.mass_between(a, b, fld.control_norm))
    contraction = 0.0
    if bounds is not None:
        contraction = bounds.L * mass
        if mass > bounds.eps * (1 + 1e-12) or contraction >= 1.0:
            raise NonContraction(
                f"piece mass {mass:.6g} exceeds admissible {bounds.eps:.6g} (L*mass={contraction:.3g})"
            )
    nodes = lobatto_nodes(cfg.nodes)
    grid = build_grid(control, interval, cfg.cells, cfg.grading_cells, cfg.grading_ratio)
    phi = _PicardMap(fld, control, grid, nodes)
    eta = np.broadcast_to(y0, (phi.size, y0.shape[0])).copy()
    ratios = []
    prev = None
    noise = 256 * np.finfo(float).eps * chain.rounding_scale(fld.level)
    for it in range(1, cfg.max_iter + 1):
        new = phi(eta, y0)
        change = fld.max_state_norm(new - eta)
        if bounds is not None:
            # the exact distance is only needed when the cheap bound is outside
            reach = fld.state_norm_bound(new - y0)
            if reach > bounds.R:
                reach = fld.max_state_norm(new - y0)
            if reach > bounds.R * (1 + 1e-9):
                raise TrustBallExit(
                    f"iterate {it} reached distance {reach:.6g} > R={bounds.R:.6g}"
                )
        # below the rounding floor of the level norm a ratio measures noise
        if prev is not None and it >= 3 and min(prev, change) > noise:
            ratios.append(change / prev)
        prev = change
        eta = new
        if change <= tol:
            break
    else:
        raise NoConvergence(f"no convergence after {cfg.max_iter} iterations (change {change:.3e})")
    residual = fld.max_state_norm(phi(eta, y0) - eta)
    bp = control.breakpoints
    stats = PicardStats(it, ratios, residual, mass, contraction)
    return Trajectory(grid, nodes, eta, fld.level, bp[(bp >= a) & (bp <= b)], stats)


def integral_residual(fld, control, trajectory, y0=None):
    """``max_t ||Phi(eta)(t) - eta(t)||`` on the trajectory's own grid."""
    y0 = trajectory.start if y0 is None else np.asarray(y0, dtype=float)
    phi = _PicardMap(fld, control, trajectory.cells, trajectory.nodes)
    return fld.max_state_norm(phi(trajectory.points, y0) - trajectory.points)


# -- evolution -------------------------------------------------------------------


@dataclass
class EvolutionReport:
    trajectory: Trajectory
    N: int
    iterations: list
    ratios: list
    residuals: list
    masses: list
    bounds: LocalBounds | None
    level: int
    solve_level: int
    field_offset: int
    instance: dict
    config: dict
    retries: int = 0
    glued_residual: float = 0.0
    wall_time: float = 0.0

    @property
    def endpoint(self):
        return self.trajectory.endpoint

    @property
    def max_ratio(self):
        return max((max(r) for r in self.ratios if r), default=0.0)

    def to_dict(self):
        return {
            "instance": self.instance,
            "level": self.level,
            "solve_level": self.solve_level,
            "field_offset": self.field_offset,
            "N": self.N,
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "picard_iterations": self.iterations,
            "total_iterations": int(sum(self.iterations)),
            "max_contraction_ratio": self.max_ratio,
            "contraction_ratios": [[float(x) for x in r] for r in self.ratios],
            "piece_masses": self.masses,
            "piece_residuals": self.residuals,
            "glued_residual": self.glued_residual,
            "retries": self.retries,
            "grid_points": int(self.trajectory.points.shape[0]),
            "endpoint": self.endpoint.tolist(),
            "config": self.config,
            "wall_time": self.wall_time,
        }


def _constant_trajectory(point, level, cfg, control):
    nodes = lobatto_nodes(cfg.nodes)
    grid = build_grid(control, (0.0, 1.0), cfg.cells, 0, cfg.grading_ratio)
    pts = np.broadcast_to(point, ((len(grid) - 1) * (len(nodes) - 1) + 1, len(point))).copy()
    return Trajectory(grid, nodes, pts, level, control.breakpoints.copy())


def _solve_pieces(fld, pieces, start, bounds, cfg, threads):
    def run(k):
        try:
            return picard_solve(fld, pieces[k], start, (0.0, 1.0), bounds, cfg)
        except SolverError as err:
            err.piece = k
            raise

    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(pieces))) as pool:
            return list(pool.map(run, range(len(pieces))))
    return [run(k) for k in range(len(pieces))]


def glue(chain, solve_level, n, thetas):
    """Rescale piece solutions to ``[k/N, (k+1)/N]`` and glue by right translation.

    On piece ``k`` the glued curve is ``theta_k(Nt - k) g_k`` with
    ``g_k = theta_{k-1}(1) (theta_{k-2}(1) ( ... theta_0(1)))``.
    """
    N = len(thetas)
    cells, points = [], []
    g = None
    for k, th in enumerate(thetas):
        if k == 0:
            pts = chain.include(solve_level, n, th.points)
        else:
            pts = chain.product(solve_level, n, th.points, g)
        g = pts[-1]
        c = (k + th.cells) / N
        if k:
            c, pts = c[1:], pts[1:]
        cells.append(c)
        points.append(pts)
    cells = np.concatenate(cells)
    cells[-1] = 1.0
    bps = np.unique(np.concatenate([(k + th.breakpoints) / N for k, th in enumerate(thetas)]))
    return Trajectory(cells, thetas[0].nodes, np.concatenate(points), n, bps)


def evolve(chain, n, control, config=None):
    """Solve ``y' = gamma(t).y, y(0) = e`` at level ``n`` by subdivide-and-glue."""
    cfg = config or SolverConfig()
    res = _resolve(chain, cfg)
    if n < 1:
        raise ContractError("levels start at 1")
    if control.algebra_dim != chain.algebra_dim:
        raise ContractError(
            f"control dimension {control.algebra_dim} does not match {chain.name} ({chain.algebra_dim})"
        )
    t0 = time.perf_counter()
    solve_level = n if res.collapse else n + 1
    fld = RightInvariantField(chain, solve_level, res.offset)
    start = chain.identity(solve_level)
    cfg_tol = cfg.replace(tol=res.tol)
    common = dict(
        level=n,
        solve_level=solve_level,
        field_offset=res.offset,
        instance=chain.params,
        config=cfg.to_dict(),
    )
    if control.is_zero():
        traj = _constant_trajectory(chain.identity(n), n, cfg, control)
        return EvolutionReport(
            traj, 1, [0], [[]], [0.0], [0.0], None, wall_time=time.perf_counter() - t0, **common
        )
    radius = res.radius
    last_err = None
    for attempt in range(cfg.max_retries + 1):
        bounds = compute_bounds(fld, start, cfg, radius)
        N = cfg.force_N or choose_subdivision_count(control, bounds.eps, fld.control_norm)
        pieces = control.subdivide(N)
        try:
            thetas = _solve_pieces(fld, pieces, start, bounds, cfg_tol, res.threads)
            break
        except TrustBallExit as err:
            last_err = err
            radius *= 0.5
    else:
        raise last_err
    traj = glue(chain, solve_level, n, thetas)
    glued = integral_residual(
        RightInvariantField(chain, n, res.offset), control, traj, chain.identity(n)
    )
    return EvolutionReport(
        traj,
        N,
        [th.stats.iterations for th in thetas],
        [th.stats.ratios for th in thetas],
        [th.stats.residual for th in thetas],
        [th.stats.mass for th in thetas],
        bounds,
        retries=attempt,
        glued_residual=glued,
        wall_time=time.perf_counter() - t0,
        **common,
    )


@dataclass
class FullReport:
    reports: dict
    deviations: dict

    def to_dict(self):
        return {
            "levels": {str(k): r.to_dict() for k, r in self.reports.items()},
            "deviations": {f"{m}->{n}": v for (m, n), v in self.deviations.items()},
        }


def level_deviation(chain, m, n, traj_m, traj_n):
    """``max_t ||include(eta_m(t)) - eta_n(t)||_n`` over the union of both grids."""
    t = np.union1d(traj_m.times, traj_n.times)
    diff = chain.include(m, n, traj_m(t)) - traj_n(t)
    return float(np.max(chain.norm(n, diff)))


def evol_full(chain, control, config=None, levels=None):
    """Evolve at every requested level and compare the levels after inclusion."""
    levels = sorted(levels or range(1, chain.n_max + 1))
    reports = {n: evolve(chain, n, control, config) for n in levels}
    deviations = {}
    for i, n in enumerate(levels):
        for m in levels[i + 1 :]:
            deviations[(m, n)] = level_deviation(
                chain, m, n, reports[m].trajectory, reports[n].trajectory
            )
    return FullReport(reports, deviations)


def right_log_derivative(trajectory, chain, n, h=1e-5, breakpoints=None):
    """Sampled ``t -> eta'(t) eta(t)^{-1}`` in algebra coordinates.

    Central differences of the dense trajectory, taken at grid samples more
    than ``2h`` away from control breakpoints and from the interval ends.
    Returns ``(times, values)``.
    """
    chain.invert(n, chain.identity(n))  # raises UnsupportedOperation early
    t = trajectory.times
    spacing = float(np.min(np.diff(t)))
    if not 0 < h < 10 * spacing:
        raise ContractError(f"step {h} must lie below 10x the grid spacing {spacing:.3g}")
    bps = trajectory.breakpoints if breakpoints is None else np.asarray(breakpoints)
    bps = np.union1d(bps, [0.0, 1.0])
    keep = np.min(np.abs(t[:, None] - bps[None, :]), axis=1) > 2 * h
    t = t[keep]
    deriv = (trajectory(t + h) - trajectory(t - h)) / (2 * h)
    inv = chain.invert(n, trajectory(t))
    return t, chain.to_algebra(chain.translate_tangent(n, inv, deriv))


def continuity_probe(chain, n, control, scales, config=None):
    """Rows ``(s, sup_t ||eta_s(t) - e||_n)`` for the scaled controls ``s * gamma``."""
    scales = [float(s) for s in scales]
    if not scales or any(s <= 0 for s in scales) or any(
        b >= a for a, b in zip(scales, scales[1:])
    ):
        raise ContractError("scales must be positive and strictly decreasing")
    e = chain.identity(n)
    rows = []
    for s in scales:
        rep = evolve(chain, n, control.scale(s), config)
        dist = float(np.max(chain.norm(n, rep.trajectory.points - e)))
        rows.append((s, dist))
    return rows
