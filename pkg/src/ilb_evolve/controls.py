"""Integrable control signals on [0, 1] with values in a Lie algebra.

Two families are supported:

* ``step`` -- right-continuous piecewise-constant signals, the workhorse for
  every exact oracle;
* ``singular`` -- ``t -> scale * (offset + rate*t)**(-1/2) * direction``,
  an unbounded but integrable signal.  The three-parameter form is closed
  under subdivision, rescaling and time reversal, so all the calculus below
  stays exact.

Values are stored in the fixed algebra coordinates chosen by the chain
instance.  Algebra norms are passed in as callables acting on the last axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

__all__ = [
    "ControlSignal",
    "GENERATORS",
    "l1_norm",
    "subdivide",
    "choose_subdivision_count",
    "scale",
    "time_reverse_negate",
    "load_control",
    "save_control",
]

GENERATORS = ("inverse_sqrt",)

# Breakpoints closer than this (in piece-local time) to a piece edge are dropped
# when subdividing; the discarded sliver carries negligible mass.
_SLIVER = 1e-12
_GAUSS_POINTS = 8


def euclidean(v):
    return np.linalg.norm(np.asarray(v, dtype=float), axis=-1)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """An L1 map ``[0, 1] -> g`` in algebra coordinates.

    Use the :meth:`step`, :meth:`constant`, :meth:`zero` and
    :meth:`inverse_sqrt` constructors rather than the raw initializer.
    """

    kind: str
    algebra_dim: int
    breakpoints: np.ndarray = field(default=None)
    values: np.ndarray = field(default=None)
    direction: np.ndarray = field(default=None)
    coeff: float = 1.0
    offset: float = 0.0
    rate: float = 1.0
    generator: str = "inverse_sqrt"

    def __post_init__(self):
        if self.algebra_dim < 1:
            raise ContractError("algebra_dim must be positive")
        if self.kind == "step":
            bp = np.array(self.breakpoints, dtype=float)
            vals = np.array(self.values, dtype=float).reshape(len(bp) - 1, -1)
            if bp.ndim != 1 or len(bp) < 2:
                raise ContractError("need at least two breakpoints")
            if bp[0] != 0.0 or bp[-1] != 1.0:
                raise ContractError("breakpoints must start at 0 and end at 1")
            if np.any(np.diff(bp) <= 0):
                raise ContractError("breakpoints must be strictly increasing")
            if vals.shape[1] != self.algebra_dim:
                raise ContractError(
                    f"values have dimension {vals.shape[1]}, expected {self.algebra_dim}"
                )
            if not np.all(np.isfinite(vals)):
                raise ContractError("step values must be finite")
            bp.flags.writeable = False
            vals.flags.writeable = False
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)
        elif self.kind == "singular":
            if self.generator not in GENERATORS:
                raise ContractError(f"unknown generator {self.generator!r}")
            d = np.array(self.direction, dtype=float).reshape(-1)
            if d.shape[0] != self.algebra_dim:
                raise ContractError("direction has the wrong dimension")
            a, b = float(self.offset), float(self.rate)
            # integrable iff the radicand stays positive on the open interval
            if a < 0 or a + b < 0 or (a == 0 and b == 0):
                raise ContractError("offset + rate*t must be positive on (0, 1)")
            if not (math.isfinite(self.coeff) and math.isfinite(a) and math.isfinite(b)):
                raise ContractError("singular parameters must be finite")
            d.flags.writeable = False
            object.__setattr__(self, "direction", d)
            object.__setattr__(self, "breakpoints", np.array([0.0, 1.0]))
        else:
            raise ContractError(f"unknown control kind {self.kind!r}")

    # -- constructors ---------------------------------------------------------

    @classmethod
    def step(cls, breakpoints, values):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls("step", values.shape[1], breakpoints=breakpoints, values=values)

    @classmethod
    def constant(cls, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls.step([0.0, 1.0], value[None, :])

    @classmethod
    def zero(cls, dim):
        return cls.constant(np.zeros(dim))

    @classmethod
    def inverse_sqrt(cls, direction, coeff=1.0, offset=0.0, rate=1.0):
        direction = np.atleast_1d(np.asarray(direction, dtype=float))
        return cls(
            "singular",
            direction.shape[0],
            direction=direction,
            coeff=float(coeff),
            offset=float(offset),
            rate=float(rate),
        )

    # -- evaluation -----------------------------------------------------------

    @property
    def is_step(self):
        return self.kind == "step"

    def is_zero(self):
        if self.is_step:
            return not np.any(self.values)
        return self.coeff == 0.0 or not np.any(self.direction)

    def profile(self, t):
        """Scalar factor of a singular control at times ``t``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.coeff / np.sqrt(self.offset + self.rate * t)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_step:
            idx = np.searchsorted(self.breakpoints, t, side="right") - 1
            idx = np.clip(idx, 0, len(self.values) - 1)
            return self.values[idx]
        return self.profile(t)[..., None] * self.direction

    def singular_points(self):
        """Endpoints of [0, 1] where a singular control is unbounded."""
        if self.is_step:
            return []
        pts = []
        if self.offset == 0.0:
            pts.append(0.0)
        if self.offset + self.rate == 0.0:
            pts.append(1.0)
        return pts

    # -- mass -----------------------------------------------------------------

    def cumulative_mass(self, t, norm=euclidean):
        """``t -> int_0^t ||c(s)|| ds``, exact for both families."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        if self.is_step:
            dens = np.asarray(norm(self.values), dtype=float)
            cum = np.concatenate([[0.0], np.cumsum(dens * np.diff(self.breakpoints))])
            return np.interp(t, self.breakpoints, cum)
        a, b = self.offset, self.rate
        scale_ = abs(self.coeff) * float(norm(self.direction))
        # 2t / (sqrt(a+bt) + sqrt(a)) avoids cancellation for small rate
        denom = np.sqrt(a + b * t) + math.sqrt(a)
        safe = np.where(denom > 0, denom, 1.0)
        return np.where(denom > 0, scale_ * 2.0 * t / safe, 0.0)

    def mass_between(self, t0, t1, norm=euclidean):
        return self.cumulative_mass(t1, norm) - self.cumulative_mass(t0, norm)

    def piece_masses(self, n, norm=euclidean):
        """L1 masses of the ``n`` pieces produced by :func:`subdivide`."""
        edges = np.arange(n + 1) / n
        return np.diff(self.cumulative_mass(edges, norm))

    # -- calculus -------------------------------------------------------------

    def subdivide(self, n):
        if n < 1:
            raise ContractError("subdivision count must be positive")
        return [self._piece(k, n) for k in range(n)]

    def _piece(self, k, n):
        # piece k is tau -> (1/n) c((k + tau)/n)
        if not self.is_step:
            return ControlSignal.inverse_sqrt(
                self.direction,
                coeff=self.coeff / n,
                offset=self.offset + self.rate * k / n,
                rate=self.rate / n,
            )
        lo, hi = k / n, (k + 1) / n
        inner = self.breakpoints[(self.breakpoints > lo) & (self.breakpoints < hi)]
        tau = inner * n - k
        tau = tau[(tau > _SLIVER) & (tau < 1.0 - _SLIVER)]
        bp = np.concatenate([[0.0], tau, [1.0]])
        mids = (k + 0.5 * (bp[:-1] + bp[1:])) / n
        return ControlSignal.step(bp, self(mids) / n)

    def scale(self, s):
        s = float(s)
        if self.is_step:
            return ControlSignal.step(self.breakpoints, s * self.values)
        return ControlSignal.inverse_sqrt(self.direction, self.coeff * s, self.offset, self.rate)

    def time_reverse_negate(self):
        """``t -> -c(1 - t)``."""
        if self.is_step:
            bp = 1.0 - self.breakpoints[::-1]
            bp[0], bp[-1] = 0.0, 1.0
            return ControlSignal.step(bp, -self.values[::-1])
        return ControlSignal.inverse_sqrt(
            self.direction, -self.coeff, self.offset + self.rate, -self.rate
        )

    # -- quadrature support for the Picard solver ------------------------------

    def cell_values(self, cells):
        """Constant algebra vector per grid cell.

        On each cell the control equals ``cell_values[c] * g_c(t)`` with a
        scalar profile ``g_c`` (identically 1 for step controls).  The grid
        must contain every step breakpoint.
        """
        cells = np.asarray(cells, dtype=float)
        if self.is_step:
            return np.array(self(0.5 * (cells[:-1] + cells[1:])))
        return np.broadcast_to(self.direction, (len(cells) - 1, self.algebra_dim)).copy()

    def cell_weights(self, cells, nodes, integration):
        """Scalar weights ``w[c, i, j] = int_{t_c}^{x_ci} l_cj(t) g_c(t) dt``.

        ``nodes`` are reference nodes on [0, 1]; ``integration[i, j]`` is the
        integral of the j-th reference Lagrange basis polynomial over
        ``[0, nodes[i]]``.  Singular profiles are integrated exactly through
        the substitution ``u = sqrt(offset + rate*t)``, which turns the weight
        into a polynomial in ``u``.
        """
        cells = np.asarray(cells, dtype=float)
        h = np.diff(cells)
        if self.is_step:
            return h[:, None, None] * integration[None, :, :]
        return self._singular_weights(cells, np.asarray(nodes, dtype=float))

    def _singular_weights(self, cells, nodes):
        a, b = self.offset, self.rate
        gx, gw = np.polynomial.legendre.leggauss(_GAUSS_POINTS)
        rho, rw = 0.5 * (gx + 1.0), 0.5 * gw
        t0 = cells[:-1, None]
        h = np.diff(cells)[:, None]
        x1 = t0 + nodes[None, :] * h  # (C, s)
        u0 = np.sqrt(np.maximum(a + b * t0, 0.0))
        u1 = np.sqrt(np.maximum(a + b * x1, 0.0))
        denom = u0 + u1
        with np.errstate(invalid="ignore", divide="ignore"):
            jac = np.where(denom > 0, 2.0 * self.coeff * (x1 - t0) / denom, 0.0)
            ratio = np.where(denom > 0, (x1 - t0) / denom, 0.0)
        # quadrature abscissae in t for every (cell, target node, gauss point)
        u = u0[..., None] + rho * (u1 - u0)[..., None]
        t = t0[..., None] + rho * ratio[..., None] * (u + u0[..., None])
        xi = (t - t0[..., None]) / h[..., None]  # reference coordinate
        basis = _lagrange_basis(nodes, xi)  # (C, s, G, s)
        return np.einsum("cig,cigj->cij", jac[..., None] * rw, basis)

    # -- serialization ----------------------------------------------------------

    def to_dict(self):
        if self.is_step:
            return {
                "algebra_dim": self.algebra_dim,
                "kind": "step",
                "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist(),
            }
        out = {
            "algebra_dim": self.algebra_dim,
            "kind": "singular",
            "generator": self.generator,
            "direction": self.direction.tolist(),
        }
        if (self.coeff, self.offset, self.rate) != (1.0, 0.0, 1.0):
            out.update(scale=self.coeff, offset=self.offset, rate=self.rate)
        return out

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        if kind == "step":
            ctrl = cls.step(data["breakpoints"], data["values"])
        elif kind == "singular":
            ctrl = cls(
                "singular",
                len(data["direction"]),
                direction=data["direction"],
                coeff=float(data.get("scale", 1.0)),
                offset=float(data.get("offset", 0.0)),
                rate=float(data.get("rate", 1.0)),
                generator=data.get("generator", "inverse_sqrt"),
            )
        else:
            raise ContractError(f"unknown control kind {kind!r}")
        if "algebra_dim" in data and int(data["algebra_dim"]) != ctrl.algebra_dim:
            raise ContractError("algebra_dim does not match the stored values")
        return ctrl

    def __repr__(self):
        if self.is_step:
            return f"ControlSignal.step(K={len(self.values)}, dim={self.algebra_dim})"
        return (
            f"ControlSignal.inverse_sqrt(dim={self.algebra_dim}, scale={self.coeff}, "
            f"offset={self.offset}, rate={self.rate})"
        )


def _lagrange_basis(nodes, x):
    """Evaluate every Lagrange basis polynomial on ``nodes`` at ``x``.

    Returns an array of shape ``x.shape + (len(nodes),)``.
    """
    x = np.asarray(x, dtype=float)[..., None]
    out = np.ones(x.shape[:-1] + (len(nodes),))
    for j, xj in enumerate(nodes):
        for m, xm in enumerate(nodes):
            if m != j:
                out[..., j] *= (x[..., 0] - xm) / (xj - xm)
    return out


# -- functional API -----------------------------------------------------------


def l1_norm(c, norm=euclidean):
    """Total L1 mass ``int_0^1 ||c(t)|| dt``."""
    return float(c.cumulative_mass(1.0, norm))


def subdivide(c, n):
    return c.subdivide(n)


def scale(c, s):
    return c.scale(s)


def time_reverse_negate(c):
    return c.time_reverse_negate()


def choose_subdivision_count(c, eps, norm=euclidean, max_n=1 << 22):
    """Smallest ``N`` such that every piece of ``subdivide(c, N)`` has mass <= eps.

    The admissibility predicate is not monotone in ``N`` (a piece edge can
    split a mass concentration for one ``N`` and miss it for ``N + 1``), so
    doubling only brackets the answer and the bracket is scanned.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    if math.isinf(eps):
        return 1
    total = l1_norm(c, norm)

    def ok(n):
        return float(np.max(c.piece_masses(n, norm))) <= eps

    lo = max(1, math.ceil(total / eps - 1e-12))
    hi = lo
    while not ok(hi):
        hi *= 2
        if hi > max_n:
            raise ContractError("no admissible subdivision below max_n")
    for n in range(lo, hi + 1):
        if ok(n):
            return n
    return hi  # pragma: no cover


# -- JSON files ------------------------------------------------------------------


def load_control(path):
    with open(path, encoding="utf-8") as fh:
        return ControlSignal.from_dict(json.load(fh))


def save_control(c, path):
    Path(path).write_text(json.dumps(c.to_dict(), indent=2) + "\n", encoding="utf-8")
