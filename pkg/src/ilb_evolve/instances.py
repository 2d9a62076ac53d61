"""Concrete chains: abelian, matrix groups, Sobolev loops, interval diffeomorphisms.

Registry strings understood by :func:`make_instance`::

    abelian:d        R^d under addition
    so3              rotation group, algebra coordinates (w1, w2, w3)
    gl:d             invertible d x d matrices near the identity
    loop:M,levels    2 x 2 matrix loops truncated to M Fourier modes, H^n norms
    diffint:G,levels increasing maps of [0, 1] fixing 0 and 1 on G grid points
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .chain import Chain
from .errors import ContractError, UnsupportedOperation
from .interp import hermite_eval


def _unit_rows(a, norms):
    return a / norms[:, None]


class AbelianChain(Chain):
    """``R^d`` with addition; every level is the same Euclidean space."""

    def __init__(self, d):
        if d < 1:
            raise ContractError("dimension must be positive")
        self.d = d
        self.point_dim = self.algebra_dim = d
        self.name = f"abelian:{d}"

    @property
    def params(self):
        return {"name": self.name, "dim": self.d}

    def identity(self, n=1):
        return np.zeros(self.d)

    def norm(self, n, w):
        return np.linalg.norm(w, axis=-1)

    algebra_norm = norm

    def _product(self, x, g):
        return x + g

    def translate_tangent(self, n, x, w):
        return np.broadcast_to(w, np.broadcast_shapes(np.shape(x), np.shape(w))).copy()

    def invert(self, n, x):
        return -np.asarray(x, dtype=float)

    def exp_point(self, v):
        return np.array(v, dtype=float, copy=True)

    def analytic_bounds(self, n, offset, center, radius):
        return 0.0, 1.0

    def sample_tangent(self, n, rng, size):
        a = rng.normal(size=(size, self.d))
        return _unit_rows(a, np.linalg.norm(a, axis=-1))

    sample_algebra = sample_tangent


def hat(w):
    """so(3) coordinates -> skew-symmetric matrices."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -w[..., 2], w[..., 1]
    out[..., 1, 0], out[..., 1, 2] = w[..., 2], -w[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -w[..., 1], w[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    skew = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([skew[..., 2, 1], skew[..., 0, 2], skew[..., 1, 0]], axis=-1)


def op_norm(m):
    """Largest singular value over the last two axes."""
    return np.linalg.svd(m, compute_uv=False)[..., 0]


class MatrixChain(Chain):
    """Matrix group with every level equal; norm is the operator norm.

    Points are flattened ``d x d`` matrices in row-major order.  With
    ``so3=True`` algebra vectors are the three coordinates of a skew matrix.
    """

    def __init__(self, d, so3=False):
        if so3:
            d = 3
        if d < 1:
            raise ContractError("matrix size must be positive")
        self.d = d
        self.so3 = so3
        self.point_dim = d * d
        self.algebra_dim = 3 if so3 else d * d
        self.name = "so3" if so3 else f"gl:{d}"
        eye = np.eye(d)
        # flat (i, j) -> column sums then row sums
        self._sum_op = np.hstack([np.kron(np.ones((d, 1)), eye), np.kron(eye, np.ones((d, 1)))])

    @property
    def params(self):
        return {"name": self.name, "dim": self.d}

    def _mat(self, x):
        x = np.asarray(x, dtype=float)
        return x.reshape(x.shape[:-1] + (self.d, self.d))

    def _flat(self, m):
        return m.reshape(m.shape[:-2] + (self.d * self.d,))

    def identity(self, n=1):
        return np.eye(self.d).reshape(-1)

    def norm(self, n, w):
        return op_norm(self._mat(w))

    def _upper(self, m):
        # ||A||_op <= min(||A||_F, sqrt(||A||_1 ||A||_inf))
        d = self.d
        flat = m.reshape(-1, d * d)
        fro = np.sqrt(np.einsum("ki,ki->k", flat, flat))
        # row and column sums as one small matmul (reductions over tiny axes are slow)
        sums = np.abs(flat) @ self._sum_op
        one = sums[:, :d].max(axis=1)
        inf = sums[:, d:].max(axis=1)
        return np.minimum(fro, np.sqrt(one * inf))

    def norm_bound(self, n, w):
        m = self._mat(w).reshape(-1, self.d, self.d)
        return float(self._upper(m).max()) if len(m) else 0.0

    def max_norm(self, n, w):
        # once one operator norm is known, only the matrices whose upper
        # bound reaches it can beat it
        m = self._mat(w).reshape(-1, self.d, self.d)
        if len(m) == 0:
            return 0.0
        upper = self._upper(m)
        lower = float(op_norm(m[np.argmax(upper)]))
        cand = m[upper > lower]
        if len(cand) == 0:
            return lower
        # the top eigenvalue of A^T A is accurate relative to itself
        top = np.linalg.eigvalsh(np.swapaxes(cand, -1, -2) @ cand)[:, -1]
        return max(lower, float(np.sqrt(max(top.max(), 0.0))))

    def algebra_norm(self, n, v):
        if self.so3:
            # ||hat(w)||_op = |w|
            return np.linalg.norm(v, axis=-1)
        return self.norm(n, v)

    def _product(self, x, g):
        return self._flat(self._mat(x) @ self._mat(g))

    def embed(self, v):
        if self.so3:
            return self._flat(hat(v))
        return np.asarray(v, dtype=float)

    def to_algebra(self, w):
        if self.so3:
            return vee(self._mat(w))
        return np.asarray(w, dtype=float)

    def translate_tangent(self, n, x, w):
        return self._flat(self._mat(w) @ self._mat(x))

    def invert(self, n, x):
        return self._flat(np.linalg.inv(self._mat(x)))

    def exp_point(self, v):
        return self._flat(expm(self._mat(self.embed(v))))

    def analytic_bounds(self, n, offset, center, radius):
        # ||V A2 - V A1|| <= ||V|| ||A2 - A1||  and  ||V A|| <= ||V|| ||A||
        return 1.0, float(self.norm(n, center)) + radius

    def sample_tangent(self, n, rng, size):
        a = rng.normal(size=(size, self.point_dim))
        return _unit_rows(a, self.norm(n, a))

    def sample_algebra(self, n, rng, size):
        a = rng.normal(size=(size, self.algebra_dim))
        return _unit_rows(a, self.algebra_norm(n, a))


# -- loops -------------------------------------------------------------------


@lru_cache(maxsize=None)
def _trig_basis(deg, points):
    """Sample matrix (points, 2*deg+1) for the real trigonometric basis.

    Column 0 is the constant, column 2j-1 is cos(j θ), column 2j is sin(j θ).
    """
    theta = 2 * np.pi * np.arange(points) / points
    cols = [np.ones(points)]
    for j in range(1, deg + 1):
        cols += [np.cos(j * theta), np.sin(j * theta)]
    b = np.stack(cols, axis=1)
    b.flags.writeable = False
    return b


@lru_cache(maxsize=None)
def _trig_projection(deg, points):
    """Discrete projection onto modes <= deg, exact for degree < points/2."""
    b = _trig_basis(deg, points)
    p = 2.0 * b.T / points
    p[0] *= 0.5
    p.flags.writeable = False
    return p


@lru_cache(maxsize=None)
def _mode_numbers(deg):
    j = np.zeros(2 * deg + 1)
    j[1::2] = j[2::2] = np.arange(1, deg + 1)
    return j


def _mul2(a, b):
    """Batched 2 x 2 matrix product, faster than matmul for tiny blocks."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a00, a01, a10, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b00, b01, b10, b11 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


class LoopChain(Chain):
    """Truncated Fourier loops ``S^1 -> gl(2)`` with Sobolev H^n norms.

    Coordinates are the real trigonometric coefficients ``(2M+1, 2, 2)``
    flattened.  Products are evaluated on ``4M+1`` equispaced angles and
    projected back to ``M`` modes, which equals the exact product with all
    modes above ``M`` discarded.
    """

    d = 2
    default_tol = 1e-10
    exact = False

    def __init__(self, modes, levels):
        if modes < 2:
            raise ContractError("loop chain needs M >= 2")
        if levels < 1:
            raise ContractError("need at least one level")
        self.M = modes
        self.n_max = levels
        self.point_dim = self.algebra_dim = (2 * modes + 1) * 4
        self.name = f"loop:{modes},{levels}"
        self.P = 4 * modes + 1

    @property
    def params(self):
        return {"name": self.name, "modes": self.M, "levels": self.n_max, "matrix_size": 2}

    def coeffs(self, x):
        x = np.asarray(x, dtype=float)
        return x.reshape(x.shape[:-1] + (2 * self.M + 1, 2, 2))

    def flat(self, c):
        return c.reshape(c.shape[:-3] + (self.point_dim,))

    def samples(self, x, points=None):
        """Loop values at ``points`` equispaced angles, shape (..., points, 2, 2)."""
        points = self.P if points is None else points
        c = np.asarray(x, dtype=float).reshape(np.shape(x)[:-1] + (2 * self.M + 1, 4))
        s = _trig_basis(self.M, points) @ c
        return s.reshape(s.shape[:-1] + (2, 2))

    def from_samples(self, s):
        s = s.reshape(s.shape[:-2] + (4,))
        c = _trig_projection(self.M, s.shape[-2]) @ s
        return c.reshape(c.shape[:-2] + (self.point_dim,))

    def identity(self, n=1):
        c = np.zeros((2 * self.M + 1, 2, 2))
        c[0] = np.eye(2)
        return self.flat(c)

    def rounding_scale(self, n):
        return (1.0 + self.M**2) ** (0.5 * n)

    def weights(self, n):
        w = (1.0 + _mode_numbers(self.M) ** 2) ** n
        w[1:] *= 0.5
        return w

    def norm(self, n, w):
        c2 = np.sum(self.coeffs(w) ** 2, axis=(-1, -2))
        return np.sqrt(c2 @ self.weights(n))

    algebra_norm = norm

    def _product(self, x, g):
        return self.from_samples(_mul2(self.samples(x), self.samples(g)))

    def translate_tangent(self, n, x, w):
        return self._product(np.asarray(w, dtype=float), np.asarray(x, dtype=float))

    def invert(self, n, x):
        return self.from_samples(np.linalg.inv(self.samples(x)))

    def _exact_tail_product(self, a, b, deg_a, deg_b, drop_below):
        """Product of coefficient arrays, keeping modes in [drop_below, M]."""
        deg = deg_a + deg_b
        pts = 2 * deg + 1
        sa = np.einsum("pk,...kab->...pab", _trig_basis(deg_a, pts), a)
        sb = np.einsum("pk,...kab->...pab", _trig_basis(deg_b, pts), b)
        full = np.einsum("kp,...pab->...kab", _trig_projection(deg, pts), _mul2(sa, sb))
        if drop_below > 0:
            full[..., : 2 * drop_below - 1, :, :] = 0.0
        return full

    def associativity_bound(self, n, x, y, z):
        # (xy)z - x(yz) = P(x T(yz)) - P(T(xy) z), T = modes above M
        M = self.M
        cx, cy, cz = self.coeffs(x), self.coeffs(y), self.coeffs(z)
        t_xy = self._exact_tail_product(cx, cy, M, M, M + 1)
        t_yz = self._exact_tail_product(cy, cz, M, M, M + 1)
        left = self._exact_tail_product(t_xy, cz, 2 * M, M, 0)[..., : 2 * M + 1, :, :]
        right = self._exact_tail_product(cx, t_yz, M, 2 * M, 0)[..., : 2 * M + 1, :, :]
        return self.norm(n, self.flat(left)) + self.norm(n, self.flat(right))

    # samples are drawn on this many modes and truncated, so that chains with
    # different M see the same loops (up to truncation) for the same seed
    sample_modes = 64

    def _random_coeffs(self, n, rng, size):
        big = max(self.M, self.sample_modes)
        j = _mode_numbers(big)
        decay = (1.0 + j**2) ** (-0.5 * n) * (1.0 + j) ** -2.0
        c = rng.normal(size=(size, 2 * big + 1, 4)) * decay[None, :, None]
        # random bandwidth so that low-mode directions are well represented
        cut = rng.integers(0, big + 1, size)
        c[j[None, :] > cut[:, None]] = 0.0
        return c[:, : 2 * self.M + 1].reshape(size, -1)

    def sample_tangent(self, n, rng, size):
        a = self._random_coeffs(n, rng, size)
        return _unit_rows(a, self.norm(n, a))

    sample_algebra = sample_tangent

    def sample_control(self, rng, steps, mass, level=None, max_mode=1):
        from .controls import ControlSignal

        level = self.n_max + self.field_offset if level is None else level
        bp = np.linspace(0.0, 1.0, steps + 1)
        c = np.zeros((steps, 2 * self.M + 1, 4))
        c[:, : 2 * max_mode + 1] = rng.normal(size=(steps, 2 * max_mode + 1, 4))
        ctrl = ControlSignal.step(bp, c.reshape(steps, -1))
        total = ctrl.cumulative_mass(1.0, lambda v: self.algebra_norm(level, v))
        return ctrl.scale(mass / total)


# -- interval diffeomorphisms ------------------------------------------------------


class DiffIntervalChain(Chain):
    """Increasing grid maps of [0, 1] fixing both endpoints, under composition.

    Level ``n`` uses the max of the finite-difference derivatives of order
    ``0..n``.  Composition interpolates the outer map with shape-preserving
    monotone cubics; vector fields (tangent vectors) are interpolated with
    centered cubic Hermite slopes.
    """

    loss = 1
    default_tol = 1e-10
    default_trust_radius = 0.5
    exact = False

    def __init__(self, grid=257, levels=3):
        if grid < 9:
            raise ContractError("diffeomorphism grid needs at least 9 points")
        if levels < 1:
            raise ContractError("need at least one level")
        self.G = grid
        self.n_max = levels
        self.x = np.linspace(0.0, 1.0, grid)
        self.h = 1.0 / (grid - 1)
        self.point_dim = self.algebra_dim = grid
        self.name = f"diffint:{grid},{levels}"

    @property
    def params(self):
        return {"name": self.name, "grid": self.G, "levels": self.n_max}

    def identity(self, n=1):
        return self.x.copy()

    def norm(self, n, w):
        w = np.asarray(w, dtype=float)
        out = np.max(np.abs(w), axis=-1)
        d = w
        for k in range(1, min(n, self.G - 1) + 1):
            d = np.diff(d, axis=-1) / self.h
            out = np.maximum(out, np.max(np.abs(d), axis=-1))
        return out

    algebra_norm = norm

    def rounding_scale(self, n):
        return (2.0 / self.h) ** min(n, self.G - 1)

    def _product(self, x, g):
        return hermite_eval(self.x, x, g, slopes="pchip")

    def translate_tangent(self, n, x, w):
        return hermite_eval(self.x, w, x, slopes="centered")

    def invert(self, n, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.G)
        out = np.empty_like(flat)
        for i, row in enumerate(flat):
            if np.any(np.diff(row) <= 0):
                raise ContractError("diffeomorphism is not strictly increasing")
            out[i] = hermite_eval(row, self.x, self.x, slopes="pchip")
        return out.reshape(x.shape)

    def associativity_bound(self, n, x, y, z):
        # Interpolation defect estimate: rebuild each factor from every other
        # knot and measure the miss at the skipped knots, scaled by h^3 for
        # cubic accuracy, then carried to level n by h^-n.
        def miss(f):
            coarse = hermite_eval(self.x[::2], f[..., ::2], self.x[1::2], slopes="pchip")
            return np.max(np.abs(coarse - f[..., 1::2]), axis=-1) / 8.0

        amp = self.h ** (-min(n, self.G - 1)) * 2.0 ** n
        return 16.0 * amp * (miss(x) + miss(y) + miss(self._product(x, y))) + 1e-12

    def _modes(self, k):
        return np.sin(np.pi * np.outer(np.arange(1, k + 1), self.x))

    def sample_tangent(self, n, rng, size):
        # half sine modes, half low-degree polynomials vanishing at the ends;
        # the polynomials carry the large ratios of low to high derivatives
        k = 6
        a = rng.normal(size=(size, k)) / np.arange(1, k + 1) ** (n + 2)
        w = a @ self._modes(k)
        half = size // 2
        p = rng.normal(size=(half, 3))
        x = self.x
        w[:half] = x * (1 - x) * (p[:, :1] + p[:, 1:2] * x + p[:, 2:] * x * x)
        return _unit_rows(w, self.norm(n, w))

    sample_algebra = sample_tangent

    def field_family(self, a, b):
        """Endpoint-vanishing fields ``x (1 - x) (a + b x)`` on the grid."""
        return self.x * (1 - self.x) * (a + b * self.x)

    def sample_control(self, rng, steps, mass, level=None):
        from .controls import ControlSignal

        # seventh differences on the default grid are rounding noise, so the
        # default normalizes at the control level of an evolution at n = 1
        level = 2 + self.field_offset if level is None else level
        bp = np.linspace(0.0, 1.0, steps + 1)
        ab = rng.uniform(-1.0, 1.0, size=(steps, 2))
        vals = np.stack([self.field_family(a, b) for a, b in ab])
        ctrl = ControlSignal.step(bp, vals)
        total = ctrl.cumulative_mass(1.0, lambda v: self.algebra_norm(level, v))
        return ctrl.scale(mass / total)

    def is_diffeomorphism(self, x):
        x = np.asarray(x, dtype=float)
        return (
            np.all(x[..., 0] == 0.0)
            and np.all(x[..., -1] == 1.0)
            and bool(np.all(np.diff(x, axis=-1) > 0))
        )


# -- registry ----------------------------------------------------------------------

REGISTRY = ("abelian", "so3", "gl", "loop", "diffint")


def _ints(arg, name, count):
    try:
        vals = [int(p) for p in arg.split(",")] if arg else []
    except ValueError as exc:
        raise ContractError(f"bad parameters for {name}: {arg!r}") from exc
    if len(vals) not in count:
        raise ContractError(f"{name} expects {'/'.join(map(str, count))} integer parameters")
    return vals


def make_instance(spec):
    """Build a chain from a registry string such as ``"loop:16,4"``."""
    name, _, arg = spec.strip().partition(":")
    if name == "abelian":
        (d,) = _ints(arg, name, (1,))
        return AbelianChain(d)
    if name == "so3":
        if arg:
            raise ContractError("so3 takes no parameters")
        return MatrixChain(3, so3=True)
    if name == "gl":
        (d,) = _ints(arg, name, (1,))
        return MatrixChain(d)
    if name == "loop":
        m, levels = _ints(arg, name, (2,))
        return LoopChain(m, levels)
    if name == "diffint":
        vals = _ints(arg, name, (0, 1, 2))
        return DiffIntervalChain(*vals)
    raise ContractError(f"unknown instance {name!r}; known: {', '.join(REGISTRY)}")


def exp_point(chain, v):
    return chain.exp_point(v)


def invert(chain, x, n=1):
    return chain.invert(n, x)


__all__ = [
    "AbelianChain",
    "MatrixChain",
    "LoopChain",
    "DiffIntervalChain",
    "make_instance",
    "exp_point",
    "invert",
    "hat",
    "vee",
    "op_norm",
    "UnsupportedOperation",
]
