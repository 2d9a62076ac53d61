"""Descending chains of levels with derivative-losing products.

A :class:`Chain` models a sequence of levels ``M_1 ⊇ M_2 ⊇ ...`` that share
one global chart.  Every level uses the same coordinate vectors; what
changes between levels is the norm.  The product ``(x, g) -> x g`` maps
level ``m`` times level ``n`` into level ``n`` for ``m >= n`` and loses
``loss`` derivatives per level step.

All methods act on the last axis and broadcast over leading batch axes.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UnsupportedOperation


class Chain:
    """Base class for chain instances.

    Subclasses implement ``_product``, ``norm``, ``algebra_norm``,
    ``embed``, ``to_algebra``, ``translate_tangent`` and the samplers.
    """

    name = "chain"
    loss = 0
    n_max = 4
    field_offset = 3
    point_dim = 1
    algebra_dim = 1
    default_tol = 1e-12
    default_trust_radius = 1.0
    exact = True
    allows_equal_levels = True

    @property
    def params(self):
        return {"name": self.name}

    # -- level bookkeeping -----------------------------------------------------

    def _check_levels(self, m, n, strict=False):
        if n < 1 or m < n or (m == n and (strict or not self.allows_equal_levels)):
            raise ContractError(f"level ordering violated: m={m}, n={n}")

    def identity(self, n=1):
        raise NotImplementedError

    def include(self, m, n, x):
        """Inclusion ``M_m -> M_n``; the identity on shared coordinates."""
        self._check_levels(m, n)
        return np.array(x, dtype=float, copy=True)

    def include_algebra(self, m, n, v):
        self._check_levels(m, n)
        return np.array(v, dtype=float, copy=True)

    def product(self, m, n, x, g):
        """``x g`` for ``x`` at level ``m`` and ``g`` at level ``n``."""
        self._check_levels(m, n)
        return self._product(np.asarray(x, dtype=float), np.asarray(g, dtype=float))

    def _product(self, x, g):
        raise NotImplementedError

    # -- tangent structure -------------------------------------------------------

    def embed(self, v):
        """Algebra coordinates -> tangent coordinates at the identity."""
        return np.asarray(v, dtype=float)

    def to_algebra(self, w):
        """Tangent coordinates at the identity -> algebra coordinates."""
        return np.asarray(w, dtype=float)

    def translate_tangent(self, n, x, w):
        """Derivative of right translation by ``x`` applied to tangent ``w``."""
        raise NotImplementedError

    def field_apply(self, n, x, v):
        return self.translate_tangent(n, x, self.embed(v))

    # -- optional group operations ---------------------------------------------------

    def invert(self, n, x):
        raise UnsupportedOperation(f"{self.name}: inversion unavailable")

    def exp_point(self, v):
        raise UnsupportedOperation(f"{self.name}: no group exponential")

    # -- quantitative hooks -----------------------------------------------------------

    def analytic_bounds(self, n, offset, center, radius):
        """Exact ``(L, S)`` on the trust ball, or ``None`` to sample."""
        return None

    def associativity_bound(self, n, x, y, z):
        """Per-sample bound on the associativity defect, ``None`` if exact."""
        return None

    def rounding_scale(self, n):
        """Worst amplification of coordinate rounding by the level-``n`` norm."""
        return 1.0

    def norm(self, n, w):
        raise NotImplementedError

    def algebra_norm(self, n, v):
        raise NotImplementedError

    def max_norm(self, n, w):
        """``max`` of the level-``n`` norm over the leading axes of ``w``."""
        return float(np.max(self.norm(n, w)))

    def norm_bound(self, n, w):
        """Cheap upper bound for :meth:`max_norm`; exact by default."""
        return self.max_norm(n, w)

    def sample_tangent(self, n, rng, size):
        """Random tangent vectors of unit level-``n`` norm, shape (size, D)."""
        raise NotImplementedError

    def sample_algebra(self, n, rng, size):
        """Random algebra vectors of unit level-``n`` algebra norm."""
        raise NotImplementedError

    def sample_points(self, n, rng, size, radius, center=None):
        """Random points of the closed level-``n`` ball around ``center``."""
        center = self.identity(n) if center is None else np.asarray(center, dtype=float)
        dirs = self.sample_tangent(n, rng, size)
        r = radius * rng.uniform(0.0, 1.0, size) ** 0.5
        # put a share of the samples on the sphere itself
        r[: max(1, size // 4)] = radius
        return center + r[:, None] * dirs

    def sample_control(self, rng, steps, mass, level=None):
        """A random step control with ``steps`` pieces and given L1 mass."""
        from .controls import ControlSignal

        level = self.n_max if level is None else level
        inner = np.sort(rng.uniform(0.05, 0.95, steps - 1))
        bp = np.concatenate([[0.0], inner, [1.0]])
        while np.any(np.diff(bp) < 1e-3):
            inner = np.sort(rng.uniform(0.05, 0.95, steps - 1))
            bp = np.concatenate([[0.0], inner, [1.0]])
        vals = self.sample_algebra(level, rng, steps) * rng.uniform(0.3, 1.0, steps)[:, None]
        ctrl = ControlSignal.step(bp, vals)
        total = ctrl.cumulative_mass(1.0, lambda v: self.algebra_norm(level, v))
        return ctrl.scale(mass / total) if total > 0 else ctrl

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


@dataclass(frozen=True)
class RightInvariantField:
    """``(x, v) -> TR_x(v)`` at level ``level`` with controls at ``level + offset``."""

    chain: Chain
    level: int
    offset: int = 3

    @property
    def control_level(self):
        return self.level + self.offset

    def apply(self, x, v):
        return self.chain.field_apply(self.level, x, v)

    def state_norm(self, w):
        return self.chain.norm(self.level, w)

    def max_state_norm(self, w):
        return self.chain.max_norm(self.level, w)

    def state_norm_bound(self, w):
        return self.chain.norm_bound(self.level, w)

    def control_norm(self, v):
        return self.chain.algebra_norm(self.control_level, v)


def right_translate(chain, n, m, x, g):
    """Right translation ``R_g^{n,m}: M_m -> M_n, x -> x g``."""
    if m < n or (m == n and not chain.allows_equal_levels):
        raise ContractError(f"right translation needs m > n, got m={m}, n={n}")
    return chain.product(m, n, x, g)


def field_apply(chain, n, x, v):
    return chain.field_apply(n, x, v)


def corrupt(chain, amount=1e-3):
    """Copy of ``chain`` whose product is shifted by ``amount`` (negative control)."""
    bad = copy.copy(chain)
    good = chain._product
    bad._product = lambda x, g: good(x, g) + amount
    bad.name = chain.name + "+corrupt"
    return bad


# -- axiom validation ---------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    violation: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        extra = "".join(f" {k}={v:.3g}" for k, v in self.detail.items())
        return f"{flag} {self.name}: max violation {self.violation:.3e} (threshold {self.threshold:.1e}){extra}"


@dataclass
class ChainReport:
    chain: str
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "chain": self.chain,
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "violation": c.violation,
                    "threshold": c.threshold,
                    "passed": c.passed,
                    **c.detail,
                }
                for c in self.checks
            ],
        }


def _rel(chain, n, diff, ref):
    return float(np.max(chain.norm(n, diff) / np.maximum(1.0, chain.norm(n, ref))))


def _inclusion_constant(chain, rng, count):
    c = 0.0
    for n in range(1, chain.n_max):
        x = chain.sample_tangent(n + 1, rng, count)
        ratio = chain.norm(n, chain.include(n + 1, n, x)) / chain.norm(n + 1, x)
        c = max(c, float(np.max(ratio)))
    return c


def validate_chain(chain, sample_count=32, seed=0, exact_tol=1e-10, radius=0.5):
    """Check the chain axioms on random samples; violations are reported, not raised.

    Violations are relative to ``max(1, ||reference||)``.  Chains flagged as
    non-exact compare their associativity defect against the instance's
    truncation bound instead of ``exact_tol``.
    """
    rng = np.random.default_rng(seed)
    k = sample_count
    top = chain.n_max
    if not chain.exact:
        exact_tol = max(exact_tol, 1e-14 * chain.rounding_scale(top))
    levels = [n for n in range(1, top + 1)]
    triples = [(l, m, n) for l in levels for m in levels for n in levels if l > m > n]
    if not triples:
        triples = [(top, top, top)]

    def pts(n):
        return chain.sample_points(n, rng, k, radius)

    checks = []

    worst = 0.0
    for n in levels:
        for m in levels:
            if m < n or (m == n and not chain.allows_equal_levels):
                continue
            h = pts(n)
            e = np.broadcast_to(chain.identity(m), h.shape)
            worst = max(worst, _rel(chain, n, chain.product(m, n, e, h) - h, h))
    checks.append(CheckResult("identity_law", worst, exact_tol, worst <= exact_tol))

    worst, bound_ratio, worst_abs, worst_bound = 0.0, 0.0, 0.0, 0.0
    for l, m, n in triples:
        x, y, z = pts(l), pts(m), pts(n)
        left = chain.product(m, n, chain.product(l, m, x, y), z)
        right = chain.product(l, n, x, chain.product(m, n, y, z))
        viol = chain.norm(n, left - right)
        worst = max(worst, _rel(chain, n, left - right, left))
        worst_abs = max(worst_abs, float(np.max(viol)))
        bound = chain.associativity_bound(n, x, y, z)
        if bound is not None:
            # bound plus a rounding floor
            allowed = bound * (1 + 1e-6) + exact_tol * np.maximum(1.0, chain.norm(n, left))
            bound_ratio = max(bound_ratio, float(np.max(viol / allowed)))
            worst_bound = max(worst_bound, float(np.max(bound)))
    if chain.exact:
        checks.append(CheckResult("associativity", worst, exact_tol, worst <= exact_tol))
    else:
        checks.append(
            CheckResult(
                "associativity",
                worst,
                exact_tol,
                bound_ratio <= 1.0,
                {
                    "abs_violation": worst_abs,
                    "truncation_bound": worst_bound,
                    "violation_over_allowed": bound_ratio,
                },
            )
        )

    worst = 0.0
    for l, m, n in triples:
        x = pts(l)
        direct = chain.include(l, n, x)
        composed = chain.include(m, n, chain.include(l, m, x))
        worst = max(worst, _rel(chain, n, direct - composed, direct))
    checks.append(CheckResult("inclusion_functoriality", worst, exact_tol, worst <= exact_tol))

    if top > 1:
        c1 = _inclusion_constant(chain, np.random.default_rng(seed + 1), k)
        c2 = _inclusion_constant(chain, np.random.default_rng(seed + 2), 2 * k)
        drift = abs(c2 - c1) / max(c1, 1e-300)
        ok = np.isfinite(c1) and np.isfinite(c2) and drift <= 0.1
        checks.append(
            CheckResult(
                "inclusion_norm", drift, 0.1, bool(ok), {"C": c1, "C_doubled": c2}
            )
        )

    worst = 0.0
    for n in levels:
        x = pts(n)
        v = chain.sample_algebra(n + chain.field_offset, rng, k)
        w = chain.sample_algebra(n + chain.field_offset, rng, k)
        a, b = rng.normal(size=(2, k, 1))
        lhs = chain.field_apply(n, x, a * v + b * w)
        rhs = a * chain.field_apply(n, x, v) + b * chain.field_apply(n, x, w)
        worst = max(worst, _rel(chain, n, lhs - rhs, lhs))
    checks.append(CheckResult("field_linearity", worst, exact_tol, worst <= exact_tol))

    n = levels[0]
    v = chain.sample_algebra(n + chain.field_offset, rng, k)
    e = np.broadcast_to(chain.identity(n), (k, chain.point_dim))
    diff = chain.field_apply(n, e, v) - chain.embed(v)
    worst = _rel(chain, n, diff, chain.embed(v))
    checks.append(CheckResult("field_at_identity", worst, exact_tol, worst <= exact_tol))

    worst = 0.0
    for l, m, n in triples:
        x, g = pts(l), pts(n)
        direct = right_translate(chain, n, l, x, g)
        via = right_translate(chain, n, m, chain.include(l, m, x), g)
        worst = max(worst, _rel(chain, n, direct - via, direct))
    checks.append(CheckResult("translation_inclusion", worst, exact_tol, worst <= exact_tol))

    return ChainReport(chain.name, checks)
