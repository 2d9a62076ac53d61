import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilb_evolve import ContractError, make_instance, validate_chain
from ilb_evolve.chain import RightInvariantField, corrupt, field_apply, right_translate

EXACT = ["abelian:3", "so3", "gl:2", "gl:3"]
ALL = EXACT + ["loop:8,3", "diffint:33,3"]


def _pts(chain, n, rng, k=8, radius=0.4):
    return chain.sample_points(n, rng, k, radius)


# -- right translation --------------------------------------------------------------


@pytest.mark.parametrize("name", ALL)
def test_right_translate_by_identity_is_inclusion(name, rng):
    chain = make_instance(name)
    m, n = min(2, chain.n_max), 1
    x = _pts(chain, m, rng)
    e = chain.identity(n)
    np.testing.assert_allclose(right_translate(chain, n, m, x, e), chain.include(m, n, x), atol=1e-12)


def test_right_translate_matrix_is_matrix_product(gl2, rng):
    a = rng.normal(size=(2, 2))
    b = rng.normal(size=(2, 2))
    out = right_translate(gl2, 1, 1, a.reshape(-1), b.reshape(-1))
    np.testing.assert_allclose(out.reshape(2, 2), a @ b, atol=1e-14)


def test_right_translate_level_order_enforced(loop16, rng):
    x = _pts(loop16, 1, rng, 1)[0]
    with pytest.raises(ContractError):
        right_translate(loop16, 2, 1, x, x)


def _dense_loop_product(chain, x, g, samples=2001):
    # evaluate both loops on a fine grid, multiply, integrate against the basis
    M = chain.M
    th = 2 * np.pi * np.arange(samples) / samples
    basis = [np.ones_like(th)]
    for j in range(1, M + 1):
        basis += [np.cos(j * th), np.sin(j * th)]
    basis = np.array(basis)
    cx, cg = chain.coeffs(x), chain.coeffs(g)
    lx = np.einsum("kp,kab->pab", basis, cx)
    lg = np.einsum("kp,kab->pab", basis, cg)
    prod = lx @ lg
    norms = np.full(len(basis), 2.0 / samples)
    norms[0] = 1.0 / samples
    return chain.flat(np.einsum("kp,pab->kab", basis, prod) * norms[:, None, None])


def test_loop_product_is_truncated_convolution(loop16, rng):
    x, g = _pts(loop16, 3, rng, 2, radius=2.0)
    for a, b in ((x, g), (g, x)):
        ours = loop16.product(3, 2, a, b)
        np.testing.assert_allclose(ours, _dense_loop_product(loop16, a, b), atol=1e-12)


def test_loop_identity_is_constant_loop(loop16):
    s = loop16.samples(loop16.identity())
    np.testing.assert_allclose(s, np.broadcast_to(np.eye(2), s.shape), atol=1e-15)


# -- right-translation laws --------------------------------------------------------


@pytest.mark.parametrize("name", ["so3", "gl:2", "loop:8,3", "diffint:33,3"])
def test_translation_through_inclusion(name, rng):
    chain = make_instance(name)
    k, m, n = 3, 2, 1
    x, g = _pts(chain, k, rng), _pts(chain, n, rng)
    direct = right_translate(chain, n, k, x, g)
    via = right_translate(chain, n, m, chain.include(k, m, x), g)
    np.testing.assert_allclose(direct, via, atol=1e-12)


@pytest.mark.parametrize("name,tol", [("so3", 1e-13), ("gl:2", 1e-12), ("loop:8,3", 1e-3), ("diffint:33,3", 1e-3)])
def test_composition_of_translations(name, tol, rng):
    # R_g o R_h = R_{hg}: (x h) g = x (h g)
    chain = make_instance(name)
    x, h, g = _pts(chain, 3, rng), _pts(chain, 2, rng), _pts(chain, 1, rng)
    lhs = right_translate(chain, 1, 2, right_translate(chain, 2, 3, x, h), g)
    rhs = right_translate(chain, 1, 3, x, right_translate(chain, 1, 2, h, g))
    assert np.max(chain.norm(1, lhs - rhs)) <= tol


# -- right-invariant field ------------------------------------------------------


@pytest.mark.parametrize("name", ALL)
def test_field_at_identity(name, rng):
    chain = make_instance(name)
    v = chain.sample_algebra(1 + chain.field_offset, rng, 4)
    e = np.broadcast_to(chain.identity(1), (4, chain.point_dim))
    np.testing.assert_allclose(field_apply(chain, 1, e, v), chain.embed(v), atol=1e-13)


def test_matrix_field_is_left_multiplication(gl2, rng):
    a, v = rng.normal(size=(2, 2, 2))
    out = field_apply(gl2, 1, a.reshape(-1), v.reshape(-1))
    np.testing.assert_allclose(out.reshape(2, 2), v @ a, atol=1e-14)


def test_so3_field_uses_skew_matrix(so3):
    a = np.eye(3)[[1, 2, 0]]  # a permutation
    w = np.array([0.1, -0.2, 0.3])
    hat = np.array([[0, -0.3, -0.2], [0.3, 0, -0.1], [0.2, 0.1, 0]])
    np.testing.assert_allclose(field_apply(so3, 1, a.reshape(-1), w).reshape(3, 3), hat @ a, atol=1e-15)


def test_abelian_field_ignores_state(abelian3, rng):
    x = rng.normal(size=(5, 3))
    v = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(field_apply(abelian3, 1, x, v), v)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(ALL), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_field_linearity(name, a, b, seed):
    chain = make_instance(name)
    rng = np.random.default_rng(seed)
    x = _pts(chain, 1, rng, 3)
    v, w = chain.sample_algebra(4, rng, 3), chain.sample_algebra(4, rng, 3)
    lhs = field_apply(chain, 1, x, a * v + b * w)
    rhs = a * field_apply(chain, 1, x, v) + b * field_apply(chain, 1, x, w)
    scale_ = 1 + np.max(np.abs(lhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale_


def test_field_object_levels(loop16):
    fld = RightInvariantField(loop16, 2, 3)
    assert fld.control_level == 5
    v = np.zeros(loop16.algebra_dim)
    v[4:8] = 1.0  # first cosine mode
    assert fld.control_norm(v) > loop16.algebra_norm(2, v)


# -- inclusions and norms ---------------------------------------------------------


@pytest.mark.parametrize("name", ALL)
def test_inclusion_functoriality(name, rng):
    chain = make_instance(name)
    x = _pts(chain, 3, rng)
    np.testing.assert_array_equal(chain.include(3, 1, x), chain.include(2, 1, chain.include(3, 2, x)))
    np.testing.assert_array_equal(chain.include(2, 2, x), x)


def test_include_rejects_upward(loop16, rng):
    with pytest.raises(ContractError):
        loop16.include(1, 2, _pts(loop16, 1, rng))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["loop:8,4", "diffint:33,3"]), st.integers(0, 2**31))
def test_norms_increase_with_level(name, seed):
    chain = make_instance(name)
    w = chain.sample_tangent(1, np.random.default_rng(seed), 4)
    for n in range(1, chain.n_max):
        assert np.all(chain.norm(n + 1, w) >= chain.norm(n, w) * (1 - 1e-14))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(ALL), st.floats(-4, 4).filter(lambda s: s == 0 or abs(s) > 1e-100), st.integers(0, 2**31))
def test_norm_homogeneous(name, s, seed):
    chain = make_instance(name)
    w = chain.sample_tangent(1, np.random.default_rng(seed), 3)
    np.testing.assert_allclose(chain.norm(1, s * w), abs(s) * chain.norm(1, w), rtol=1e-12, atol=1e-300)


# -- validate_chain ---------------------------------------------------------------


@pytest.mark.parametrize("name", EXACT)
def test_validate_exact_chains(name):
    rep = validate_chain(make_instance(name))
    assert rep.passed
    for check in rep.checks:
        if check.name != "inclusion_norm":
            assert check.violation <= 1e-12, check.line()


def test_validate_loop_reports_truncation(loop16):
    rep = validate_chain(loop16)
    assert rep.passed
    assoc = rep["associativity"]
    assert 0 < assoc.detail["abs_violation"] <= assoc.detail["truncation_bound"]
    c = rep["inclusion_norm"].detail
    assert np.isfinite(c["C"]) and abs(c["C_doubled"] - c["C"]) <= 0.1 * c["C"]


def test_validate_diffeo_chain():
    rep = validate_chain(make_instance("diffint:129,3"))
    assert rep.passed, [c.line() for c in rep.checks]


def test_corrupted_product_flagged(so3):
    rep = validate_chain(corrupt(so3, 1e-3))
    assert not rep.passed
    assert rep["identity_law"].violation > 1e-4
    assert not rep["identity_law"].passed


def test_validate_is_deterministic(loop16):
    a = validate_chain(loop16, seed=3).to_dict()
    b = validate_chain(loop16, seed=3).to_dict()
    assert a == b


def test_report_lines_and_lookup(so3):
    rep = validate_chain(so3, sample_count=4)
    assert rep["associativity"].line().startswith("PASS associativity")
    with pytest.raises(KeyError):
        rep["nope"]
    assert rep.to_dict()["passed"] is True
