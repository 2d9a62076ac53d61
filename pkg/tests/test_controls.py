import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ilb_evolve import (
    ContractError,
    ControlSignal,
    choose_subdivision_count,
    l1_norm,
    load_control,
    save_control,
    scale,
    subdivide,
    time_reverse_negate,
)

# -- strategies ------------------------------------------------------------------


@st.composite
def step_controls(draw, dim=2, max_steps=6):
    k = draw(st.integers(1, max_steps))
    inner = draw(
        st.lists(st.floats(0.01, 0.99), min_size=k - 1, max_size=k - 1, unique=True)
    )
    bp = np.concatenate([[0.0], np.sort(inner), [1.0]])
    if np.any(np.diff(bp) < 1e-3):
        bp = np.linspace(0.0, 1.0, k + 1)
    vals = draw(
        st.lists(
            st.lists(st.floats(-5, 5, allow_nan=False), min_size=dim, max_size=dim),
            min_size=k,
            max_size=k,
        )
    )
    return ControlSignal.step(bp, vals)


singular_controls = st.builds(
    lambda c, d: ControlSignal.inverse_sqrt(d, coeff=c),
    st.floats(0.1, 3.0),
    st.lists(st.floats(-2, 2), min_size=2, max_size=2).filter(lambda d: any(abs(x) > 1e-3 for x in d)),
)


# -- construction ----------------------------------------------------------------


@pytest.mark.parametrize(
    "bp, vals",
    [
        ([0.0, 0.5, 0.4, 1.0], [[1.0], [2.0], [3.0]]),  # not increasing
        ([0.1, 1.0], [[1.0]]),  # does not start at 0
        ([0.0, 0.9], [[1.0]]),  # does not end at 1
        ([0.0, 1.0], [[np.inf]]),
    ],
)
def test_invalid_step_controls_rejected(bp, vals):
    with pytest.raises(ContractError):
        ControlSignal.step(bp, vals)


def test_values_must_match_breakpoints():
    with pytest.raises((ContractError, ValueError)):
        ControlSignal.step([0.0, 0.5, 1.0], [[1.0, 2.0, 3.0]])


def test_nonintegrable_singular_rejected():
    with pytest.raises(ContractError):
        ControlSignal.inverse_sqrt([1.0], offset=0.0, rate=0.0)
    with pytest.raises(ContractError):
        ControlSignal.inverse_sqrt([1.0], offset=-0.5)


def test_right_continuous_representative():
    c = ControlSignal.step([0.0, 0.5, 1.0], [[1.0], [2.0]])
    assert c(0.5)[0] == 2.0
    assert c(0.4999)[0] == 1.0
    assert c(1.0)[0] == 2.0


# -- l1 norm ----------------------------------------------------------------------


def test_l1_constant():
    assert l1_norm(ControlSignal.constant([0.6, 0.8])) == pytest.approx(1.0, abs=1e-15)


def test_l1_two_steps():
    c = ControlSignal.step([0.0, 0.5, 1.0], [[1.0, 0.0], [0.0, 3.0]])
    assert l1_norm(c) == pytest.approx(2.0, abs=1e-15)


def test_l1_inverse_sqrt():
    assert l1_norm(ControlSignal.inverse_sqrt([0.6, 0.8])) == pytest.approx(2.0, abs=1e-15)


def test_l1_uses_supplied_norm():
    c = ControlSignal.constant([3.0, -4.0])
    assert l1_norm(c, lambda v: np.abs(v).sum(axis=-1)) == pytest.approx(7.0)


def test_singular_cumulative_mass_matches_quadrature():
    c = ControlSignal.inverse_sqrt([2.0], offset=0.3, rate=-0.2)
    for t in (0.1, 0.5, 1.0):
        ref, _ = quad(lambda s: 2.0 / math.sqrt(0.3 - 0.2 * s), 0.0, t)
        assert c.cumulative_mass(t) == pytest.approx(ref, rel=1e-13)


# -- subdivide --------------------------------------------------------------------


def test_subdivide_constant():
    v = np.array([3.0, 4.0])
    pieces = subdivide(ControlSignal.constant(v), 2)
    assert len(pieces) == 2
    for p in pieces:
        np.testing.assert_allclose(p(np.linspace(0, 1, 7)), np.tile(v / 2, (7, 1)))
        assert l1_norm(p) == pytest.approx(2.5)


def test_subdivide_breakpoint_aligned():
    v1, v2 = [1.0, 2.0], [-3.0, 0.5]
    p0, p1 = subdivide(ControlSignal.step([0, 0.5, 1], [v1, v2]), 2)
    assert len(p0.values) == 1 and len(p1.values) == 1
    np.testing.assert_array_equal(p0.values[0], np.array(v1) / 2)
    np.testing.assert_array_equal(p1.values[0], np.array(v2) / 2)


def test_subdivide_unaligned_breakpoint():
    v1, v2 = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    c = ControlSignal.step([0, 0.25, 1], [v1, v2])
    p0, p1 = subdivide(c, 2)
    np.testing.assert_allclose(p0.breakpoints, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(p0.values, [v1 / 2, v2 / 2])
    np.testing.assert_allclose(p1.values, [v2 / 2])
    # change of variables, integrated numerically on both sides
    for k, p in enumerate((p0, p1)):
        for j in range(2):
            lhs, _ = quad(lambda t: p(t)[j], 0, 1, points=[0.5], limit=200)
            rhs, _ = quad(lambda s: c(s)[j], k / 2, (k + 1) / 2, points=[0.25], limit=200)
            assert lhs == pytest.approx(rhs, abs=1e-12)


def test_subdivide_singular_pieces_follow_definition():
    c = ControlSignal.inverse_sqrt([1.0, -2.0], coeff=1.5)
    n = 5
    for k, p in enumerate(subdivide(c, n)):
        t = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(p(t), c((k + t) / n) / n, rtol=1e-14)
    assert sum(l1_norm(p) for p in subdivide(c, n)) == pytest.approx(l1_norm(c), rel=1e-14)


def test_subdivide_rejects_zero():
    with pytest.raises(ContractError):
        subdivide(ControlSignal.constant([1.0]), 0)


@settings(max_examples=60, deadline=None)
@given(step_controls(), st.integers(1, 40))
def test_piece_masses_sum_to_total(c, n):
    total = l1_norm(c)
    pieces = sum(l1_norm(p) for p in subdivide(c, n))
    assert pieces == pytest.approx(total, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(
        c.piece_masses(n), [l1_norm(p) for p in subdivide(c, n)], rtol=1e-12, atol=1e-12
    )


@settings(max_examples=40, deadline=None)
@given(singular_controls, st.integers(1, 64))
def test_singular_piece_masses_sum_to_total(c, n):
    assert sum(l1_norm(p) for p in subdivide(c, n)) == pytest.approx(l1_norm(c), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(step_controls(), st.integers(1, 12), st.floats(0.0, 1.0))
def test_pieces_are_rescaled_restrictions(c, n, tau):
    for k, p in enumerate(subdivide(c, n)):
        s = (k + tau) / n
        # stay off breakpoints, where the right-continuous choice may differ by rounding
        if np.min(np.abs(c.breakpoints - s)) < 1e-9:
            continue
        np.testing.assert_allclose(p(tau), c(s) / n, rtol=1e-12, atol=1e-14)


# -- choose_subdivision_count ---------------------------------------------------------


def test_choose_count_constant():
    assert choose_subdivision_count(ControlSignal.constant([1.0]), 0.3) == 4


def test_choose_count_small_mass():
    c = ControlSignal.step([0, 0.3, 1], [[0.1], [-0.2]])
    assert choose_subdivision_count(c, l1_norm(c)) == 1
    assert choose_subdivision_count(c, 10.0) == 1


def _brute_force_count(dens, bp, eps):
    # piece mass computed from interval overlaps, independent of the library
    for n in range(1, 10_000):
        worst = 0.0
        for k in range(n):
            lo, hi = k / n, (k + 1) / n
            mass = sum(
                d * max(0.0, min(hi, b) - max(lo, a)) for d, a, b in zip(dens, bp[:-1], bp[1:])
            )
            worst = max(worst, mass)
        if worst <= eps + 1e-15:
            return n
    raise AssertionError("no admissible N")


def test_choose_count_brute_force_scan():
    c = ControlSignal.step([0, 0.25, 1], [[4.0], [0.0]])
    expected = _brute_force_count([4.0, 0.0], [0, 0.25, 1], 0.3)
    assert expected == 14
    assert choose_subdivision_count(c, 0.3) == expected


def test_choose_count_non_monotone_predicate():
    # a narrow spike: admissibility flips as piece edges move across it
    c = ControlSignal.step([0, 0.3, 0.34, 1], [[0.0], [10.0], [0.0]])
    for eps in (0.25, 0.3, 0.35):
        assert choose_subdivision_count(c, eps) == _brute_force_count([0, 10, 0], [0, 0.3, 0.34, 1], eps)


def test_choose_count_infinite_eps():
    assert choose_subdivision_count(ControlSignal.constant([5.0]), math.inf) == 1


def test_choose_count_rejects_nonpositive_eps():
    with pytest.raises(ContractError):
        choose_subdivision_count(ControlSignal.constant([1.0]), 0.0)


@settings(max_examples=40, deadline=None)
@given(step_controls(dim=1), st.floats(0.05, 2.0), st.floats(0.1, 1.0))
def test_choose_count_monotone_in_eps(c, eps, shrink):
    if l1_norm(c) / (eps * shrink) > 2000:
        return
    assert choose_subdivision_count(c, eps * shrink) >= choose_subdivision_count(c, eps)


@settings(max_examples=40, deadline=None)
@given(step_controls(dim=1), st.floats(0.05, 2.0))
def test_choose_count_is_minimal_and_admissible(c, eps):
    if l1_norm(c) / eps > 500:
        return
    n = choose_subdivision_count(c, eps)
    assert max(c.piece_masses(n)) <= eps
    assert all(max(c.piece_masses(m)) > eps for m in range(1, n))


# -- scale and time reversal ------------------------------------------------------


def test_scale_zero():
    c = ControlSignal.step([0, 0.5, 1], [[1.0, 2.0], [3.0, 4.0]])
    z = scale(c, 0.0)
    assert l1_norm(z) == 0.0
    assert z.is_zero()


def test_scale_two_doubles_norm():
    c = ControlSignal.step([0, 0.5, 1], [[1.0, 2.0], [3.0, 4.0]])
    assert l1_norm(scale(c, 2)) == pytest.approx(2 * l1_norm(c))


def test_time_reverse_negate_two_steps():
    v1, v2 = [1.0, 2.0], [3.0, -4.0]
    r = time_reverse_negate(ControlSignal.step([0, 0.5, 1], [v1, v2]))
    np.testing.assert_array_equal(r.breakpoints, [0, 0.5, 1])
    np.testing.assert_array_equal(r.values, [[-3.0, 4.0], [-1.0, -2.0]])


def test_time_reverse_singular():
    c = ControlSignal.inverse_sqrt([1.0, 2.0])
    r = c.time_reverse_negate()
    t = np.array([0.0, 0.3, 0.9])
    np.testing.assert_allclose(r(t), -c(1 - t), rtol=1e-14)
    assert l1_norm(r) == pytest.approx(2 * math.sqrt(5))


@settings(max_examples=60, deadline=None)
@given(step_controls(), st.floats(-3, 3))
def test_scale_homogeneity(c, s):
    assert l1_norm(scale(c, s)) == pytest.approx(abs(s) * l1_norm(c), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(step_controls())
def test_time_reverse_is_involution(c):
    back = time_reverse_negate(time_reverse_negate(c))
    np.testing.assert_allclose(back.breakpoints, c.breakpoints, atol=1e-15)
    np.testing.assert_array_equal(back.values, c.values)


@settings(max_examples=30, deadline=None)
@given(singular_controls)
def test_singular_time_reverse_is_involution(c):
    back = c.time_reverse_negate().time_reverse_negate()
    t = np.linspace(0.05, 1.0, 9)
    np.testing.assert_allclose(back(t), c(t), rtol=1e-14)


# -- JSON -------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(step_controls(dim=3))
def test_json_round_trip_is_lossless(c):
    back = ControlSignal.from_dict(json.loads(json.dumps(c.to_dict())))
    np.testing.assert_array_equal(back.breakpoints, c.breakpoints)
    np.testing.assert_array_equal(back.values, c.values)


def test_file_round_trip(tmp_path):
    c = ControlSignal.step([0, 1 / 3, 1], [[0.1, 0.2], [1e-300, -7.25]])
    path = tmp_path / "c.json"
    save_control(c, path)
    back = load_control(path)
    np.testing.assert_array_equal(back.values, c.values)
    np.testing.assert_array_equal(back.breakpoints, c.breakpoints)
    data = json.loads(path.read_text())
    assert data["kind"] == "step" and data["algebra_dim"] == 2


def test_singular_json_format():
    data = {"kind": "singular", "generator": "inverse_sqrt", "direction": [0.0, 1.0]}
    c = ControlSignal.from_dict(data)
    assert c.algebra_dim == 2
    assert c.to_dict()["direction"] == [0.0, 1.0]
    assert ControlSignal.from_dict(c.to_dict()).to_dict() == c.to_dict()


@pytest.mark.parametrize(
    "data",
    [
        {"kind": "spline"},
        {"kind": "singular", "generator": "log", "direction": [1.0]},
        {"kind": "step", "breakpoints": [0, 1], "values": [[1, 2]], "algebra_dim": 3},
    ],
)
def test_bad_json_rejected(data):
    with pytest.raises(ContractError):
        ControlSignal.from_dict(data)
