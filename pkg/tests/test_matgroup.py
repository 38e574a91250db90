import math

import numpy as np
import pytest

from cocyclelab import (
    ChainState,
    InvalidInputError,
    NotInvertibleError,
    act,
    cocycle,
    derive_stream,
    make_group_element,
    proj_distance,
    projective_point,
)
from cocyclelab.matgroup import op_norm

SQRT2 = math.sqrt(2.0)


def test_op_norm_nilpotent():
    # ||[[0,3],[0,0]]|| = 3: power iteration must handle a defective matrix
    assert op_norm(np.array([[0.0, 3.0], [0.0, 0.0]])) == pytest.approx(3.0, abs=1e-12)


def test_op_norm_matches_numpy_on_random_matrices():
    rng = derive_stream(71, 0)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        a = rng.standard_normal((d, d))
        assert op_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-10, abs=1e-12)


def test_make_group_element_inverse_and_norms():
    g = make_group_element(np.array([[2.0, 1.0], [0.0, 0.5]]))
    assert np.allclose(g.entries @ g.inverse, np.eye(2), atol=1e-12)
    assert g.norm_bound >= max(op_norm(g.entries), op_norm(g.inverse)) - 1e-12
    assert g.d == 2


def test_make_group_element_rejects_singular():
    with pytest.raises(NotInvertibleError):
        make_group_element(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(InvalidInputError):
        make_group_element(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))


def test_group_element_arrays_are_read_only():
    g = make_group_element(np.eye(2))
    with pytest.raises(ValueError):
        g.entries[0, 0] = 5.0


def test_projective_point_normalizes_and_identifies_signs():
    # representatives keep their sign; same_point identifies +-v
    p = projective_point(np.array([-3.0, 0.0]))
    q = projective_point(np.array([6.0, 0.0]))
    assert p.same_point(q)
    assert np.linalg.norm(p.rep) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(InvalidInputError):
        projective_point(np.zeros(2))


def test_act_frozen_example():
    # diag(4,1) applied to (1,1)/sqrt2 gives (4,1)/sqrt17
    g = make_group_element(np.diag([4.0, 1.0]))
    v = projective_point(np.array([1.0, 1.0]) / SQRT2)
    moved = act(g, v)
    assert moved.rep[0] == pytest.approx(0.9701425001453319, abs=1e-15)
    assert moved.rep[1] == pytest.approx(0.2425356250363330, abs=1e-15)


def test_cocycle_frozen_example():
    g = make_group_element(np.diag([4.0, 1.0]))
    v = projective_point(np.array([1.0, 1.0]) / SQRT2)
    # ||diag(4,1) (1,1)/sqrt2|| = sqrt(17/2)
    assert cocycle(g, v) == pytest.approx(0.5 * math.log(17.0 / 2.0), abs=1e-14)


def test_cocycle_additivity_along_products():
    """rho(gh, v) = rho(g, h.v) + rho(h, v) for random group pairs."""
    rng = derive_stream(72, 0)
    for _ in range(100):
        a = rng.standard_normal((2, 2))
        b = rng.standard_normal((2, 2))
        if abs(np.linalg.det(a)) < 1e-3 or abs(np.linalg.det(b)) < 1e-3:
            continue
        g, h = make_group_element(a), make_group_element(b)
        gh = make_group_element(a @ b)
        v = projective_point(rng.standard_normal(2))
        lhs = cocycle(gh, v)
        rhs = cocycle(g, act(h, v)) + cocycle(h, v)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_act_is_a_group_action():
    rng = derive_stream(73, 0)
    for _ in range(100):
        a = rng.standard_normal((3, 3))
        b = rng.standard_normal((3, 3))
        if abs(np.linalg.det(a)) < 1e-3 or abs(np.linalg.det(b)) < 1e-3:
            continue
        g, h = make_group_element(a), make_group_element(b)
        v = projective_point(rng.standard_normal(3))
        left = act(make_group_element(a @ b), v)
        right = act(g, act(h, v))
        assert left.same_point(right)


def test_proj_distance_frozen_and_bounds():
    e1 = projective_point(np.array([1.0, 0.0]))
    diag = projective_point(np.array([1.0, 1.0]))
    assert proj_distance(e1, diag) == pytest.approx(1.0 / SQRT2, abs=1e-15)
    assert proj_distance(e1, e1) == 0.0
    e2 = projective_point(np.array([0.0, 1.0]))
    assert proj_distance(e1, e2) == pytest.approx(1.0, abs=1e-15)
    # sign of the representative cannot matter
    assert proj_distance(projective_point(np.array([-1.0, -1.0])), e1) == pytest.approx(
        1.0 / SQRT2, abs=1e-15
    )


def test_proj_distance_symmetric_and_in_unit_interval():
    rng = derive_stream(74, 0)
    for _ in range(200):
        u = projective_point(rng.standard_normal(2))
        v = projective_point(rng.standard_normal(2))
        duv = proj_distance(u, v)
        assert 0.0 <= duv <= 1.0
        assert duv == pytest.approx(proj_distance(v, u), abs=1e-15)


def test_chain_state_holds_components():
    g = make_group_element(np.diag([2.0, 1.0]))
    v = projective_point(np.array([0.0, 1.0]))
    state = ChainState(g, v)
    assert state.g is g and state.dir is v
