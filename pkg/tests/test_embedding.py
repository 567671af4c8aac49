import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchrl.embedding import (
    Gallery,
    LinearHead,
    as_vector,
    embed,
    euclidean_distance,
    l2_normalize,
    normalize_rows,
)
from sketchrl.errors import InputError

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def test_as_vector_rejects_bad_shapes():
    with pytest.raises(InputError):
        as_vector([[1.0, 2.0]])
    with pytest.raises(InputError):
        as_vector([])
    with pytest.raises(InputError):
        as_vector([1.0, np.nan])


def test_l2_normalize_unit_norm():
    v = l2_normalize([3.0, 4.0])
    assert np.allclose(v, [0.6, 0.8])
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12


def test_l2_normalize_degenerate_fallback():
    out, flag = l2_normalize(np.zeros(5), with_flag=True)
    assert flag is True
    assert out[0] == 1.0 and np.all(out[1:] == 0.0)
    out, flag = l2_normalize([1e-15, 0.0], with_flag=True)
    assert flag is True


@given(st.lists(finite_floats, min_size=1, max_size=16))
def test_l2_normalize_property(values):
    v = np.asarray(values)
    if np.linalg.norm(v) < 1e-6:
        return
    out = l2_normalize(v)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-9
    # direction preserved
    assert np.dot(out, v) >= 0.0


def test_normalize_rows_matches_single_vector_path():
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((20, 7))
    rows[3] = 0.0  # degenerate row
    batch = normalize_rows(rows)
    for i in range(rows.shape[0]):
        assert np.array_equal(batch[i], l2_normalize(rows[i]))


def test_euclidean_distance():
    assert euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0
    with pytest.raises(InputError):
        euclidean_distance([1.0], [1.0, 2.0])


def test_linear_head_matches_loop_oracle():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    x = rng.standard_normal(6)
    head = LinearHead(w, b)
    got = head.linear(x)
    want = np.array([sum(w[i, j] * x[j] for j in range(6)) + b[i] for i in range(4)])
    assert np.allclose(got, want, atol=1e-12)


def test_linear_head_validation():
    with pytest.raises(InputError):
        LinearHead(np.ones((2, 2)), np.ones(3))
    with pytest.raises(InputError):
        LinearHead(np.array([[np.inf, 0.0]]), np.zeros(1))
    head = LinearHead(np.ones((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        head.weight[0, 0] = 5.0  # frozen parameters


def test_embed_is_unit_norm():
    rng = np.random.default_rng(2)
    head = LinearHead(rng.standard_normal((3, 5)), rng.standard_normal(3))
    out = embed(head, rng.standard_normal(5))
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12


def _unit_rows(rng, m, d):
    return normalize_rows(rng.standard_normal((m, d)))


def test_gallery_invariants():
    rng = np.random.default_rng(3)
    rows = _unit_rows(rng, 5, 4)
    ids = tuple(f"p{i}" for i in range(5))
    g = Gallery(ids, rows)
    assert g.size == 5 and g.dim == 4
    assert g.index_of("p3") == 3
    with pytest.raises(InputError):
        g.index_of("nope")
    with pytest.raises(ValueError):
        g.embeddings[0, 0] = 2.0

    with pytest.raises(InputError):
        Gallery(("a", "a"), _unit_rows(rng, 2, 4))  # duplicate ids
    with pytest.raises(InputError):
        Gallery(("a",), _unit_rows(rng, 1, 4))  # M < 2
    bad = _unit_rows(rng, 3, 4)
    bad = bad * 1.5
    with pytest.raises(InputError) as exc:
        Gallery(("a", "b", "c"), bad)
    assert "row 0" in str(exc.value)  # names the first offending row
