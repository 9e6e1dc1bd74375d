import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from degsde import rng


@given(st.integers(0, 2**63), st.integers(0, 10_000), st.integers(1, 5))
def test_chunked_draws_equal_one_draw(seed, index, chunks):
    whole = rng.stream(seed, index).standard_normal((10 * chunks, 2))
    g = rng.stream(seed, index)
    parts = [rng.draw_normals([g], 10, 2)[0] for _ in range(chunks)]
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_streams_depend_on_index_seed_and_purpose():
    a = rng.stream(1, 0).standard_normal(4)
    assert not np.array_equal(a, rng.stream(1, 1).standard_normal(4))
    assert not np.array_equal(a, rng.stream(2, 0).standard_normal(4))
    assert not np.array_equal(a, rng.stream(1, 0, rng.PERMUTATIONS).standard_normal(4))
    np.testing.assert_array_equal(a, rng.stream(1, 0).standard_normal(4))


def test_path_streams_slice_is_position_independent():
    full = rng.draw_normals(rng.path_streams(5, 0, 6), 3, 2)
    tail = rng.draw_normals(rng.path_streams(5, 4, 6), 3, 2)
    np.testing.assert_array_equal(full[4:], tail)
