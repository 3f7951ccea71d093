import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.rng import chunk_slices, make_rng, ordered_map, set_workers, uniform_disc


@given(st.integers(min_value=0, max_value=2 ** 64 - 1), st.integers(min_value=0, max_value=1000))
def test_streams_are_reproducible_and_distinct(seed, label):
    a = make_rng(seed, label).random(4)
    assert np.array_equal(a, make_rng(seed, label).random(4))
    assert not np.array_equal(a, make_rng(seed, label + 1).random(4))


@given(st.integers(min_value=0, max_value=500), st.integers(min_value=1, max_value=64))
def test_chunks_cover_in_order(n, chunk):
    idx = np.concatenate([np.arange(n)[s] for s in chunk_slices(n, chunk)]) if n else np.zeros(0)
    assert np.array_equal(idx, np.arange(n))


def test_ordered_map_independent_of_workers():
    items = list(range(20))
    f = lambda i: make_rng(5, i).random()  # noqa: E731
    assert ordered_map(f, items, workers=1) == ordered_map(f, items, workers=4)
    with pytest.raises(ValueError):
        set_workers(0)


def test_uniform_disc_radius():
    z = uniform_disc(make_rng(0), 20_000, 2.0)
    assert np.all(np.abs(z) < 2.0)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(2.0, rel=0.03)
