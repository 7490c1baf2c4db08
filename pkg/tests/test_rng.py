import numpy as np
from hypothesis import given, strategies as st

from nlmv import rng


@given(st.integers(1, 30_000))
def test_block_sizes_cover_paths(paths):
    sizes = rng.block_sizes(paths)
    assert sum(sizes) == paths
    assert all(0 < s <= rng.BLOCK_SIZE for s in sizes)


def test_substreams_independent_of_workers():
    def fn(b, n):
        return rng.brownian_increments(5, rng.WEALTH, b, n, 3, 2, 0.1)

    one = np.concatenate(rng.map_blocks(fn, 20_000, workers=1))
    many = np.concatenate(rng.map_blocks(fn, 20_000, workers=4))
    np.testing.assert_array_equal(one, many)


def test_streams_differ():
    a = rng.block_generator(1, rng.WEALTH, 0).standard_normal(4)
    b = rng.block_generator(1, rng.FACTOR_PATHS, 0).standard_normal(4)
    c = rng.block_generator(1, rng.WEALTH, 1).standard_normal(4)
    assert not np.allclose(a, b) and not np.allclose(a, c)


def test_full_u64_seed():
    g = rng.block_generator(2 ** 64 - 1, 1, 0)
    assert np.isfinite(g.standard_normal())


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("NLMV_THREADS", "3")
    assert rng.worker_count() == 3
    assert rng.worker_count(1) == 1
    monkeypatch.delenv("NLMV_THREADS")
    assert rng.worker_count() == 1
