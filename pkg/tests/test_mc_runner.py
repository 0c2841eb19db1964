import numpy as np
import pytest

from core.exceptions import ConfigurationError
from services.mc_runner import (
    MonteCarloRunner,
    block_normals,
    block_ranges,
    empirical_quantile,
    replication_rng,
)


def normal_block(seed, start, stop, n):
    return block_normals(seed, start, stop, n)


def test_replication_streams_are_independent_of_blocking():
    a = block_normals(11, 0, 10, 5)
    b = np.concatenate([block_normals(11, 0, 3, 5), block_normals(11, 3, 10, 5)])
    np.testing.assert_array_equal(a, b)


def test_streams_differ_across_replications_and_seeds():
    first = replication_rng(1, 0).standard_normal(4)
    assert not np.array_equal(first, replication_rng(1, 1).standard_normal(4))
    assert not np.array_equal(first, replication_rng(2, 0).standard_normal(4))


def test_block_ranges_cover_everything():
    assert block_ranges(10, 4) == [(0, 4), (4, 8), (8, 10)]


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_bitwise_determinism_across_workers(workers):
    reference = MonteCarloRunner(workers=1, block_size=7).run(normal_block, 50, seed=5, n=3)
    result = MonteCarloRunner(workers=workers, block_size=7).run(normal_block, 50, seed=5, n=3)
    np.testing.assert_array_equal(result, reference)


def test_seed_is_required():
    with pytest.raises(ConfigurationError):
        MonteCarloRunner().run(normal_block, 10, seed=None, n=2)
    with pytest.raises(ConfigurationError):
        MonteCarloRunner().run(normal_block, 10, seed=-1, n=2)


def test_nearest_rank_quantile():
    values = np.arange(1.0, 101.0)
    assert empirical_quantile(values, 0.95) == 95.0
    assert empirical_quantile(values, 0.951) == 96.0
