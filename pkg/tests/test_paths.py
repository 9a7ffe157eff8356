import numpy as np
import pytest

from fiberpath.paths import (
    BrownianPath,
    PathGrid,
    refine_midpoints,
    sample_increments,
    sample_path,
)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def test_grid_times_and_dt():
    grid = PathGrid(2.0, 8)
    assert grid.dt == 0.25
    assert np.allclose(grid.times, np.arange(9) * 0.25, atol=0.0)
    assert grid.times[0] == 0.0 and grid.times[-1] == 2.0


def test_grid_index_of_boundaries_and_rejection():
    grid = PathGrid(2.0, 8)
    assert grid.index_of(0.0) == 0
    assert grid.index_of(0.5) == 2
    assert grid.index_of(2.0) == 8
    with pytest.raises(ValueError):
        grid.index_of(0.3)  # not a multiple of dt
    with pytest.raises(ValueError):
        grid.index_of(2.25)  # beyond the horizon


def test_grid_validation():
    with pytest.raises(ValueError):
        PathGrid(0.0, 4)
    with pytest.raises(ValueError):
        PathGrid(1.0, 0)


# ---------------------------------------------------------------------------
# path container
# ---------------------------------------------------------------------------


def test_positions_are_cumulative_sums_from_origin():
    grid = PathGrid(1.0, 4)
    inc = np.arange(12.0).reshape(4, 3)
    path = BrownianPath(grid, inc)
    assert path.d == 3
    assert np.array_equal(path.positions[0], np.zeros(3))
    assert np.array_equal(path.positions[1:], np.cumsum(inc, axis=0))


def test_path_shape_validation():
    grid = PathGrid(1.0, 4)
    with pytest.raises(ValueError):
        BrownianPath(grid, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        BrownianPath(grid, np.zeros(4))


def test_antithetic_is_exact_sign_flip():
    path = sample_path(PathGrid(1.0, 16), stream_id=3, seed=7)
    anti = path.antithetic()
    assert np.array_equal(anti.increments, -path.increments)
    assert np.array_equal(anti.antithetic().increments, path.increments)


# ---------------------------------------------------------------------------
# sampling: determinism and stream independence
# ---------------------------------------------------------------------------


def test_same_stream_and_seed_reproduce_bitwise():
    grid = PathGrid(2.0, 32)
    a = sample_path(grid, stream_id=11, seed=123)
    b = sample_path(grid, stream_id=11, seed=123)
    assert np.array_equal(a.increments, b.increments)


def test_different_streams_and_seeds_differ():
    grid = PathGrid(2.0, 32)
    base = sample_path(grid, stream_id=11, seed=123)
    assert not np.array_equal(sample_path(grid, 12, 123).increments, base.increments)
    assert not np.array_equal(sample_path(grid, 11, 124).increments, base.increments)


def test_batched_sampling_matches_single_paths_exactly():
    grid = PathGrid(1.5, 24)
    ids = [0, 5, 17, 2, 40]
    stacked = sample_increments(grid, ids, seed=99)
    assert stacked.shape == (5, 24, 3)
    for row, sid in enumerate(ids):
        single = sample_path(grid, sid, seed=99)
        assert np.array_equal(stacked[row], single.increments)


def test_stream_id_independent_of_batch_composition():
    grid = PathGrid(1.0, 8)
    lone = sample_increments(grid, [7], seed=5)[0]
    crowded = sample_increments(grid, [3, 7, 1], seed=5)[1]
    assert np.array_equal(lone, crowded)


def test_negative_seed_or_stream_rejected():
    grid = PathGrid(1.0, 8)
    with pytest.raises(ValueError):
        sample_path(grid, stream_id=-1, seed=0)
    with pytest.raises(ValueError):
        sample_path(grid, stream_id=0, seed=-3)


def test_dimension_parameter():
    grid = PathGrid(1.0, 8)
    assert sample_path(grid, 0, 0, d=2).increments.shape == (8, 2)


# ---------------------------------------------------------------------------
# distributional checks (seeded, 3 sigma)
# ---------------------------------------------------------------------------


def test_increment_moments():
    grid = PathGrid(2.0, 16)  # dt = 0.125
    inc = sample_increments(grid, range(4000), seed=31415)
    samples = inc.reshape(-1, 3)  # each entry ~ N(0, dt)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    var = samples.var(axis=0)
    dt = grid.dt
    # mean: se = sqrt(dt/n); variance of the sample variance: 2 dt^2 / n
    assert np.all(np.abs(mean) < 3.0 * np.sqrt(dt / n))
    assert np.all(np.abs(var - dt) < 3.0 * np.sqrt(2.0 * dt**2 / n))


def test_step_and_component_independence():
    grid = PathGrid(1.0, 8)
    inc = sample_increments(grid, range(6000), seed=271)
    flat = inc.reshape(inc.shape[0], -1)  # 24 jointly independent N(0, dt)
    corr = np.corrcoef(flat, rowvar=False)
    off = corr - np.diag(np.diag(corr))
    # off-diagonal sample correlations are ~N(0, 1/n)
    assert np.max(np.abs(off)) < 4.0 / np.sqrt(inc.shape[0])


def test_endpoint_variance_matches_time():
    grid = PathGrid(2.0, 64)
    inc = sample_increments(grid, range(4000), seed=77)
    ends = inc.sum(axis=1)  # b(t_end) ~ N(0, t_end I)
    var = ends.var(axis=0)
    n = ends.shape[0]
    assert np.all(np.abs(var - 2.0) < 3.0 * np.sqrt(2.0 * 4.0 / n))


def test_quadratic_variation_concentrates():
    grid = PathGrid(1.0, 512)
    inc = sample_increments(grid, range(200), seed=13)
    qv = (inc**2).sum(axis=(1, 2))  # -> t * d = 3 as n_steps grows
    # each of 512*3 terms has mean dt, var 2 dt^2
    se = np.sqrt(2.0 * grid.dt**2 * 512 * 3)
    assert abs(qv.mean() - 3.0) < 3.0 * se / np.sqrt(200) + 1e-12


# ---------------------------------------------------------------------------
# bridge refinement
# ---------------------------------------------------------------------------


def test_refinement_preserves_coarse_path_exactly():
    coarse = sample_path(PathGrid(2.0, 16), stream_id=4, seed=55)
    fine = refine_midpoints(coarse, seed=808)
    assert fine.grid.n_steps == 32
    assert fine.grid.t_end == 2.0
    # coarse increments are recovered by pair sums, bitwise
    pair_sums = fine.increments[0::2] + fine.increments[1::2]
    assert np.allclose(pair_sums, coarse.increments, rtol=0.0, atol=1e-16)
    assert np.allclose(fine.positions[0::2], coarse.positions, rtol=0.0, atol=1e-15)


def test_refinement_is_deterministic_in_seed():
    coarse = sample_path(PathGrid(1.0, 8), stream_id=0, seed=1)
    a = refine_midpoints(coarse, seed=2)
    b = refine_midpoints(coarse, seed=2)
    c = refine_midpoints(coarse, seed=3)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_refinement_midpoint_distribution():
    # conditional midpoint: b(dt/2) - (b(0) + b(dt))/2 ~ N(0, dt/4)
    grid = PathGrid(1.0, 1)
    rng_paths = [sample_path(grid, i, seed=9) for i in range(3000)]
    devs = []
    for i, p in enumerate(rng_paths):
        fine = refine_midpoints(p, seed=10_000 + i)
        devs.append(fine.positions[1] - 0.5 * (p.positions[0] + p.positions[1]))
    devs = np.asarray(devs)
    n = devs.shape[0]
    var = devs.var(axis=0)
    assert np.all(np.abs(devs.mean(axis=0)) < 3.0 * np.sqrt(0.25 / n))
    assert np.all(np.abs(var - 0.25) < 3.0 * np.sqrt(2.0 * 0.25**2 / n))
