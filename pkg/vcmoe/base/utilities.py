import itertools

import numpy as np
from joblib import Parallel, delayed

from vcmoe.base.errors import LengthMismatch, OutOfDomain, UsageError

# RNG stream ids; each stochastic stage draws from default_rng([seed, stream, index])
INIT_STREAM = 0
BOOTSTRAP_VARIANCE_STREAM = 1
BOOTSTRAP_SUP_STREAM = 2
SIMULATION_STREAM = 3
STUDY_STREAM = 4


def stream_rng(seed, stream, index=0):
    """Independent generator for work item `index` of a stage; independent of scheduling."""
    return np.random.default_rng([int(seed) % (1 << 63), stream, index])


def check_grid(grid):
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size < 2:
        raise UsageError("a grid needs at least 2 nodes")
    if np.any(grid < 0) or np.any(grid > 1):
        raise OutOfDomain(float(grid[(grid < 0) | (grid > 1)][0]))
    if np.any(np.diff(grid) <= 0):
        raise UsageError("grid nodes must be strictly increasing")
    return grid


def interp_rows(grid, table, u):
    """
    Piecewise-linear interpolation of each column of `table` (G, P) at points u.

    Exact at grid nodes; constant beyond the first and last node. u must lie in [0, 1].
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    bad = (u < 0) | (u > 1) | ~np.isfinite(u)
    if np.any(bad):
        raise OutOfDomain(float(u[bad][0]))
    table = np.asarray(table, dtype=float)
    if table.shape[0] != len(grid):
        raise LengthMismatch(f"table has {table.shape[0]} rows for {len(grid)} grid nodes")
    idx = np.clip(np.searchsorted(grid, u, side='right') - 1, 0, len(grid) - 2)
    lo, hi = grid[idx], grid[idx + 1]
    frac = np.clip((u - lo) / (hi - lo), 0.0, 1.0)[:, None]
    return (1.0 - frac) * table[idx] + frac * table[idx + 1]


def parallel_map(func, items, threads=1):
    """Run func over items with joblib threads; results keep input order."""
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [func(item) for item in items]
    return Parallel(n_jobs=threads, prefer='threads')(delayed(func)(item) for item in items)


def permutations(n):
    return list(itertools.permutations(range(n)))


def upper_quantile(samples, eta):
    """Upper-eta percentile of a sample."""
    return float(np.quantile(np.asarray(samples, dtype=float), 1.0 - eta))
