"""
Monte-Carlo studies: repeated draws from a scenario, fits at several bandwidths, RASE
tables, band coverage and the null sample of the likelihood ratio statistic.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vcmoe.base.errors import LengthMismatch, UsageError
from vcmoe.base.model import Responsibilities
from vcmoe.base.utilities import STUDY_STREAM, permutations
from vcmoe.estimation.em import FitConfig, ThetaCurve, fit_vcmoe
from vcmoe.inference.bands import ASYMPTOTIC, BOOTSTRAP, UNDERSMOOTH_FACTOR, asymptotic_bands, bootstrap_bands
from vcmoe.inference.bootstrap import check_replicates, run_replicates
from vcmoe.inference.constancy import glrt_dof, test_constancy_glrt

logger = logging.getLogger(__name__)


def coefficient_truth(scenario, name, u):
    """True value of a named coefficient (delta on its natural scale)."""
    if isinstance(scenario, str):
        from vcmoe.scenarios import make
        scenario = make(scenario)
    return scenario.coefficient_truth(name, u)


def generate(scenario, n=None, seed=0):
    if isinstance(scenario, str):
        from vcmoe.scenarios import make
        scenario = make(scenario)
    return scenario.generate(n, seed)


def rase(estimate, truth, grid=None):
    """Root average squared error of an estimated curve against the truth over the grid nodes."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape or (grid is not None and len(grid) != estimate.shape[0]):
        raise LengthMismatch(f"curve lengths differ: {estimate.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def relabel_values(spec, table, perm):
    """
    Coefficient table (G, P) with component c taking the old component perm[c].

    Gating rows are re-referenced to the new last component.
    """
    table = np.atleast_2d(np.asarray(table, dtype=float))
    G, C = table.shape[0], spec.n_components
    n_beta = (C - 1) * spec.p_x
    n_alpha = C * spec.p_z
    perm = list(perm)
    beta = np.concatenate([table[:, :n_beta].reshape(G, C - 1, spec.p_x), np.zeros((G, 1, spec.p_x))], axis=1)
    beta = beta[:, perm] - beta[:, [perm[-1]]]
    alpha = table[:, n_beta:n_beta + n_alpha].reshape(G, C, spec.p_z)[:, perm]
    parts = [beta[:, :C - 1].reshape(G, -1), alpha.reshape(G, -1)]
    if spec.has_dispersion:
        parts.append(table[:, n_beta + n_alpha:][:, perm])
    return np.hstack(parts)


def relabel_curve(curve, perm):
    spec = curve.spec
    values = relabel_values(spec, curve.values, perm)
    slopes = relabel_values(spec, curve.slopes, perm)
    constants = {name: float(values[0, spec.index(name)]) for name in curve.constants}
    gamma = Responsibilities(curve.responsibilities.gamma[:, list(perm)])
    return ThetaCurve(spec, curve.grid, values, slopes, gamma, curve.bandwidth, list(curve.loglik_trace),
                      curve.converged, curve.n_iter, curve.frozen[:, list(perm)], constants)


def align(spec, values, truth):
    """Permutation of component labels minimizing the summed squared distance to the truth table."""
    truth = np.asarray(truth, dtype=float)
    distances = {perm: float(np.sum((relabel_values(spec, values, perm) - truth) ** 2))
                 for perm in permutations(spec.n_components)}
    return min(distances, key=distances.get)


@dataclass(frozen=True)
class StudyConfig:
    """
    Arguments:
        bandwidths: fit bandwidths for the RASE table
        bands: band methods to score, any of 'asymptotic' and 'bootstrap'
        band_bandwidth: bandwidth of the band fits; 0.85 times the first bandwidth when None
        glrt: collect r_K lambda_n for the scenario's constant coefficients (all gating
            coefficients when none are constant)
    """
    bandwidths: tuple
    replicates: int = 50
    n: int = None
    seed: int = 0
    bands: tuple = ()
    levels: tuple = (0.90, 0.95, 0.99)
    band_bandwidth: float = None
    M1: int = 200
    M2: int = 200
    glrt: bool = False
    threads: int = 1
    n_grid: int = 100
    max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, 'bandwidths', tuple(float(h) for h in np.atleast_1d(self.bandwidths)))
        if not self.bandwidths:
            raise UsageError("a study needs at least one bandwidth")
        if self.replicates < 1:
            raise UsageError(f"replicates must be at least 1, got {self.replicates}")
        for method in self.bands:
            if method not in (ASYMPTOTIC, BOOTSTRAP):
                raise UsageError(f"unknown band method {method!r}")
        if BOOTSTRAP in self.bands:
            check_replicates(M1=self.M1, M2=self.M2)

    def as_dict(self):
        return dict(bandwidths=list(self.bandwidths), replicates=self.replicates, n=self.n, seed=self.seed,
                    bands=list(self.bands), levels=list(self.levels), band_bandwidth=self.band_bandwidth,
                    M1=self.M1, M2=self.M2, glrt=self.glrt, threads=self.threads, n_grid=self.n_grid,
                    max_iter=self.max_iter)


@dataclass
class RaseTable:
    """Mean and SD of RASE per (coefficient, bandwidth); dispersions on the delta scale."""
    frame: pd.DataFrame
    replicates: int

    def entry(self, coefficient, h):
        row = self.frame[(self.frame.coefficient == coefficient) & np.isclose(self.frame.h, h)]
        return float(row['mean'].iloc[0]), float(row['sd'].iloc[0])


@dataclass
class StudyResult:
    rase: RaseTable
    coverage: pd.DataFrame
    glrt_null: np.ndarray
    glrt_dof: float = None
    failed: int = 0
    config: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(rase=self.rase.frame.to_dict(orient='records'), replicates=self.rase.replicates,
                    failed=self.failed, coverage=self.coverage.to_dict(orient='records'),
                    glrt=dict(dof=self.glrt_dof, sample_size=int(len(self.glrt_null)),
                              mean=float(np.mean(self.glrt_null)) if len(self.glrt_null) else None),
                    config=self.config)


def fit_aligned(scenario, data, config):
    spec = scenario.model_spec()
    curve = fit_vcmoe(spec, data, config)
    perm = align(spec, curve.values, scenario.truth_table(curve.grid, natural=False))
    return relabel_curve(curve, perm)


def run_study(scenario, config):
    """
    Replicate the scenario `config.replicates` times; each replicate draws from its own
    random stream, so results do not depend on the number of threads.
    """
    if isinstance(scenario, str):
        from vcmoe.scenarios import make
        scenario = make(scenario)
    spec = scenario.model_spec()
    names = list(spec.coefficient_names)
    n = config.n or scenario.n
    band_h = config.band_bandwidth or UNDERSMOOTH_FACTOR * config.bandwidths[0]
    null_names = scenario.constant_coefficients or [name for name in names if name.startswith('beta')]

    def fit_config(h):
        return FitConfig(bandwidth=h, n_grid=config.n_grid, max_iter=config.max_iter)

    def work(rng):
        data = scenario.sample(n, rng)
        out = dict(rase=[], coverage=[], glrt=None)
        for h in config.bandwidths:
            curve = fit_aligned(scenario, data, fit_config(h))
            truth = scenario.truth_table(curve.grid)
            for k, name in enumerate(names):
                out['rase'].append((name, h, rase(curve.coefficient(name, natural=True), truth[:, k])))
        if config.bands:
            curve = fit_aligned(scenario, data, fit_config(band_h))
            truth = scenario.truth_table(curve.grid)
            bands = []
            if ASYMPTOTIC in config.bands:
                bands += asymptotic_bands(curve, data, names, config.levels)
            if BOOTSTRAP in config.bands:
                bands += bootstrap_bands(curve, data, names, config.levels, config.M1, config.M2,
                                         seed=int(rng.integers(1 << 62)), config=fit_config(band_h))
            for band in bands:
                covered = band.covers(truth[:, spec.index(band.coefficient)])
                out['coverage'].append((band.coefficient, band.level, band.method, covered))
        if config.glrt:
            result = test_constancy_glrt(spec, data, fit_config(config.bandwidths[0]), null_names)
            out['glrt'] = result.details['scaled_statistic']
        return out

    results = run_replicates(work, config.replicates, config.seed, STUDY_STREAM, config.threads, what='study')
    failed = config.replicates - len(results)
    logger.info("Study %s: %d replicates completed, %d failed", scenario.id, len(results), failed)

    rase_rows = pd.DataFrame([row for r in results for row in r['rase']], columns=['coefficient', 'h', 'rase'])
    grouped = rase_rows.groupby(['coefficient', 'h'], sort=False)['rase']
    ddof = 1 if len(results) > 1 else 0
    table = pd.DataFrame(dict(mean=grouped.mean(), sd=grouped.std(ddof=ddof))).reset_index()

    coverage_rows = pd.DataFrame([row for r in results for row in r['coverage']],
                                 columns=['coefficient', 'level', 'method', 'covered'])
    if len(coverage_rows):
        coverage = (coverage_rows.groupby(['coefficient', 'level', 'method'], sort=False)['covered']
                    .agg(coverage='mean', replicates='count').reset_index())
    else:
        coverage = pd.DataFrame(columns=['coefficient', 'level', 'method', 'coverage', 'replicates'])

    glrt_null = np.array([r['glrt'] for r in results if r['glrt'] is not None])
    dof = glrt_dof(spec, null_names, config.bandwidths[0]) if config.glrt else None
    return StudyResult(RaseTable(table, len(results)), coverage, glrt_null, dof, failed, config.as_dict())
