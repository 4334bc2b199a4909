"""
Command-line front end.

    vcmoe simulate --scenario Sim1 --n 500 --seed 1 --data-out sim1.csv
    vcmoe fit --data sim1.csv --bandwidth 0.21 --out fit.json
    vcmoe cv --data sim1.csv --candidates 0.12 0.15 0.18 0.21 0.24 --out cv.json
    vcmoe band --fit fit.json --coefficient alpha_1_0 --method bootstrap --M1 200 --M2 200 --out band.json
    vcmoe test --fit fit.json --method glrt --coefficient beta_0 --coefficient beta_1 --out test.json
    vcmoe study --scenario Sim1 --replicates 50 --bandwidths 0.18 0.21 0.25 --out-dir study/
    vcmoe plot-data --fit fit.json --csv-out curves.csv

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

import vcmoe
from vcmoe.base.errors import DataError, UsageError, VCMoEError
from vcmoe.base.model import ModelSpec
from vcmoe.estimation.bandwidth import select_bandwidth
from vcmoe.estimation.data import IndexMap, file_digest, read_csv, write_csv
from vcmoe.estimation.em import FitConfig, ThetaCurve, fit_vcmoe
from vcmoe.inference import constancy
from vcmoe.inference.bands import (ASYMPTOTIC, BOOTSTRAP, UNDERSMOOTH_FACTOR, asymptotic_band, bootstrap_band,
                                   check_level)
from vcmoe.inference.bootstrap import check_replicates
from vcmoe.scenarios import make, registry
from vcmoe.scenarios.study import StudyConfig, run_study

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_digest: str
    version: str
    wall_time: float


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, default=_jsonable)
    if path is None or str(path) == '-':
        print(text)
    else:
        Path(path).write_text(text + '\n', encoding='utf-8')
        logger.info("Wrote %s", path)


def _output(args, payload, config, seed, digest, started):
    manifest = RunManifest(args.command, config, seed, digest, vcmoe.__version__, round(time.time() - started, 3))
    _write_json(args.out, {'schema_version': SCHEMA_VERSION, **payload, 'manifest': asdict(manifest)})


def _seed(args, digest):
    """Explicit --seed, else derived from the input digest."""
    if getattr(args, 'seed', None) is not None:
        return int(args.seed)
    return int(digest[:15], 16)


def _model_spec(args, data):
    return ModelSpec(args.components, data.p_x, data.p_z, expert=args.expert, trials=args.trials,
                     gating=args.gating, constant=frozenset(args.constant or ()))


def _fit_config(args, bandwidth, seed):
    return FitConfig(bandwidth=bandwidth, n_grid=args.grid_size, max_iter=args.max_iter, tol=args.tol,
                     init=args.init, seed=seed, criterion=args.criterion, threads=args.threads)


def _load_data(args):
    if not args.data:
        raise UsageError(f"{args.command} needs --data")
    rescale = True if args.rescale else None
    data = read_csv(args.data, rescale=rescale)
    return data, file_digest(args.data)


def _load_fit(path):
    """(spec, config, curve, data, fit document) from a fit JSON, reloading and checking its data file."""
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read fit file {path}: {err}") from err
    spec = ModelSpec.from_dict(doc['spec'])
    config = FitConfig.from_dict(doc['config'])
    source = doc['data']
    index_map = IndexMap(**source['index_map'])
    data = read_csv(source['path'], rescale=index_map != IndexMap())
    digest = file_digest(source['path'])
    if digest != source['digest']:
        logger.warning("Data file %s changed since the fit (digest %s, recorded %s)", source['path'], digest[:12],
                       source['digest'][:12])
    data.check(spec)
    curve = ThetaCurve.from_dict(spec, doc['curve'])
    return spec, config, curve, data, doc


def cmd_simulate(args):
    started = time.time()
    kwargs = {} if args.beta is None else dict(beta=args.beta)
    scenario = make(args.scenario, **kwargs)
    seed = args.seed if args.seed is not None else 0
    data = scenario.generate(args.n, seed)
    write_csv(data, args.data_out)
    logger.info("Simulated %d observations from %s into %s", data.n, scenario.id, args.data_out)
    config = dict(scenario=args.scenario, n=data.n, beta=args.beta, path=str(args.data_out))
    _output(args, dict(spec=scenario.model_spec().as_dict(), n=data.n), config, seed, file_digest(args.data_out),
            started)


def cmd_fit(args):
    started = time.time()
    data, digest = _load_data(args)
    seed = _seed(args, digest)
    spec = _model_spec(args, data)
    config = _fit_config(args, args.bandwidth, seed)
    curve = fit_vcmoe(spec, data, config)
    payload = dict(spec=spec.as_dict(), config=config.as_dict(), curve=curve.as_dict(),
                   data=dict(path=str(Path(args.data).resolve()), digest=digest, n=data.n,
                             index_map=data.index_map.as_dict()))
    _output(args, payload, config.as_dict(), seed, digest, started)


def cmd_cv(args):
    started = time.time()
    if args.candidates is not None and not args.candidates:
        raise UsageError("--candidates was given without values")
    data, digest = _load_data(args)
    seed = _seed(args, digest)
    spec = _model_spec(args, data)
    config = _fit_config(args, 1.0, seed)
    report = select_bandwidth(spec, data, args.candidates, config)
    _output(args, dict(spec=spec.as_dict(), cv=report.as_dict()), config.as_dict(), seed, digest, started)


def cmd_band(args):
    started = time.time()
    check_level(args.level)
    if args.method == BOOTSTRAP:
        check_replicates(M1=args.M1, M2=args.M2)
    spec, config, curve, data, doc = _load_fit(args.fit)
    seed = _seed(args, doc['data']['digest'])
    config = config.replace(seed=seed, threads=args.threads)
    if not args.debias and args.undersmooth < 1:
        h_band = args.undersmooth * config.bandwidth
        logger.info("Refitting at undersmoothed bandwidth %g", h_band)
        config = config.replace(bandwidth=h_band)
        curve = fit_vcmoe(spec, data, config)
    if args.method == ASYMPTOTIC:
        pilot = args.pilot or 2.0 * config.bandwidth
        band = asymptotic_band(spec, curve, data, args.coefficient, args.level, args.debias, pilot)
    else:
        band = bootstrap_band(spec, curve, data, args.coefficient, args.level, args.M1, args.M2, seed,
                              config.replace(grid=tuple(curve.grid)), args.threads)
    plot_path = args.plot_out
    if plot_path is None and args.out not in (None, '-'):
        plot_path = Path(args.out).with_suffix('.csv')
    if plot_path:
        band.to_frame(data.index_map if args.raw_index else None).to_csv(plot_path, index=False)
        logger.info("Wrote plot data to %s", plot_path)
    run = dict(config.as_dict(), method=args.method, level=args.level, M1=args.M1, M2=args.M2)
    _output(args, dict(band=band.as_dict()), run, seed, doc['data']['digest'], started)


def cmd_test(args):
    started = time.time()
    check_level(args.level)
    if args.method == BOOTSTRAP:
        check_replicates(M1=args.M1, M2=args.M2)
    if args.fit:
        spec, config, _, data, doc = _load_fit(args.fit)
        digest = doc['data']['digest']
    elif args.data:
        data, digest = _load_data(args)
        spec = _model_spec(args, data)
        if args.bandwidth is None:
            raise UsageError("--bandwidth is required with --data")
        config = _fit_config(args, args.bandwidth, 0)
    else:
        raise UsageError("give either --fit or --data")
    seed = _seed(args, digest)
    config = config.replace(seed=seed, threads=args.threads)
    names = args.coefficient
    for name in names:
        spec.index(name)
    if args.method == 'glrt':
        result = constancy.test_constancy_glrt(spec, data, config, names)
    elif len(names) != 1:
        raise UsageError(f"the {args.method} test takes exactly one coefficient")
    elif args.method == ASYMPTOTIC:
        result = constancy.test_constancy_asymptotic(spec, data, config, names[0], args.level, args.debias)
    else:
        result = constancy.test_constancy_bootstrap(spec, data, config, names[0], args.M1, args.M2, seed, args.level)
    run = dict(config.as_dict(), method=args.method, coefficients=names, level=args.level, M1=args.M1, M2=args.M2)
    _output(args, dict(test=result.as_dict()), run, seed, digest, started)


def cmd_study(args):
    started = time.time()
    kwargs = {} if args.beta is None else dict(beta=args.beta)
    scenario = make(args.scenario, **kwargs)
    seed = args.seed if args.seed is not None else 0
    config = StudyConfig(bandwidths=tuple(args.bandwidths), replicates=args.replicates, n=args.n, seed=seed,
                         bands=tuple(args.bands or ()), levels=tuple(args.levels), band_bandwidth=args.band_bandwidth,
                         M1=args.M1, M2=args.M2, glrt=args.glrt, threads=args.threads, n_grid=args.grid_size,
                         max_iter=args.max_iter)
    result = run_study(scenario, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.rase.frame.to_csv(out_dir / 'rase.csv', index=False)
    result.coverage.to_csv(out_dir / 'coverage.csv', index=False)
    pd.DataFrame({'scaled_statistic': result.glrt_null}).to_csv(out_dir / 'glrt_null.csv', index=False)
    if args.out is None:
        args.out = out_dir / 'study.json'
    digest = f"scenario:{args.scenario}"
    _output(args, dict(scenario=args.scenario, study=result.as_dict()), config.as_dict(), seed, digest, started)


def cmd_plot_data(args):
    started = time.time()
    spec, config, curve, data, doc = _load_fit(args.fit)
    names = args.coefficients or list(spec.coefficient_names)
    for name in names:
        spec.index(name)
    u = data.index_map.inverse(curve.grid) if args.raw_index else curve.grid
    frame = pd.DataFrame({'u': u, **{name: curve.coefficient(name, natural=True) for name in names}})
    frame.to_csv(args.csv_out, index=False)
    logger.info("Wrote %d grid rows to %s", len(frame), args.csv_out)
    _output(args, dict(columns=['u', *names], path=str(args.csv_out)), dict(fit=str(args.fit)), config.seed,
            doc['data']['digest'], started)


def _add_model_flags(parser):
    parser.add_argument('--data', type=str, help="input CSV with columns u, y, x0.., z0..")
    parser.add_argument('--components', type=int, default=2)
    parser.add_argument('--expert', choices=['gaussian', 'binomial'], default='gaussian')
    parser.add_argument('--trials', type=int, default=None, help="binomial trials")
    parser.add_argument('--gating', choices=['logistic', 'softmax'], default=None)
    parser.add_argument('--constant', action='append', metavar='NAME', help="coefficient constant in u (repeatable)")
    parser.add_argument('--rescale', action='store_true', help="always rescale u onto [0, 1]")
    _add_fit_flags(parser)


def _add_fit_flags(parser):
    parser.add_argument('--grid-size', type=int, default=100)
    parser.add_argument('--max-iter', type=int, default=200)
    parser.add_argument('--tol', type=float, default=1e-6)
    parser.add_argument('--init', choices=['quantile', 'random'], default='quantile')
    parser.add_argument('--criterion', choices=['loglik', 'coef_sum'], default='loglik')


def _add_common(parser):
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--threads', type=int, default=1)
    parser.add_argument('--out', type=str, default=None, help="JSON output path (stdout when omitted)")


def build_parser():
    parser = argparse.ArgumentParser(prog='vcmoe', description="Varying-coefficient mixture of experts")
    parser.add_argument('--version', action='version', version=f"vcmoe {vcmoe.__version__}")
    parser.add_argument('-v', '--verbose', action='count', default=0)
    parser.add_argument('-q', '--quiet', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    ps = sub.add_parser('simulate', help="Draw a dataset from a registered scenario")
    ps.add_argument('--scenario', choices=sorted(registry), required=True)
    ps.add_argument('--n', type=int, default=None)
    ps.add_argument('--beta', type=float, nargs='+', default=None, help="constant gating coefficients")
    ps.add_argument('--data-out', type=str, required=True)
    _add_common(ps)
    ps.set_defaults(func=cmd_simulate)

    pf = sub.add_parser('fit', help="Fit the model at one bandwidth")
    _add_model_flags(pf)
    pf.add_argument('--bandwidth', type=float, required=True)
    _add_common(pf)
    pf.set_defaults(func=cmd_fit)

    pc = sub.add_parser('cv', help="Leave-one-out likelihood cross-validation")
    _add_model_flags(pc)
    pc.add_argument('--candidates', type=float, nargs='*', default=None)
    _add_common(pc)
    pc.set_defaults(func=cmd_cv)

    pb = sub.add_parser('band', help="Simultaneous confidence band for one coefficient")
    pb.add_argument('--fit', type=str, required=True)
    pb.add_argument('--coefficient', type=str, required=True)
    pb.add_argument('--method', choices=[ASYMPTOTIC, BOOTSTRAP], default=ASYMPTOTIC)
    pb.add_argument('--level', type=float, default=0.95)
    pb.add_argument('--M1', type=int, default=None)
    pb.add_argument('--M2', type=int, default=None)
    pb.add_argument('--debias', action='store_true', help="plug-in bias correction instead of undersmoothing")
    pb.add_argument('--pilot', type=float, default=None, help="pilot bandwidth for the bias (default 2h)")
    pb.add_argument('--undersmooth', type=float, default=UNDERSMOOTH_FACTOR,
                    help="refit at this fraction of the fit bandwidth (1 keeps the fit)")
    pb.add_argument('--plot-out', type=str, default=None)
    pb.add_argument('--raw-index', action='store_true', help="report u on the original index scale")
    _add_common(pb)
    pb.set_defaults(func=cmd_band)

    pt = sub.add_parser('test', help="Test whether coefficients are constant in u")
    pt.add_argument('--fit', type=str, default=None)
    _add_model_flags(pt)
    pt.add_argument('--bandwidth', type=float, default=None)
    pt.add_argument('--method', choices=[ASYMPTOTIC, BOOTSTRAP, 'glrt'], default='glrt')
    pt.add_argument('--coefficient', action='append', required=True)
    pt.add_argument('--level', type=float, default=0.95)
    pt.add_argument('--M1', type=int, default=None)
    pt.add_argument('--M2', type=int, default=None)
    pt.add_argument('--debias', action='store_true')
    _add_common(pt)
    pt.set_defaults(func=cmd_test)

    pst = sub.add_parser('study', help="Monte-Carlo study of a scenario")
    pst.add_argument('--scenario', choices=sorted(registry), required=True)
    pst.add_argument('--replicates', type=int, default=50)
    pst.add_argument('--bandwidths', type=float, nargs='+', required=True)
    pst.add_argument('--n', type=int, default=None)
    pst.add_argument('--beta', type=float, nargs='+', default=None)
    pst.add_argument('--bands', choices=[ASYMPTOTIC, BOOTSTRAP], nargs='*', default=None)
    pst.add_argument('--levels', type=float, nargs='+', default=[0.90, 0.95, 0.99])
    pst.add_argument('--band-bandwidth', type=float, default=None)
    pst.add_argument('--M1', type=int, default=200)
    pst.add_argument('--M2', type=int, default=200)
    pst.add_argument('--glrt', action='store_true')
    pst.add_argument('--grid-size', type=int, default=100)
    pst.add_argument('--max-iter', type=int, default=200)
    pst.add_argument('--out-dir', type=str, required=True)
    _add_common(pst)
    pst.set_defaults(func=cmd_study)

    pp = sub.add_parser('plot-data', help="Export fitted coefficient curves as CSV")
    pp.add_argument('--fit', type=str, required=True)
    pp.add_argument('--coefficients', nargs='*', default=None)
    pp.add_argument('--csv-out', type=str, required=True)
    pp.add_argument('--raw-index', action='store_true')
    _add_common(pp)
    pp.set_defaults(func=cmd_plot_data)
    return parser


def configure_logging(verbose=0, quiet=False):
    level = logging.ERROR if quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        args.func(args)
    except VCMoEError as err:
        logger.error("%s", err)
        return err.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
