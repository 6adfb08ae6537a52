"""Command-line harness: ``deepfid {train,sample,sweep,coverage,bod-compare,presets}``.

Exit codes: 0 success, 2 configuration error, 3 sampling/training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io
from .afc import AfcConfig, AfcEmptyError, afc_auto, afc_run, unconditional_samples
from .baselines import (MetropolisError, ZeroDensityError, fiducial_density_grid, fiducial_metropolis,
                        parametric_bootstrap, support_bounds)
from .config import PRESETS, ConfigError, as_float, build_model, load_config_file, preset, resolve
from .encoder import (EncoderInverse, TrainConfig, TrainingDivergence, generate_training_set, load_weights,
                      make_initial_weights, pilot_box, save_weights, spec_for_model, train)
from .inference import (EmpiricalGFD, confidence_curve, confidence_interval, coverage_study,
                        point_estimates, sample_quantile)
from .models import ConvergenceError, ModelError, nls_pilot_estimate
from .rng import RandomSource

log = logging.getLogger("deepfid")

# fixed stream ids under the master seed; coverage replicates use small ids
_BASE = 1 << 40
STREAM_TRAIN_DATA = _BASE
STREAM_TRAIN_FIT = _BASE + 1
STREAM_OBSERVATION = _BASE + 2
STREAM_SAMPLER = _BASE + 3
STREAM_METROPOLIS = _BASE + 4
STREAM_BOOTSTRAP = _BASE + 5

RUNTIME_ERRORS = (AfcEmptyError, TrainingDivergence, MetropolisError, ConvergenceError,
                  ZeroDensityError, ModelError)


class Run:
    """Output directory bookkeeping: timings, emitted files and the manifest."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.timings = {}
        self.failures = []
        self.notes = []

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 3)

    def path(self, name):
        p = self.out / name
        self.files.append(p)
        return p

    def finish(self):
        manifest = {
            "tool": "deepfid",
            "version": __version__,
            "config": self.cfg,
            "timings_seconds": self.timings,
            "outputs": {str(p.relative_to(self.out)): io.sha256(p) for p in self.files},
            "failures": self.failures,
            "notes": self.notes,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")
        return manifest


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, np.generic):
        return v.item()
    return str(v)


# --- shared pieces ----------------------------------------------------------------

def train_config(cfg, model, x=None) -> TrainConfig:
    t = cfg["train"]
    if t["pilot_centered"]:
        if x is None:
            raise ConfigError("pilot-centred training needs an observation")
        low, high = pilot_box(model, nls_pilot_estimate(model, x), t["pilot_rel"])
    elif t["param_low"] is not None and t["param_high"] is not None:
        low, high = tuple(t["param_low"]), tuple(t["param_high"])
    else:
        raise ConfigError("training needs train.param_low/param_high or train.pilot_centered")
    keys = ("w1", "w2", "epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
            "adam_epsilon", "train_fraction", "n_train_params")
    try:
        return TrainConfig(**{k: t[k] for k in keys}, param_low=low, param_high=high)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_encoder(cfg, model, run: Run, x=None):
    tcfg = train_config(cfg, model, x)
    seed = cfg["seed"]
    spec = spec_for_model(model, cfg["encoder"]["hidden_layers"])
    with run.stage("simulate_training_set"):
        try:
            data = generate_training_set(model, tcfg, RandomSource(seed, STREAM_TRAIN_DATA))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    fit_rng = RandomSource(seed, STREAM_TRAIN_FIT)
    with run.stage("train"):
        w0 = make_initial_weights(spec, data, fit_rng)
        weights, report = train(model, spec, tcfg, data, fit_rng, w0, log=log.info)
    save_weights(run.path("weights.json"), spec, weights)
    io.write_csv(run.path("train_report.csv"),
                 ["epoch", "train_total", "val_total", "val_x_term", "val_mu_term"], report.rows(),
                 comments=[f"w1={tcfg.w1} w2={tcfg.w2}; box low={list(tcfg.param_low)} high={list(tcfg.param_high)}"])
    return spec, weights, report


def get_inverse(cfg, model, run: Run, x=None):
    if model.inverse is not None:
        return model.inverse
    if cfg["encoder"]["weights"] is not None:
        spec, weights = load_weights(cfg["encoder"]["weights"])
        return EncoderInverse(spec, weights)
    spec, weights, _ = train_encoder(cfg, model, run, x)
    return EncoderInverse(spec, weights)


def afc_config(cfg, n) -> AfcConfig:
    a = cfg["afc"]
    eps = math.inf if a["epsilon"] is None else as_float(a["epsilon"])
    return AfcConfig(epsilon=eps, target_n=n, max_itr=a["max_itr"], distance=a["distance"],
                     threshold_quantile=a["threshold_quantile"], pilot_size=a["pilot_size"])


def observation(cfg, model, override_path=None):
    obs = cfg["observation"]
    if override_path is not None or obs["file"] is not None:
        path = override_path or obs["file"]
        try:
            x = io.read_vectors(path)[0]
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read observation {path}: {exc}") from None
    elif obs["values"] is not None:
        x = np.asarray(obs["values"], dtype=float)
    elif obs["truth"] is not None:
        x, _ = model.simulate(np.asarray(obs["truth"], dtype=float),
                              RandomSource(cfg["seed"], STREAM_OBSERVATION))
    else:
        raise ConfigError("no observation: give observation.values, .file or .truth")
    if x.shape != (model.data_dim,):
        raise ConfigError(f"observation has length {x.size}, model expects {model.data_dim}")
    return x


def _summary_rows(samples, names, alpha):
    gfd = EmpiricalGFD.from_samples(samples)
    rows = []
    for j, name in enumerate(names):
        lo, hi = confidence_interval(gfd, j, alpha)
        mean, med = point_estimates(gfd, j)
        rows.append([name, med, mean, lo, hi, hi - lo])
    return gfd, rows


SUMMARY_HEADER = ["parameter", "median", "mean", "lower", "upper", "width"]


def _write_curves(run, gfd, names, cfg, prefix="cc", suffix=""):
    inf = cfg["inference"]
    for j, name in enumerate(names):
        cc = confidence_curve(gfd, j, inf["grid_points"], inf["grid_margin"])
        io.write_curve(run.path(f"{prefix}_{name}{suffix}.csv"), cc)


# --- subcommands -------------------------------------------------------------------

def cmd_train(cfg, run: Run, args=None):
    model = build_model(cfg)
    x = observation(cfg, model) if cfg["train"]["pilot_centered"] else None
    _, _, report = train_encoder(cfg, model, run, x)
    print(f"trained {cfg['train']['epochs']} epochs; final validation loss {report.final_val_loss:.6g}")


def cmd_sample(cfg, run: Run, args=None):
    model = build_model(cfg)
    x = observation(cfg, model, getattr(args, "observation", None))
    inverse = get_inverse(cfg, model, run, x)
    n_fid = cfg["inference"]["n_fid"]
    rng = RandomSource(cfg["seed"], STREAM_SAMPLER)
    with run.stage("sample"):
        if cfg["afc"]["enabled"]:
            acfg = afc_config(cfg, n_fid)
            run_afc = afc_auto if math.isinf(acfg.epsilon) else afc_run
            ss = run_afc(model, inverse, x, acfg, rng)
        else:
            ss = unconditional_samples(model, inverse, x, n_fid, rng)
    names = model.param_names
    io.write_vectors(run.path("observation.csv"), x[None], prefix="x")
    io.write_samples(run.path("samples.csv"), ss, names,
                     comments=[f"epsilon={ss.epsilon}; proposals={ss.proposals_used}"])
    gfd, rows = _summary_rows(ss.accepted_samples, names, cfg["inference"]["alpha"])
    _write_curves(run, gfd, names, cfg)
    io.write_csv(run.path("summary.csv"), SUMMARY_HEADER, rows,
                 comments=[f"alpha={cfg['inference']['alpha']}; n={ss.n_accepted}; epsilon={ss.epsilon}"])
    alpha = cfg["inference"]["alpha"]
    print(f"{ss.n_accepted} samples from {ss.proposals_used} proposals (epsilon={ss.epsilon:.6g})")
    for name, med, mean, lo, hi, _ in rows:
        print(f"  {name}: median {med:.6g}  {alpha:.0%} interval [{lo:.6g}, {hi:.6g}]")
    return ss


def sweep_epsilons(cfg, pool_distances):
    sw = cfg["sweep"]
    if sw["epsilons"] is not None:
        eps = [as_float(e) for e in sw["epsilons"]]
    else:
        d = np.sort(pool_distances[np.isfinite(pool_distances)])
        eps = [math.inf if q >= 1 else float(sample_quantile(d, q)) for q in sw["quantiles"]]
    return sorted(eps, reverse=True)


def cmd_sweep(cfg, run: Run, args=None):
    model = build_model(cfg)
    x = observation(cfg, model, getattr(args, "observation", None))
    inverse = get_inverse(cfg, model, run, x)
    if args is not None and getattr(args, "epsilon", None):
        cfg["sweep"]["epsilons"] = list(args.epsilon)
    with run.stage("pool"):
        pool = unconditional_samples(model, inverse, x, cfg["sweep"]["pool_size"],
                                     RandomSource(cfg["seed"], STREAM_SAMPLER))
    names = model.param_names
    alpha = cfg["inference"]["alpha"]
    io.write_vectors(run.path("observation.csv"), x[None], prefix="x")
    io.write_samples(run.path("pool.csv"), pool, names)
    header = ["index", "epsilon", "n_accepted"]
    for n in names:
        header += [f"{n}_median", f"{n}_lower", f"{n}_upper", f"{n}_width"]
    rows = []
    for k, eps in enumerate(sweep_epsilons(cfg, pool.distances)):
        sub = pool.restrict(eps)
        if sub.n_accepted == 0:
            raise AfcEmptyError(f"no pooled proposal below epsilon={eps:.6g}", pool.distances)
        gfd, summ = _summary_rows(sub.samples, names, alpha)
        _write_curves(run, gfd, names, cfg, suffix=f"_eps{k}")
        row = [k, eps, sub.n_accepted]
        for _, med, _, lo, hi, width in summ:
            row += [med, lo, hi, width]
        rows.append(row)
        print(f"epsilon {eps:.6g}: {sub.n_accepted} accepted; "
              + "; ".join(f"{n} median {r[1]:.6g} width {r[5]:.6g}" for n, r in zip(names, summ)))
    io.write_csv(run.path("sweep.csv"), header, rows, comments=[f"alpha={alpha}; shared pool of {len(pool.samples)}"])
    return rows


def cmd_coverage(cfg, run: Run, args=None):
    model = build_model(cfg)
    inverse = get_inverse(cfg, model, run)
    n_fid = cfg["inference"]["n_fid"]
    afc = afc_config(cfg, n_fid) if cfg["afc"]["enabled"] else None
    with run.stage("coverage"):
        report = coverage_study(model, inverse, cfg["coverage"]["truths"], cfg["coverage"]["n_datasets"],
                                n_fid, afc, cfg["inference"]["alpha"], cfg["seed"], cfg["threads"])
    io.write_coverage(run.path("coverage.csv"), report)
    io.write_replicates(run.path("replicates.csv"), report, model.param_names)
    failed = [(r.truth_index, r.replicate, r.error) for r in report.replicates if r.failed]
    run.failures.extend({"truth_index": t, "replicate": r, "error": e} for t, r, e in failed)
    print(f"{'truth':>8} {'param':>6} {'coverage':>9} {'E[len]':>9} {'E[mean]':>9} {'E[median]':>10}")
    for r in report.rows:
        print(f"{r.truth:8.4g} {r.coord:>6} {r.coverage:9.3f} {r.expected_length:9.4f} "
              f"{r.expected_mean:9.4f} {r.expected_median:10.4f}")
    if failed:
        print(f"{len(failed)} replicate(s) failed; see manifest.json")
    return report


def _histogram_density(samples, axes_edges):
    h, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=axes_edges, density=True)
    return h


def cmd_bod_compare(cfg, run: Run, args=None):
    model = build_model(cfg)
    x = observation(cfg, model)
    b = cfg["bod"]
    names = model.param_names
    alpha = cfg["inference"]["alpha"]
    truth = np.array([0.9, 0.1])
    n_fid = cfg["inference"]["n_fid"]
    clouds = {}

    def attempt(name, fn):
        try:
            with run.stage(name):
                clouds[name] = fn()
        except RUNTIME_ERRORS + (FloatingPointError, np.linalg.LinAlgError) as exc:
            log.error("%s failed: %s", name, exc)
            run.failures.append({"method": name, "error": str(exc)})

    def fae_afc():
        inverse = get_inverse(cfg, model, run, x)
        rng = RandomSource(cfg["seed"], STREAM_SAMPLER)
        acfg = afc_config(cfg, n_fid)
        run_afc = afc_auto if math.isinf(acfg.epsilon) else afc_run
        return run_afc(model, inverse, x, acfg, rng)

    grid_holder = {}

    def fiducial_mcmc():
        bounds = support_bounds(model, x, b["coarse_bounds"])
        grid = fiducial_density_grid(model, x, bounds, b["grid_points"])
        grid_holder["grid"] = grid
        return fiducial_metropolis(model, x, grid, RandomSource(cfg["seed"], STREAM_METROPOLIS),
                                   b["mcmc_samples"], b["burn_in"])

    def bootstrap():
        return parametric_bootstrap(model, x, b["n_boot"], RandomSource(cfg["seed"], STREAM_BOOTSTRAP))

    attempt("fae_afc", fae_afc)
    attempt("fiducial_metropolis", fiducial_mcmc)
    attempt("parametric_bootstrap", bootstrap)

    note = "RTO (randomize-then-optimize) Bayesian method not implemented; three methods compared"
    run.notes.append(note)
    if "grid" in grid_holder:
        g = grid_holder["grid"]
        io.write_matrix(run.path("contour_fiducial_density.csv"), g.axes[0], g.axes[1], g.density, "t1\\t2")
        axes = g.axes
    else:
        allpts = np.concatenate([c.accepted_samples for c in clouds.values()]) if clouds else np.array([[0.5, 0.05], [1.5, 0.2]])
        axes = [np.linspace(allpts[:, k].min(), allpts[:, k].max(), 50) for k in range(2)]
    edges = [np.linspace(ax[0], ax[-1], b["contour_points"] + 1) for ax in axes]
    centres = [0.5 * (e[1:] + e[:-1]) for e in edges]

    rows = []
    for method, ss in clouds.items():
        pts = ss.accepted_samples
        io.write_samples(run.path(f"samples_{method}.csv"), ss, names)
        gfd, summ = _summary_rows(pts, names, alpha)
        _write_curves(run, gfd, names, cfg, prefix=f"cc_{method}")
        io.write_matrix(run.path(f"contour_{method}.csv"), centres[0], centres[1],
                        _histogram_density(pts, edges), "t1\\t2")
        for j, (name, med, mean, lo, hi, width) in enumerate(summ):
            rows.append([method, name, med, lo, hi, width, bool(lo <= truth[j] <= hi)])
    io.write_csv(run.path("widths.csv"), ["method", "parameter", "median", "lower", "upper", "width", "contains_truth"],
                 rows, comments=[note, f"alpha={alpha}; truth t1=0.9 t2=0.1"])
    print(f"{'method':>22} {'param':>5} {'median':>9} {'lower':>9} {'upper':>9} {'width':>9} truth-in")
    for method, name, med, lo, hi, width, ok in rows:
        print(f"{method:>22} {name:>5} {med:9.4f} {lo:9.4f} {hi:9.4f} {width:9.4f} {ok}")
    print(note)
    if not clouds:
        raise MetropolisError("every comparison method failed")
    return rows


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "coverage": cmd_coverage,
    "bod-compare": cmd_bod_compare,
}


def build_parser():
    p = argparse.ArgumentParser(prog="deepfid", description="Deep fiducial inference experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group()
        src.add_argument("--config", help="YAML experiment file")
        src.add_argument("--preset", help="shipped preset name")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--threads", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("sample", "sweep"):
            s.add_argument("--observation", help="CSV with the observed vector in its first row")
        if name == "sweep":
            s.add_argument("--epsilon", type=as_float, action="append", help="threshold (repeatable)")
    s = sub.add_parser("presets", help="list presets or print one as YAML")
    s.add_argument("name", nargs="?")
    s.add_argument("--write", help="write the preset to this path")
    return p


def _load(args):
    if args.config:
        raw = load_config_file(args.config)
    elif args.preset:
        raw = preset(args.preset)
    else:
        raise ConfigError("give --config PATH or --preset NAME")
    raw = dict(raw)
    raw["mode"] = args.command
    return resolve(raw, seed=args.seed, out=args.out, threads=args.threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        if args.name is None:
            for name in sorted(PRESETS):
                print(f"{name:18} mode={PRESETS[name]['mode']}")
            return 0
        try:
            text = yaml.safe_dump(preset(args.name), sort_keys=False)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        if args.write:
            Path(args.write).write_text(text)
        else:
            print(text, end="")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = _load(args)
        run = Run(cfg)
        COMMANDS[args.command](cfg, run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        if "run" in locals():
            run.failures.append({"error": str(exc)})
            run.finish()
        return 3
    run.finish()
    return 0


if __name__ == "__main__":
    sys.exit(main())
