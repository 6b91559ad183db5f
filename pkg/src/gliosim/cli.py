"""Command-line entry point: phantom generation, dataset export, single
simulations, surrogate prediction, Bayesian calibration, and evaluation.

Progress goes to stderr; data products go to files only. Every command is
reproducible given --seed, and each writes a summary JSON embedding the
fully resolved configuration. Exit codes: 0 success, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .growth import GrowthParams, SolverConfig, seed_voxel, simulate
from .imaging import ImagingParams, load_observation, save_observation, synth_observation
from .surrogate import NetConfig, load_weights, predict
from .tmcmc import (
    DEFAULT_PRIOR_BOUNDS,
    PARAM_NAMES,
    NumericalForward,
    ObservationLogLik,
    PriorSpec,
    SurrogateForward,
    run_tmcmc,
    save_results,
    split_theta,
)
from .volumes import (
    CropSpec,
    anatomy_channels,
    crop_anatomy,
    crop_centered,
    embed,
    gen_phantom,
    load_anatomy,
    load_volume,
    save_anatomy,
    save_volume,
)
from .evaluation import evaluate_set, write_report

# Named sub-streams so dataset and observation randomness regression-test
# independently; the sampler derives its own (seed, stage, sample) streams.
STREAM_DATASET = 1
STREAM_OBSERVATION = 3

DATASET_T_GRID_STEP = 50.0
DATASET_RANGES = {"D_w": (0.01, 0.08), "rho": (0.0001, 0.03), "T": (50.0, 1000.0)}
SEED_DRAW_CAP = 10_000


class ConfigError(ValueError):
    """A problem with the run configuration or command arguments."""


_CONFIG_SECTIONS = {
    "solver": {"dw_dg_ratio", "csf_domain_threshold", "dt_safety", "seed_amplitude", "seed_sigma_voxels"},
    "net": {"side", "channels", "convs_per_block", "levels", "param_count"},
    "prior": set(PARAM_NAMES),
    "sampler": {"population_n", "cov_target", "beta", "seed"},
    "paths": None,  # free-form string map
}


def load_config(path) -> dict:
    """Parse and schema-validate a RunConfig JSON document; unknown keys
    anywhere are rejected."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for section, keys in doc.items():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        allowed = _CONFIG_SECTIONS[section]
        if not isinstance(keys, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        if allowed is None:
            continue
        for k in keys:
            if k not in allowed:
                raise ConfigError(f"unknown key {k!r} in config section {section!r}")
    return doc


def resolve_config(doc: dict) -> dict:
    """Build typed configuration objects from a validated document."""
    try:
        solver = SolverConfig(**doc.get("solver", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad solver config: {e}") from e
    try:
        net = NetConfig(**doc.get("net", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad net config: {e}") from e
    bounds = dict(DEFAULT_PRIOR_BOUNDS)
    for name, pair in doc.get("prior", {}).items():
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigError(f"prior bounds for {name!r} must be [lo, hi]")
        bounds[name] = (float(pair[0]), float(pair[1]))
    try:
        prior = PriorSpec(bounds)
    except ValueError as e:
        raise ConfigError(f"bad prior: {e}") from e
    sampler = {"population_n": 2048, "cov_target": 1.0, "beta": 0.2, "seed": 0}
    sampler.update(doc.get("sampler", {}))
    return {"solver": solver, "net": net, "prior": prior, "sampler": sampler, "paths": doc.get("paths", {})}


def _echo_config(cfg: dict) -> dict:
    solver = cfg["solver"]
    net = cfg["net"]
    return {
        "tool_version": __version__,
        "solver": {
            "dw_dg_ratio": solver.dw_dg_ratio,
            "csf_domain_threshold": solver.csf_domain_threshold,
            "dt_safety": solver.dt_safety,
            "seed_amplitude": solver.seed_amplitude,
            "seed_sigma_voxels": solver.seed_sigma_voxels,
        },
        "net": {
            "side": net.side,
            "channels": net.channels,
            "convs_per_block": net.convs_per_block,
            "levels": net.levels,
            "param_count": net.param_count,
        },
        "prior": {k: list(v) for k, v in cfg["prior"].bounds.items()},
        "sampler": cfg["sampler"],
    }


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_triplet(text: str, cast, flag: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"{flag} expects three comma-separated values, got {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"bad {flag}: {e}") from e


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_anatomy(args) -> int:
    dims = _parse_triplet(args.dims, int, "--dims")
    anatomy = gen_phantom(dims, spacing_mm=args.spacing_mm, rng_seed=args.seed)
    manifest = save_anatomy(anatomy, args.out, name=args.name)
    summary = {
        "command": "gen-anatomy",
        "dims": list(dims),
        "spacing_mm": args.spacing_mm,
        "seed": args.seed,
        "manifest": str(manifest),
        "tool_version": __version__,
    }
    (Path(args.out) / f"{args.name}_summary.json").write_text(json.dumps(summary, indent=2))
    _log(f"anatomy written: {manifest}")
    return 0


def _draw_dataset_sample(anatomy, solver_cfg, rng):
    lo, hi = DATASET_RANGES["D_w"]
    d_w = rng.uniform(lo, hi)
    lo, hi = DATASET_RANGES["rho"]
    rho = rng.uniform(lo, hi)
    t_lo, t_hi = DATASET_RANGES["T"]
    grid = np.arange(t_lo, t_hi + DATASET_T_GRID_STEP / 2, DATASET_T_GRID_STEP)
    t_days = float(rng.choice(grid))
    domain = anatomy.domain_mask(solver_cfg.csf_domain_threshold)
    for _ in range(SEED_DRAW_CAP):
        frac = tuple(rng.random(3))
        vx, vy, vz = seed_voxel(anatomy.dims, frac)
        if domain[vz, vy, vx]:
            return GrowthParams(d_w=d_w, rho=rho, seed=frac, t_days=t_days)
    raise RuntimeError("no valid seed found: rejection sampling cap reached")


def cmd_gen_dataset(args) -> int:
    cfg = resolve_config(load_config(args.config) if args.config else {})
    solver_cfg = cfg["solver"]
    anatomies = []
    for m in args.anatomies.split(","):
        anatomies.append(load_anatomy(m))
    if not anatomies:
        raise ConfigError("need at least one anatomy")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    samples = []
    t0 = time.perf_counter()
    for i in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, STREAM_DATASET, i)))
        a_idx = int(rng.integers(len(anatomies)))
        anatomy = anatomies[a_idx]
        params = _draw_dataset_sample(anatomy, solver_cfg, rng)
        u = simulate(anatomy, params, solver_cfg)
        vox = seed_voxel(anatomy.dims, params.seed)
        spec = CropSpec(center=vox, side=args.crop_side)
        sid = f"s{i:05d}"
        save_volume(crop_centered(u, spec, 0.0), out / f"{sid}_tumor")
        crop = crop_anatomy(anatomy, spec)
        save_volume(crop.wm, out / f"{sid}_wm")
        save_volume(crop.gm, out / f"{sid}_gm")
        save_volume(crop.csf, out / f"{sid}_csf")
        rec = {
            "id": sid,
            "anatomy_index": a_idx,
            "params": {"D_w": params.d_w, "rho": params.rho, "T": params.t_days},
            "seed_frac": list(params.seed),
            "seed_voxel": list(vox),
            "files": {
                "tumor": f"{sid}_tumor",
                "wm": f"{sid}_wm",
                "gm": f"{sid}_gm",
                "csf": f"{sid}_csf",
            },
        }
        (out / f"{sid}_params.json").write_text(json.dumps(rec, indent=2))
        samples.append(rec)
        if (i + 1) % 25 == 0 or i + 1 == args.count:
            _log(f"dataset: {i + 1}/{args.count} samples ({time.perf_counter() - t0:.1f}s)")

    manifest = {
        "version": 1,
        "crop_side": args.crop_side,
        "spacing_mm": anatomies[0].spacing_mm,
        "param_ranges": {k: list(v) for k, v in DATASET_RANGES.items()},
        "t_grid_days": DATASET_T_GRID_STEP,
        "seed": args.seed,
        "config": _echo_config(cfg),
        "n_anatomies": len(anatomies),
        "samples": samples,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2))
    _log(f"dataset manifest: {out / 'dataset.json'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = resolve_config(load_config(args.config) if args.config else {})
    anatomy = load_anatomy(args.anatomy)
    seed_frac = _parse_triplet(args.seed_frac, float, "--seed-frac")
    params = GrowthParams(d_w=args.dw, rho=args.rho, seed=seed_frac, t_days=args.t)
    u = simulate(anatomy, params, cfg["solver"])
    save_volume(u, args.out)
    summary = {
        "command": "simulate",
        "params": {"D_w": args.dw, "rho": args.rho, "T": args.t, "seed_frac": list(seed_frac)},
        "config": _echo_config(cfg),
        "out": str(args.out),
    }
    Path(str(args.out) + "_summary.json").write_text(json.dumps(summary, indent=2))
    _log(f"simulation written: {args.out}.json/.raw")
    return 0


def cmd_predict(args) -> int:
    weights = load_weights(args.weights)
    anatomy = load_anatomy(args.anatomy)
    seed_frac = _parse_triplet(args.seed_frac, float, "--seed-frac")
    vox = seed_voxel(anatomy.dims, seed_frac)
    crop = crop_anatomy(anatomy, CropSpec(center=vox, side=weights.config.side))
    u = predict(
        weights,
        anatomy_channels(crop),
        {"D_w": args.dw, "rho": args.rho, "T": args.t},
        spacing_mm=anatomy.spacing_mm,
    )
    full = embed(u, anatomy.dims, vox, 0.0, spacing_mm=anatomy.spacing_mm)
    save_volume(full, args.out)
    summary = {
        "command": "predict",
        "params": {"D_w": args.dw, "rho": args.rho, "T": args.t, "seed_frac": list(seed_frac)},
        "weights": str(args.weights),
        "net": {
            "side": weights.config.side,
            "channels": weights.config.channels,
            "convs_per_block": weights.config.convs_per_block,
            "levels": weights.config.levels,
        },
        "out": str(args.out),
    }
    Path(str(args.out) + "_summary.json").write_text(json.dumps(summary, indent=2))
    _log(f"prediction written: {args.out}.json/.raw")
    return 0


def cmd_gen_observation(args) -> int:
    anatomy = load_anatomy(args.anatomy)
    u_true = load_volume(args.truth)
    theta_i = ImagingParams(
        uc_t1c=args.uc_t1c,
        uc_flair=args.uc_flair,
        sigma_alpha=args.sigma_alpha,
        b=args.b,
        sigma=args.sigma,
    )
    stream = np.random.SeedSequence((args.seed, STREAM_OBSERVATION))
    obs = synth_observation(u_true, theta_i, anatomy, rng_seed=stream)
    manifest = save_observation(obs, args.out, name=args.name)
    summary = {
        "command": "gen-observation",
        "imaging_params": {
            "uc_t1c": args.uc_t1c,
            "uc_flair": args.uc_flair,
            "sigma_alpha": args.sigma_alpha,
            "b": args.b,
            "sigma": args.sigma,
        },
        "seed": args.seed,
        "truth": str(args.truth),
        "manifest": str(manifest),
    }
    (Path(args.out) / f"{args.name}_summary.json").write_text(json.dumps(summary, indent=2))
    _log(f"observation written: {manifest}")
    return 0


class _ConstantLogLik:
    """Debug likelihood: flat over the prior box (posterior = prior)."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, theta):
        return 0.0


def cmd_calibrate(args) -> int:
    cfg = resolve_config(load_config(args.config) if args.config else {})
    sampler = dict(cfg["sampler"])
    if args.population is not None:
        sampler["population_n"] = args.population
    if args.seed is not None:
        sampler["seed"] = args.seed
    anatomy = load_anatomy(args.anatomy)
    obs = load_observation(args.obs)
    if args.forward == "surrogate":
        if not args.weights:
            raise ConfigError("--forward surrogate requires --weights")
        weights = load_weights(args.weights)
        forward = SurrogateForward(weights, anatomy, cfg["solver"])
    else:
        forward = NumericalForward(anatomy, cfg["solver"])

    log_lik = ObservationLogLik(forward, obs)
    if args.debug_constant_likelihood:
        log_lik = _ConstantLogLik(log_lik)

    def progress(stage, p, acc, secs):
        _log(f"stage {stage}: p={p:.6f} acc={acc:.3f} elapsed={secs:.1f}s")

    t0 = time.perf_counter()
    stages, result = run_tmcmc(
        log_lik,
        cfg["prior"],
        population_n=int(sampler["population_n"]),
        cov_target=float(sampler["cov_target"]),
        beta=float(sampler["beta"]),
        rng_seed=int(sampler["seed"]),
        workers=args.workers,
        progress=progress,
    )
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    extra = {
        "command": "calibrate",
        "forward": args.forward,
        "elapsed_seconds": elapsed,
        "config": _echo_config(cfg),
        "sampler": sampler,
        "workers": args.workers,
    }
    summary_path = save_results(stages, result, out, extra=extra)
    growth_map, _ = split_theta(result.map_theta)
    try:
        u_map = forward.evaluate(growth_map)
        save_volume(u_map, out / "map_tumor")
    except ValueError as e:
        _log(f"could not render MAP tumor volume: {e}")
    _log(f"calibration summary: {summary_path} ({len(stages) - 1} stages, {elapsed:.1f}s)")
    return 0


def cmd_evaluate(args) -> int:
    try:
        doc = json.loads(Path(args.pairs).read_text())
        entries = doc["pairs"]
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"cannot read pairs manifest {args.pairs}: {e}") from e
    base = Path(args.pairs).parent
    pairs, anatomies = [], []
    for ent in entries:
        pairs.append((load_volume(base / ent["pred"]), load_volume(base / ent["sim"])))
        anatomies.append(load_anatomy(base / ent["anatomy"]))
    report = evaluate_set(pairs, anatomies)
    csv_path, json_path = write_report(report, args.out, config_echo={"pairs": str(args.pairs)})
    _log(f"report written: {csv_path}, {json_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gliosim", description=__doc__)
    ap.add_argument("--version", action="version", version=f"gliosim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-anatomy", help="generate a synthetic anatomy phantom")
    g.add_argument("--dims", required=True, help="nx,ny,nz")
    g.add_argument("--spacing-mm", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--name", default="anatomy")
    g.set_defaults(func=cmd_gen_anatomy)

    g = sub.add_parser("gen-dataset", help="export (params, anatomy, tumor) training crops")
    g.add_argument("--anatomies", required=True, help="comma-separated anatomy manifests")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--crop-side", type=int, default=64)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", default=None)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen_dataset)

    g = sub.add_parser("simulate", help="run the numerical forward model")
    g.add_argument("--anatomy", required=True)
    g.add_argument("--dw", type=float, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--t", type=float, required=True)
    g.add_argument("--seed-frac", required=True, help="x,y,z fractions in [0,1]")
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_simulate)

    g = sub.add_parser("predict", help="run the surrogate forward model")
    g.add_argument("--weights", required=True)
    g.add_argument("--anatomy", required=True)
    g.add_argument("--dw", type=float, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--t", type=float, required=True)
    g.add_argument("--seed-frac", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_predict)

    g = sub.add_parser("gen-observation", help="synthesize an observation from a truth volume")
    g.add_argument("--anatomy", required=True)
    g.add_argument("--truth", required=True, help="truth density volume path")
    g.add_argument("--uc-t1c", type=float, default=0.7)
    g.add_argument("--uc-flair", type=float, default=0.25)
    g.add_argument("--sigma-alpha", type=float, default=0.06)
    g.add_argument("--b", type=float, default=0.8)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--name", default="obs")
    g.set_defaults(func=cmd_gen_observation)

    g = sub.add_parser("calibrate", help="Bayesian personalization against an observation")
    g.add_argument("--anatomy", required=True)
    g.add_argument("--obs", required=True, help="observation manifest")
    g.add_argument("--forward", choices=("numerical", "surrogate"), default="numerical")
    g.add_argument("--weights", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--population", type=int, default=None)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--debug-constant-likelihood", action="store_true")
    g.set_defaults(func=cmd_calibrate)

    g = sub.add_parser("evaluate", help="metric report for prediction/simulation pairs")
    g.add_argument("--pairs", required=True, help="pairs manifest JSON")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_evaluate)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        _log(f"error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
