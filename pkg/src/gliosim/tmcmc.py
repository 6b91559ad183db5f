"""Transitional MCMC over the 11 model/imaging parameters.

The sampler tempers the likelihood through exponents 0 = p_0 < ... < p_m = 1.
Each stage picks the largest exponent increment keeping the coefficient of
variation of the importance weights at a target, resamples the population
multinomially, and applies one Metropolis-Hastings move per sample with a
Gaussian proposal scaled from the weighted population covariance.

The forward model is pluggable: the numerical solver and the neural
surrogate expose the same evaluate(theta_P) -> density-field interface.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .growth import GrowthParams, SolverConfig, seed_voxel, simulate
from .imaging import ImagingParams, Observation
from .surrogate import SurrogateWeights, predict
from .volumes import Anatomy, CropSpec, ScalarField3D, anatomy_channels, crop_anatomy, embed

PARAM_NAMES = (
    "D_w",
    "rho",
    "T",
    "x",
    "y",
    "z",
    "sigma",
    "b",
    "uc_t1c",
    "uc_flair",
    "sigma_alpha",
)

# Uniform prior box over the 11 parameters. Seed coordinates are fractions
# of the volume extent so the box is geometry-independent.
DEFAULT_PRIOR_BOUNDS = {
    "D_w": (0.01, 0.08),
    "rho": (0.0001, 0.03),
    "T": (30.0, 1000.0),
    "x": (0.0, 1.0),
    "y": (0.0, 1.0),
    "z": (0.0, 1.0),
    "sigma": (0.01, 0.25),
    "b": (0.6, 1.02),
    "uc_t1c": (0.6, 0.8),
    "uc_flair": (0.05, 0.6),
    "sigma_alpha": (0.05, 0.08),
}

_RESAMPLE_TAG = 1 << 20  # stream tag clear of any sample index


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter [lo, hi] bounds of the uniform prior box."""

    bounds: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_PRIOR_BOUNDS)
    )

    def __post_init__(self):
        for name in PARAM_NAMES:
            if name not in self.bounds:
                raise ValueError(f"missing prior bounds for {name}")
            lo, hi = self.bounds[name]
            if not lo < hi:
                raise ValueError(f"bad prior bounds for {name}: [{lo}, {hi}]")

    @property
    def lows(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in PARAM_NAMES])

    @property
    def highs(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in PARAM_NAMES])

    def log_box_volume(self) -> float:
        return float(np.sum(np.log(self.highs - self.lows)))


@dataclass
class SampleSet:
    """Population snapshot for one tempering stage."""

    theta: np.ndarray
    log_likelihood: np.ndarray
    log_prior: np.ndarray
    p: float
    stage: int


@dataclass
class TmcmcResult:
    map_theta: np.ndarray
    map_log_likelihood: float
    map_log_prior: float
    stage_exponents: list[float]
    acceptance_rates: list[float]
    stage_seconds: list[float]
    n_forward_failures: int = 0

    def map_as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(PARAM_NAMES, self.map_theta)}


def log_prior(theta: np.ndarray, prior: PriorSpec) -> float:
    """Uniform box prior: -log(volume) inside, -inf outside."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < prior.lows) or np.any(theta > prior.highs):
        return -np.inf
    return -prior.log_box_volume()


def split_theta(theta: np.ndarray) -> tuple[GrowthParams, ImagingParams]:
    """Unpack the 11-vector (ordering of PARAM_NAMES) into the growth and
    imaging parameter structures."""
    t = np.asarray(theta, dtype=np.float64)
    growth = GrowthParams(d_w=t[0], rho=t[1], seed=(t[3], t[4], t[5]), t_days=t[2])
    img = ImagingParams(uc_t1c=t[8], uc_flair=t[9], sigma_alpha=t[10], b=t[7], sigma=t[6])
    return growth, img


def _weight_cov(log_liks: np.ndarray, delta: float) -> float:
    """Coefficient of variation of w_k = exp(delta * log_lik_k), computed
    with the maximum subtracted for underflow safety (COV is scale-free)."""
    finite = np.isfinite(log_liks)
    shift = np.max(log_liks[finite])
    w = np.zeros_like(log_liks)
    w[finite] = np.exp(delta * (log_liks[finite] - shift))
    m = np.mean(w)
    if m == 0:
        return np.inf
    return float(np.std(w) / m)


def select_delta_p(log_liks, p_current: float, cov_target: float = 1.0) -> float:
    """Next tempering exponent: the largest p in (p_current, 1] for which
    the importance-weight COV stays at ``cov_target`` (bisection to 1e-8),
    clipped at 1."""
    log_liks = np.asarray(log_liks, dtype=np.float64)
    finite = np.isfinite(log_liks)
    if np.sum(finite) < 2:
        raise ValueError("need at least two finite log-likelihoods")
    remaining = 1.0 - p_current
    if remaining <= 0:
        raise ValueError(f"p_current must be below 1, got {p_current}")
    spread = np.ptp(log_liks[finite])
    if spread == 0 and np.all(finite):
        return 1.0
    if _weight_cov(log_liks, remaining) <= cov_target:
        return 1.0
    lo, hi = 0.0, remaining
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if _weight_cov(log_liks, mid) <= cov_target:
            lo = mid
        else:
            hi = mid
    delta = max(0.5 * (lo + hi), 1e-10)
    return p_current + delta


def stage_weights(log_liks: np.ndarray, delta_p: float) -> np.ndarray:
    """Normalized importance weights for an exponent increment. Subtracts
    the max log-likelihood before exponentiation; invariant to additive
    shifts of the log-likelihood."""
    log_liks = np.asarray(log_liks, dtype=np.float64)
    finite = np.isfinite(log_liks)
    if not np.any(finite):
        raise ValueError("degenerate weights: no finite log-likelihood")
    shift = np.max(log_liks[finite])
    w = np.zeros_like(log_liks)
    w[finite] = np.exp(delta_p * (log_liks[finite] - shift))
    s = w.sum()
    if s <= 0:
        raise ValueError("degenerate weights: all zero after underflow guard")
    return w / s


def resample(sample_set: SampleSet, delta_p: float, rng: np.random.Generator) -> SampleSet:
    """Multinomial resampling by the stage importance weights; population
    size is preserved and the expected multiplicity of sample k is
    n * w_k."""
    w = stage_weights(sample_set.log_likelihood, delta_p)
    n = len(w)
    idx = rng.choice(n, size=n, p=w)
    return SampleSet(
        theta=sample_set.theta[idx].copy(),
        log_likelihood=sample_set.log_likelihood[idx].copy(),
        log_prior=sample_set.log_prior[idx].copy(),
        p=sample_set.p,
        stage=sample_set.stage,
    )


def proposal_cholesky(theta: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cholesky factor of the weighted population covariance, regularized
    by +1e-10 on the diagonal."""
    mu = weights @ theta
    d = theta - mu
    cov = (d * weights[:, None]).T @ d
    cov += 1e-10 * np.eye(theta.shape[1])
    return np.linalg.cholesky(cov)


def mh_move(
    theta: np.ndarray,
    log_target,
    chol: np.ndarray,
    beta: float,
    rng: np.random.Generator,
    prior: PriorSpec,
    current_log_target: float | None = None,
):
    """One Metropolis-Hastings move with proposal covariance beta^2 * Sigma.

    Proposals outside the prior box are always rejected. Returns
    (theta', log_target(theta'), accepted).
    """
    if current_log_target is None:
        current_log_target = log_target(theta)
    z = rng.standard_normal(len(theta))
    proposal = theta + beta * (chol @ z)
    u = rng.random()
    if np.any(proposal < prior.lows) or np.any(proposal > prior.highs):
        return theta, current_log_target, False
    lt = log_target(proposal)
    if np.log(u) < lt - current_log_target:
        return proposal, lt, True
    return theta, current_log_target, False


# ---------------------------------------------------------------------------
# Forward models
# ---------------------------------------------------------------------------


class NumericalForward:
    """Forward model backed by the reaction-diffusion solver."""

    def __init__(self, anatomy: Anatomy, cfg: SolverConfig = SolverConfig()):
        self.anatomy = anatomy
        self.cfg = cfg

    def evaluate(self, params: GrowthParams) -> ScalarField3D:
        return simulate(self.anatomy, params, self.cfg)


class SurrogateForward:
    """Forward model backed by the neural emulator: crop the anatomy at the
    seed, predict, and embed the prediction back into the observation grid."""

    def __init__(self, weights: SurrogateWeights, anatomy: Anatomy, cfg: SolverConfig = SolverConfig()):
        self.weights = weights
        self.anatomy = anatomy
        self.cfg = cfg

    def evaluate(self, params: GrowthParams) -> ScalarField3D:
        dims = self.anatomy.dims
        vox = seed_voxel(dims, params.seed)
        domain = self.anatomy.domain_mask(self.cfg.csf_domain_threshold)
        if not domain[vox[2], vox[1], vox[0]]:
            raise ValueError("seed outside tissue domain")
        crop = crop_anatomy(self.anatomy, CropSpec(center=vox, side=self.weights.config.side))
        u = predict(
            self.weights,
            anatomy_channels(crop),
            {"D_w": params.d_w, "rho": params.rho, "T": params.t_days},
            spacing_mm=self.anatomy.spacing_mm,
        )
        return embed(u, dims, vox, 0.0, spacing_mm=self.anatomy.spacing_mm)


class ObservationLogLik:
    """Log-likelihood of an observation under a forward model; forward
    failures (seed outside the domain, parameters outside the surrogate's
    training range) score -inf instead of aborting."""

    def __init__(self, forward, obs: Observation):
        self.forward = forward
        self.obs = obs

    def __call__(self, theta: np.ndarray) -> float:
        growth, theta_i = split_theta(theta)
        try:
            u = self.forward.evaluate(growth)
            return imaging.total_loglik(self.obs, u, theta_i)
        except (ValueError, FloatingPointError):
            return -np.inf


_WORKER_LOGLIK = None


def _init_worker(log_lik):
    global _WORKER_LOGLIK
    _WORKER_LOGLIK = log_lik


def _eval_remote(theta):
    return _WORKER_LOGLIK(theta)


class _Evaluator:
    """Maps the log-likelihood over a batch of samples, optionally across
    worker processes. Results are independent of the worker count."""

    def __init__(self, log_lik, workers: int = 1):
        self.log_lik = log_lik
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(
                max_workers=workers, initializer=_init_worker, initargs=(log_lik,)
            )
            self.workers = workers

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        if self.pool is None:
            return np.array([self.log_lik(t) for t in thetas], dtype=np.float64)
        chunk = max(1, len(thetas) // (4 * self.workers))
        return np.fromiter(
            self.pool.map(_eval_remote, thetas, chunksize=chunk),
            dtype=np.float64,
            count=len(thetas),
        )

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run_tmcmc(
    log_likelihood,
    prior: PriorSpec,
    population_n: int = 2048,
    cov_target: float = 1.0,
    beta: float = 0.2,
    rng_seed: int = 0,
    workers: int = 1,
    progress=None,
    max_stages: int = 200,
) -> tuple[list[SampleSet], TmcmcResult]:
    """Core sampler over an arbitrary log-likelihood.

    Reproducible for a fixed seed regardless of worker count: every random
    draw comes from a stream keyed by (seed, stage, sample index).
    """
    if population_n < 8:
        raise ValueError("population_n must be at least 8")
    n_par = len(PARAM_NAMES)
    lows, highs = prior.lows, prior.highs
    lp_inside = -prior.log_box_volume()

    rng0 = np.random.default_rng(np.random.SeedSequence((rng_seed, 0)))
    theta = lows + (highs - lows) * rng0.random((population_n, n_par))

    evaluator = _Evaluator(log_likelihood, workers)
    n_failures = 0
    try:
        t_start = time.perf_counter()
        lls = evaluator(theta)
        n_failures += int(np.sum(~np.isfinite(lls)))
        lps = np.full(population_n, lp_inside)
        stages = [SampleSet(theta.copy(), lls.copy(), lps.copy(), 0.0, 0)]

        best = int(np.argmax(lls))
        map_theta = theta[best].copy()
        map_ll = float(lls[best])
        map_lp = lp_inside

        exponents = [0.0]
        acc_rates: list[float] = []
        stage_secs = [time.perf_counter() - t_start]

        p = 0.0
        stage = 0
        while p < 1.0:
            stage += 1
            if stage > max_stages:
                raise RuntimeError(f"tempering did not reach p=1 in {max_stages} stages")
            t0 = time.perf_counter()

            p_next = select_delta_p(lls, p, cov_target)
            dp = p_next - p
            w = stage_weights(lls, dp)
            chol = proposal_cholesky(theta, w)

            rng_rs = np.random.default_rng(np.random.SeedSequence((rng_seed, stage, _RESAMPLE_TAG)))
            idx = rng_rs.choice(population_n, size=population_n, p=w)
            theta = theta[idx].copy()
            lls = lls[idx].copy()

            # One MH move per sample: proposals and accept draws come from
            # per-sample streams, likelihood evaluations are batched.
            zs = np.empty((population_n, n_par))
            us = np.empty(population_n)
            for k in range(population_n):
                rng_k = np.random.default_rng(np.random.SeedSequence((rng_seed, stage, k)))
                zs[k] = rng_k.standard_normal(n_par)
                us[k] = rng_k.random()
            proposals = theta + beta * (zs @ chol.T)
            inside = np.all((proposals >= lows) & (proposals <= highs), axis=1)

            prop_lls = np.full(population_n, -np.inf)
            if np.any(inside):
                prop_lls[inside] = evaluator(proposals[inside])
            n_failures += int(np.sum(~np.isfinite(prop_lls[inside])))

            with np.errstate(invalid="ignore"):
                log_ratio = p_next * (prop_lls - lls)
                log_ratio = np.where(np.isfinite(lls), log_ratio, np.inf)
            accept = inside & (np.log(us) < log_ratio)
            theta[accept] = proposals[accept]
            lls[accept] = prop_lls[accept]

            evaluated = inside & np.isfinite(prop_lls)
            if np.any(evaluated):
                k_best = int(np.argmax(np.where(evaluated, prop_lls, -np.inf)))
                if prop_lls[k_best] + lp_inside > map_ll + map_lp:
                    map_theta = proposals[k_best].copy()
                    map_ll = float(prop_lls[k_best])

            lps = np.full(population_n, lp_inside)
            stages.append(SampleSet(theta.copy(), lls.copy(), lps, p_next, stage))
            exponents.append(p_next)
            acc = float(np.mean(accept))
            acc_rates.append(acc)
            stage_secs.append(time.perf_counter() - t0)
            if progress is not None:
                progress(stage, p_next, acc, stage_secs[-1])
            p = p_next
    finally:
        evaluator.close()

    result = TmcmcResult(
        map_theta=map_theta,
        map_log_likelihood=map_ll,
        map_log_prior=map_lp,
        stage_exponents=exponents,
        acceptance_rates=acc_rates,
        stage_seconds=stage_secs,
        n_forward_failures=n_failures,
    )
    return stages, result


def run(
    forward,
    obs: Observation,
    prior: PriorSpec,
    population_n: int = 2048,
    cov_target: float = 1.0,
    beta: float = 0.2,
    rng_seed: int = 0,
    workers: int = 1,
    progress=None,
) -> tuple[list[SampleSet], TmcmcResult]:
    """Calibrate the 11 parameters against an observation.

    Stage 0 draws from the prior; each following stage advances the
    tempering exponent, resamples, and mutates, until p = 1. The MAP is the
    best (log-likelihood + log-prior) sample evaluated anywhere in the run.
    """
    log_lik = ObservationLogLik(forward, obs)
    return run_tmcmc(
        log_lik,
        prior,
        population_n=population_n,
        cov_target=cov_target,
        beta=beta,
        rng_seed=rng_seed,
        workers=workers,
        progress=progress,
    )


def save_results(stages: list[SampleSet], result: TmcmcResult, out_dir, extra: dict | None = None) -> Path:
    """Write per-stage sample CSVs and a JSON summary; returns the summary path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in stages:
        with open(out / f"stage_{s.stage:03d}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(list(PARAM_NAMES) + ["log_likelihood", "log_prior"])
            for k in range(len(s.theta)):
                row = [f"{v:.17g}" for v in s.theta[k]]
                row.append(f"{s.log_likelihood[k]:.17g}")
                row.append(f"{s.log_prior[k]:.17g}")
                wr.writerow(row)
    summary = {
        "map_theta": result.map_as_dict(),
        "map_log_likelihood": result.map_log_likelihood,
        "map_log_prior": result.map_log_prior,
        "stage_exponents": result.stage_exponents,
        "acceptance_rates": result.acceptance_rates,
        "stage_seconds": result.stage_seconds,
        "n_forward_failures": result.n_forward_failures,
        "n_stages": len(stages) - 1,
    }
    if extra:
        summary.update(extra)
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2))
    return path
