"""Patient-geometry-aware tumor growth simulation, neural surrogate
inference, and Bayesian model personalization on 3D voxel grids."""

__version__ = "0.1.0"

from .volumes import (
    Anatomy,
    CropSpec,
    ScalarField3D,
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
from .growth import (
    GrowthParams,
    SolverConfig,
    diffusion_field,
    init_seed,
    simulate,
    stable_dt,
    step,
)
from .imaging import (
    ImagingParams,
    Observation,
    alpha,
    load_observation,
    loglik_mri,
    loglik_pet,
    save_observation,
    synth_observation,
    total_loglik,
)
from .surrogate import (
    NetConfig,
    SurrogateWeights,
    conv3d,
    encode_anatomy,
    load_weights,
    predict,
    random_weights,
    save_weights,
    upsample_nn,
)
from .tmcmc import (
    NumericalForward,
    PriorSpec,
    SampleSet,
    SurrogateForward,
    log_prior,
    mh_move,
    resample,
    run,
    run_tmcmc,
    select_delta_p,
)
from .evaluation import MetricReport, dice, evaluate_set, mae_masked, per_tissue_mae

__all__ = [
    "Anatomy",
    "CropSpec",
    "GrowthParams",
    "ImagingParams",
    "MetricReport",
    "NetConfig",
    "NumericalForward",
    "Observation",
    "PriorSpec",
    "SampleSet",
    "ScalarField3D",
    "SolverConfig",
    "SurrogateForward",
    "SurrogateWeights",
    "alpha",
    "anatomy_channels",
    "conv3d",
    "crop_anatomy",
    "crop_centered",
    "dice",
    "diffusion_field",
    "embed",
    "encode_anatomy",
    "evaluate_set",
    "gen_phantom",
    "init_seed",
    "load_anatomy",
    "load_observation",
    "load_volume",
    "load_weights",
    "log_prior",
    "loglik_mri",
    "loglik_pet",
    "mae_masked",
    "mh_move",
    "per_tissue_mae",
    "predict",
    "random_weights",
    "resample",
    "run",
    "run_tmcmc",
    "save_anatomy",
    "save_observation",
    "save_volume",
    "save_weights",
    "select_delta_p",
    "simulate",
    "stable_dt",
    "step",
    "synth_observation",
    "total_loglik",
    "upsample_nn",
]
