"""Cox-objective neural survival models and their predictive distributions."""
from .checkpoint import load_model, save_model
from .models import (
    MCDConfig,
    MCDModel,
    PointModel,
    RiskModel,
    SNGPConfig,
    SNGPHead,
    SNGPModel,
    VariationalLayer,
    VIModel,
    kl_diag_gaussian,
    model_from_dict,
)
from .objectives import CoxObjective, GaussianTimeObjective
from .predictive import (
    CredibleInterval,
    PredictiveDraws,
    UntrainedModelError,
    count_parameters,
    credible_interval,
    gaussian_survival,
    mean_curves,
    predict_risk_draws,
    predict_survival_band,
    predict_time_draws,
    sample_risks,
)
from .training import (
    EarlyStopping,
    TrainingDivergedError,
    event_stratified_batches,
    fit,
    rng_streams,
    train_mcd,
    train_mlp,
    train_sngp,
    train_vi,
)
