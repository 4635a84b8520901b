"""QoS prediction with context-aware hybrid filtering, sparsity filling and
hierarchical neural regression, plus a benchmark harness."""

from .benchmark import ExperimentReport, improvement, mae, run_ablation_suite, run_experiment
from .config import PipelineConfig, derive_seed, load_config, save_config
from .data import (
    Dataset,
    GeoContext,
    QosMatrix,
    Split,
    load_dataset,
    load_split,
    make_split,
    sample_test_instances,
    save_split,
)
from .errors import ConfigError, DatasetError, PipelineError, QospredError
from .fill import FilledMatrices, MfConfig, cf_fill, mf_fill
from .filtering import (
    FilterResult,
    FilterThresholds,
    cluster_by_context,
    cluster_by_similarity,
    compute_thresholds,
    context_sensitive_merge,
    service_intensive_filter,
    user_intensive_filter,
)
from .geo import cosine_services, cosine_users, haversine
from .hierarchy import (
    ControllerDataset,
    Nrl1Output,
    PredictionTrace,
    controller,
    mae_aggregate,
    predict_one,
    run_nrl1,
    run_nrl2,
)
from .mlp import Mlp, MlpConfig, gradient_check, predict, train
from .variants import VARIANTS, VariantSpec, predict_variant, variant_by_name

__version__ = "0.1.0"
