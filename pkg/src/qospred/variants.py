"""The benchmark's method variants as pipeline toggles.

Seventeen intermediate methods plus the full pipeline, spanning: which
filtering order runs (user-intensive, service-intensive, or both), whether
context clustering participates, which fill routes run, and what predicts
the target (the fill value itself, a single regression network, or the full
hierarchy with its aggregator choices).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .config import PipelineConfig, derive_seed
from .data import Dataset, Split
from .errors import ConfigError, PipelineError
from .fill import cf_fill, mf_fill
from .filtering import compute_thresholds, service_intensive_filter, user_intensive_filter
from .hierarchy import predict_one


@dataclass(frozen=True)
class VariantSpec:
    name: str
    filtering: str  # "user-intensive" | "service-intensive" | "hybrid"
    context_filter: bool
    fill: str  # "none" | "cf" | "mf" | "both"
    predictor: str  # "cf-value" | "mf-value" | "nr" | "hierarchical"
    aggregator: str  # "controller" | "nrl2-only" | "mae-ag-only" | "n/a"
    use_nrl1: bool = True

    def __post_init__(self):
        if self.predictor == "hierarchical" and (
            self.fill != "both" or self.filtering != "hybrid"
        ):
            raise ConfigError(
                f"{self.name}: hierarchical prediction requires hybrid filtering "
                "and both fill routes"
            )


def _v(name, filtering, context, fill, predictor, aggregator="n/a", use_nrl1=True):
    return VariantSpec(name, filtering, context, fill, predictor, aggregator, use_nrl1)


VARIANTS = {
    v.name: v
    for v in (
        _v("UMF", "user-intensive", True, "mf", "mf-value"),
        _v("SMF", "service-intensive", True, "mf", "mf-value"),
        _v("UCF", "user-intensive", True, "cf", "cf-value"),
        _v("SCF", "service-intensive", True, "cf", "cf-value"),
        _v("UNR", "user-intensive", True, "none", "nr"),
        _v("SNR", "service-intensive", True, "none", "nr"),
        _v("UMNR", "user-intensive", True, "mf", "nr"),
        _v("SMNR", "service-intensive", True, "mf", "nr"),
        _v("UCNR", "user-intensive", True, "cf", "nr"),
        _v("SCNR", "service-intensive", True, "cf", "nr"),
        _v("CAHPHFWoNN", "hybrid", True, "both", "hierarchical", "controller", use_nrl1=False),
        _v("CAHPHF-MAE", "hybrid", True, "both", "hierarchical", "mae-ag-only"),
        _v("UCNRWoCF", "user-intensive", False, "cf", "nr"),
        _v("SCNRWoCF", "service-intensive", False, "cf", "nr"),
        _v("UMNRWoCF", "user-intensive", False, "mf", "nr"),
        _v("SMNRWoCF", "service-intensive", False, "mf", "nr"),
        _v("CAHPHFWoCF", "hybrid", False, "both", "hierarchical", "controller"),
        _v("CAHPHF", "hybrid", True, "both", "hierarchical", "controller"),
    )
}

INTERMEDIATE_NAMES = tuple(n for n in VARIANTS if n != "CAHPHF")


def variant_by_name(name: str) -> VariantSpec:
    key = name.replace("_", "").replace("-", "").lower()
    for canonical, spec in VARIANTS.items():
        if canonical.replace("-", "").lower() == key:
            return spec
    raise ConfigError(
        f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}"
    )


def predict_variant(
    dataset: Dataset,
    split: Split,
    target: tuple,
    variant: VariantSpec,
    config: PipelineConfig,
    *,
    seed: int = 0,
    time_slice: int = 0,
    user_sims: np.ndarray | None = None,
    service_sims: np.ndarray | None = None,
) -> float:
    """Predict one target cell under the given variant's toggles."""
    cfg = config.replace(context_filter=config.context_filter and variant.context_filter)
    if variant.predictor == "hierarchical":
        trace = predict_one(
            dataset, split, target, cfg,
            aggregator=variant.aggregator, use_nrl1=variant.use_nrl1,
            time_slice=time_slice, seed=seed,
            user_sims=user_sims, service_sims=service_sims,
        )
        return trace.final
    return _predict_single_side(
        dataset, split, target, variant, cfg,
        seed=seed, time_slice=time_slice,
        user_sims=user_sims, service_sims=service_sims,
    )


def _predict_single_side(
    dataset, split, target, variant, config,
    *, seed, time_slice, user_sims, service_sims,
):
    t1, t2 = int(target[0]), int(target[1])
    if split.train_mask[t1, t2]:
        raise PipelineError(f"target cell ({t1}, {t2}) is inside the training mask")
    thresholds = compute_thresholds(
        dataset, split, t1, t2, config.k,
        time_slice=time_slice, user_sims=user_sims, service_sims=service_sims,
    )
    if variant.filtering == "user-intensive":
        filt = user_intensive_filter(
            dataset, split, t1, t2, thresholds,
            context_filter=config.context_filter, min_neighbors=config.min_neighbors,
            time_slice=time_slice, user_sims=user_sims,
        )
    elif variant.filtering == "service-intensive":
        filt = service_intensive_filter(
            dataset, split, t1, t2, thresholds,
            context_filter=config.context_filter, min_neighbors=config.min_neighbors,
            time_slice=time_slice, service_sims=service_sims,
        )
    else:
        raise PipelineError(f"variant {variant.name} has no single filtering side")

    i = filt.user_pos(t1)
    j = filt.service_pos(t2)

    if variant.fill == "cf":
        filled = cf_fill(filt).values
    elif variant.fill == "mf":
        filled = mf_fill(filt, config.mf_config(derive_seed(seed, "mf", variant.filtering))).values
    elif variant.fill == "none":
        filled = None
    else:
        raise PipelineError(f"variant {variant.name}: unsupported fill {variant.fill!r}")

    if variant.predictor in ("cf-value", "mf-value"):
        return float(filled[i, j])

    if variant.predictor != "nr":
        raise PipelineError(f"variant {variant.name}: unsupported predictor")
    values = filt.submatrix.values if filled is None else filled
    n, m = values.shape
    rows = np.delete(np.arange(n), i)
    if filled is None:
        # raw sparse matrix: only rows with an observed label are usable
        rows = rows[values[rows, j] > 0]
    if rows.size < 2:
        return float(cf_fill(filt).values[i, j])
    cols = np.delete(np.arange(m), j)
    # seed by pipeline shape, not variant name, so context-free twins
    # (UCNR vs UCNRWoCF) stay bit-identical
    cfg = config.nrl1_config(derive_seed(seed, "nr", variant.filtering, variant.fill))
    model = mlp.train(cfg, values[np.ix_(rows, cols)], values[rows, j])
    return max(float(mlp.predict(model, values[i, cols])), 0.0)
