"""Metrics and the experiment protocol.

An experiment runs one variant over a grid of training densities, with a
fresh split and a fresh sample of test targets per episode (and per time
slice for multi-slice datasets), and reports per-episode and mean MAE.
Split and target seeds are derived from the experiment seed without the
variant name, so different variants run on identical splits and targets and
ablation comparisons are paired. Everything is deterministic under the seed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig, derive_seed
from .data import Dataset, make_split, sample_test_instances
from .errors import ConfigError
from .geo import cosine_rows
from .variants import VariantSpec, VARIANTS, predict_variant


def mae(predictions) -> float:
    """Mean absolute error over (predicted, actual) pairs."""
    arr = np.asarray(predictions, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("mae of an empty prediction set")
    arr = arr.reshape(-1, 2)
    return float(np.abs(arr[:, 0] - arr[:, 1]).mean())


def improvement(mae1: float, mae2: float) -> float:
    """Relative MAE reduction of method 1 over method 2, in percent."""
    if mae2 <= 0:
        raise ConfigError("improvement baseline MAE must be > 0")
    return (mae2 - mae1) / mae2 * 100.0


@dataclass(frozen=True)
class EpisodeResult:
    density: float
    episode: int
    mae: float
    n_targets: int
    split_fingerprint: str
    elapsed_s: float


@dataclass(frozen=True)
class ExperimentReport:
    variant: str
    dataset: str
    qos: str
    densities: tuple
    episodes: int
    test_k: int
    seed: int
    rows: tuple  # of EpisodeResult
    config_lines: tuple
    wall_time_s: float

    def mean_mae(self, density: float) -> float:
        vals = [r.mae for r in self.rows if r.density == density]
        if not vals:
            raise ConfigError(f"no episodes recorded for density {density}")
        return float(np.mean(vals))

    def mean_maes(self) -> dict:
        return {d: self.mean_mae(d) for d in self.densities}


def run_experiment(
    dataset: Dataset,
    qos: str,
    variant: VariantSpec,
    densities,
    episodes: int,
    test_k: int,
    seed: int,
    config: PipelineConfig = PipelineConfig(),
) -> ExperimentReport:
    """Run one variant across densities and episodes.

    Episode targets run in parallel when ``config.threads`` > 1; results are
    independent of scheduling because every prediction derives its own seed.
    """
    if qos != dataset.qos:
        raise ConfigError(
            f"dataset was loaded for qos {dataset.qos!r}, experiment asked for {qos!r}"
        )
    densities = tuple(float(d) for d in densities)
    for d in densities:
        if not 0.0 < d < 1.0:
            raise ConfigError(f"density must be in (0, 1), got {d}")
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")

    start = time.perf_counter()
    rows = []
    for density in densities:
        for episode in range(episodes):
            rows.append(_run_episode(dataset, variant, density, episode, test_k, seed, config))
    return ExperimentReport(
        variant=variant.name,
        dataset=dataset.name,
        qos=dataset.qos,
        densities=densities,
        episodes=episodes,
        test_k=test_k,
        seed=seed,
        rows=tuple(rows),
        config_lines=tuple(config.resolved_lines()),
        wall_time_s=time.perf_counter() - start,
    )


def _run_episode(
    dataset: Dataset,
    variant: VariantSpec,
    density: float,
    episode: int,
    test_k: int,
    seed: int,
    config: PipelineConfig,
) -> EpisodeResult:
    t0 = time.perf_counter()
    slice_maes = []
    fingerprints = []
    for t in range(dataset.n_slices):
        matrix = dataset.matrix(t)
        split = make_split(matrix, density, derive_seed(seed, "split", density, episode, t))
        targets = sample_test_instances(
            split, test_k, derive_seed(seed, "targets", density, episode, t)
        )
        fingerprints.append(split.fingerprint())

        train = split.train_values(matrix)
        user_sims = cosine_rows(train)
        service_sims = cosine_rows(train.T)
        inner = config.replace(threads=1) if config.threads > 1 else config

        def one(cell):
            i, j = int(cell[0]), int(cell[1])
            pred = predict_variant(
                dataset, split, (i, j), variant, inner,
                seed=derive_seed(seed, "predict", density, episode, t, i, j),
                time_slice=t, user_sims=user_sims, service_sims=service_sims,
            )
            return pred, float(matrix.values[i, j])

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                pairs = list(pool.map(one, targets))
        else:
            pairs = [one(cell) for cell in targets]
        slice_maes.append(mae(pairs))
    return EpisodeResult(
        density=density,
        episode=episode,
        mae=float(np.mean(slice_maes)),
        n_targets=test_k * dataset.n_slices,
        split_fingerprint=";".join(fingerprints) if len(fingerprints) > 1 else fingerprints[0],
        elapsed_s=time.perf_counter() - t0,
    )


def run_ablation_suite(
    dataset: Dataset,
    qos: str,
    density: float,
    episodes: int,
    test_k: int,
    seed: int,
    config: PipelineConfig = PipelineConfig(),
    variants=None,
) -> list:
    """Run every variant (17 intermediates plus the full pipeline) on
    identical splits and target samples."""
    names = list(variants) if variants is not None else list(VARIANTS)
    reports = []
    for name in names:
        reports.append(
            run_experiment(
                dataset, qos, VARIANTS[name], (density,), episodes, test_k, seed, config
            )
        )
    return reports
