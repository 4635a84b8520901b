"""Synthetic invocation-log generator with WS-DREAM-like marginals.

Produces response-time (seconds, heavy-tailed, mean near 0.9) or throughput
(kbps-scale) matrices with learnable structure: per-service base values,
per-user multipliers, a mild low-rank interaction, a geographic term that
grows with user-service distance, and multiplicative lognormal noise. Users
and services sit in randomly placed clusters so context filtering has signal
to exploit. The same module writes datasets to disk in the loader's file
layout, which makes the CLI usable without the real logs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset, GeoContext, QosMatrix
from .geo import haversine_matrix


def make_dataset(
    n_users: int,
    n_services: int,
    qos: str = "rt",
    seed: int = 0,
    with_context: bool = True,
    n_slices: int = 1,
    noise: float = 0.15,
    observed_fraction: float = 1.0,
    name: str = "synth",
) -> Dataset:
    """Generate a dataset; deterministic under ``seed``."""
    rng = np.random.default_rng(seed)

    n_clusters = max(3, min(8, (n_users + n_services) // 40 + 3))
    centers = np.column_stack(
        [rng.uniform(-55, 65, n_clusters), rng.uniform(-170, 170, n_clusters)]
    )

    def place(n):
        cluster = rng.integers(0, n_clusters, n)
        lat = np.clip(centers[cluster, 0] + rng.normal(0, 1.5, n), -89, 89)
        lon = np.clip(centers[cluster, 1] + rng.normal(0, 1.5, n), -179, 179)
        return np.column_stack([lat, lon])

    u_coords = place(n_users)
    s_coords = place(n_services)

    base = np.exp(rng.normal(np.log(0.35), 0.8, n_services))  # service base value
    user_factor = np.exp(rng.normal(0.0, 0.35, n_users))
    a = rng.normal(0, 1, (n_users, 2))
    b = rng.normal(0, 1, (n_services, 2))
    interaction = np.exp(0.15 * (a @ b.T))

    all_coords = np.vstack([u_coords, s_coords])
    dist = haversine_matrix(all_coords)[:n_users, n_users:]
    geo_term = 1.0 + 0.8 * dist / 20015.0  # up to +80% at antipodes

    signal = np.outer(user_factor, base) * interaction * geo_term
    scale = 50.0 if qos == "tp" else 1.0

    matrices = []
    for t in range(n_slices):
        eps = np.exp(rng.normal(0.0, noise, (n_users, n_services)))
        values = np.clip(signal * eps * scale, 0.01 * scale, 20.0 * scale)
        if observed_fraction < 1.0:
            gone = rng.random((n_users, n_services)) >= observed_fraction
            values = np.where(gone, 0.0, values)
        matrices.append(QosMatrix(values))

    if with_context:
        users = tuple(
            (f"u{i}", GeoContext(float(u_coords[i, 0]), float(u_coords[i, 1])))
            for i in range(n_users)
        )
        services = tuple(
            (f"s{j}", GeoContext(float(s_coords[j, 0]), float(s_coords[j, 1])))
            for j in range(n_services)
        )
    else:
        users = tuple((f"u{i}", None) for i in range(n_users))
        services = tuple((f"s{j}", None) for j in range(n_services))

    return Dataset(name=name, qos=qos, users=users, services=services, matrices=tuple(matrices))


def write_dataset(dataset: Dataset, root) -> None:
    """Write a dataset directory in the loader's layout: one matrix file per
    slice plus metadata files when contexts exist."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    many = dataset.n_slices > 1
    for t, qm in enumerate(dataset.matrices):
        name = f"{dataset.qos}Matrix_{t:02d}.txt" if many else f"{dataset.qos}Matrix.txt"
        _write_matrix(qm.values, root / name)
    if not dataset.context_free:
        _write_entities(dataset.users, "User ID", root / "userlist.txt")
        _write_entities(dataset.services, "Service ID", root / "wslist.txt")


def _write_matrix(values: np.ndarray, path: Path) -> None:
    with open(path, "w") as fh:
        for row in values:
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")


def _write_entities(entities, id_name: str, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"[{id_name}]\t[Latitude]\t[Longitude]\n")
        for ident, ctx in entities:
            if ctx is None:
                fh.write(f"{ident}\tnull\tnull\n")
            else:
                fh.write(f"{ident}\t{ctx.latitude:.6f}\t{ctx.longitude:.6f}\n")
