"""Invocation-log datasets, geo contexts and train/validation/test splits.

A dataset directory holds one whitespace-separated matrix file per QoS
parameter per time slice (``rtMatrix.txt``, ``tpMatrix_00.txt``, ...) plus
optional ``userlist.txt`` / ``wslist.txt`` metadata files carrying latitude
and longitude columns. Negative sentinel values in matrix files (failed
invocations) are mapped to 0, which encodes "never invoked".
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError

DATASET_TAGS = ("ws1", "ws2")
QOS_TAGS = ("rt", "tp")


@dataclass(frozen=True)
class GeoContext:
    """Latitude/longitude pair in degrees."""

    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise DatasetError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise DatasetError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class QosMatrix:
    """Dense user x service grid of non-negative QoS values; 0 = unobserved."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DatasetError(f"QoS matrix must be 2-dimensional, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise DatasetError("QoS matrix contains non-finite values")
        if (v < 0).any():
            raise DatasetError("QoS matrix contains negative values")
        object.__setattr__(self, "values", v)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_services(self) -> int:
        return self.values.shape[1]

    def observed_mask(self) -> np.ndarray:
        return self.values > 0

    def density(self) -> float:
        return float(np.count_nonzero(self.values)) / self.values.size


@dataclass(frozen=True)
class Dataset:
    """Users, services and one QosMatrix per QoS parameter per time slice."""

    name: str
    qos: str
    users: tuple  # of (id, GeoContext | None)
    services: tuple  # of (id, GeoContext | None)
    matrices: tuple  # of QosMatrix, one per time slice

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_services(self) -> int:
        return len(self.services)

    @property
    def n_slices(self) -> int:
        return len(self.matrices)

    @property
    def context_free(self) -> bool:
        """True when any entity lacks a geo context; context filtering is bypassed."""
        return any(c is None for _, c in self.users) or any(
            c is None for _, c in self.services
        )

    def matrix(self, time_slice: int = 0) -> QosMatrix:
        return self.matrices[time_slice]

    def user_coords(self) -> np.ndarray:
        """(n_users, 2) array of lat/lon; NaN rows where context is missing."""
        return _coords([c for _, c in self.users])

    def service_coords(self) -> np.ndarray:
        return _coords([c for _, c in self.services])


def _coords(contexts) -> np.ndarray:
    out = np.full((len(contexts), 2), np.nan)
    for i, c in enumerate(contexts):
        if c is not None:
            out[i, 0] = c.latitude
            out[i, 1] = c.longitude
    return out


@dataclass(frozen=True)
class Split:
    """Reproducible partition of one matrix's observed cells.

    Training cells stay visible; the remaining observed cells are divided
    1:2 into validation and test.
    """

    train_mask: np.ndarray  # bool (n_users, n_services)
    validation_cells: np.ndarray  # int (k, 2)
    test_cells: np.ndarray  # int (k, 2)
    density: float
    seed: int

    def train_values(self, matrix: QosMatrix) -> np.ndarray:
        """Matrix values with non-training cells zeroed out."""
        return np.where(self.train_mask, matrix.values, 0.0)

    def n_train(self) -> int:
        return int(np.count_nonzero(self.train_mask))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.density!r} {self.seed}".encode())
        h.update(np.packbits(self.train_mask).tobytes())
        h.update(np.ascontiguousarray(self.validation_cells, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.test_cells, dtype=np.int64).tobytes())
        return h.hexdigest()


def make_split(matrix: QosMatrix, density: float, seed: int) -> Split:
    """Keep ``density`` of the observed cells for training; split the rest 1:2
    into validation:test, uniformly at random under ``seed``."""
    if not 0.0 < density < 1.0:
        raise ConfigError(f"density must be in (0, 1), got {density}")
    observed = np.argwhere(matrix.values > 0)
    if observed.shape[0] == 0:
        raise DatasetError("matrix has no observed entries to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(observed.shape[0])
    observed = observed[order]

    n_obs = observed.shape[0]
    n_train = int(round(density * n_obs))
    rest = n_obs - n_train
    n_val = int(round(rest / 3.0))

    train_cells = observed[:n_train]
    val_cells = observed[n_train : n_train + n_val]
    test_cells = observed[n_train + n_val :]

    mask = np.zeros(matrix.values.shape, dtype=bool)
    mask[train_cells[:, 0], train_cells[:, 1]] = True
    return Split(
        train_mask=mask,
        validation_cells=np.array(val_cells, dtype=np.int64),
        test_cells=np.array(test_cells, dtype=np.int64),
        density=density,
        seed=seed,
    )


def sample_test_instances(split: Split, k: int, seed: int) -> np.ndarray:
    """k distinct test cells, uniform without replacement, deterministic under seed."""
    n = split.test_cells.shape[0]
    if k > n:
        raise ConfigError(f"requested {k} test instances but only {n} available")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    return split.test_cells[idx]


def save_split(split: Split, path) -> None:
    """Line-oriented text export so an experiment's split is exactly replayable."""
    lines = [
        f"density {split.density!r}",
        f"seed {split.seed}",
        f"shape {split.train_mask.shape[0]} {split.train_mask.shape[1]}",
        "train",
    ]
    for i, j in np.argwhere(split.train_mask):
        lines.append(f"{i} {j}")
    lines.append("validation")
    for i, j in split.validation_cells:
        lines.append(f"{i} {j}")
    lines.append("test")
    for i, j in split.test_cells:
        lines.append(f"{i} {j}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path) -> Split:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"split file not found: {path}")
    density = seed = shape = None
    section = None
    cells = {"train": [], "validation": [], "test": []}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("density "):
            density = float(line.split()[1])
        elif line.startswith("seed "):
            seed = int(line.split()[1])
        elif line.startswith("shape "):
            _, a, b = line.split()
            shape = (int(a), int(b))
        elif line in cells:
            section = line
        else:
            if section is None:
                raise DatasetError(f"{path}: line {lineno}: cell before section header")
            try:
                i, j = line.split()
                cells[section].append((int(i), int(j)))
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {raw!r}") from exc
    if density is None or seed is None or shape is None:
        raise DatasetError(f"{path}: missing density/seed/shape header")
    mask = np.zeros(shape, dtype=bool)
    train = np.array(cells["train"], dtype=np.int64).reshape(-1, 2)
    mask[train[:, 0], train[:, 1]] = True
    return Split(
        train_mask=mask,
        validation_cells=np.array(cells["validation"], dtype=np.int64).reshape(-1, 2),
        test_cells=np.array(cells["test"], dtype=np.int64).reshape(-1, 2),
        density=density,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Dataset loading


def load_dataset(root_path, which: str, qos: str) -> Dataset:
    """Load a WS-DREAM-style dataset directory.

    ``which`` is ``ws1`` (metadata files with coordinates required) or ``ws2``
    (no contextual metadata; every entity is context-free). ``qos`` selects the
    matrix files: ``rt`` or ``tp``. All files matching ``<qos>Matrix*.txt``
    are loaded as time slices in sorted order.
    """
    root = Path(root_path)
    if which not in DATASET_TAGS:
        raise ConfigError(f"unknown dataset tag {which!r}; expected one of {DATASET_TAGS}")
    if qos not in QOS_TAGS:
        raise ConfigError(f"unknown qos tag {qos!r}; expected one of {QOS_TAGS}")
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")

    matrix_files = sorted(root.glob(f"{qos}Matrix*.txt"))
    if not matrix_files:
        raise DatasetError(f"no {qos}Matrix*.txt files under {root}")
    grids = [_load_matrix_file(p) for p in matrix_files]
    shape = grids[0].shape
    for p, g in zip(matrix_files, grids):
        if g.shape != shape:
            raise DatasetError(
                f"{p}: shape {g.shape} differs from first slice shape {shape}"
            )
    n_users, n_services = shape

    if which == "ws1":
        users = _load_entities(root / "userlist.txt", n_users)
        services = _load_entities(root / "wslist.txt", n_services)
    else:
        users = tuple((str(i), None) for i in range(n_users))
        services = tuple((str(i), None) for i in range(n_services))

    return Dataset(
        name=which,
        qos=qos,
        users=users,
        services=services,
        matrices=tuple(QosMatrix(g) for g in grids),
    )


def _load_matrix_file(path: Path) -> np.ndarray:
    try:
        grid = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise DatasetError(f"cannot read matrix file {path}: {exc}") from exc
    except ValueError:
        # slower pass to point at the offending line
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            for tok in line.split():
                try:
                    float(tok)
                except ValueError:
                    raise DatasetError(
                        f"{path}: line {lineno}: non-numeric token {tok!r}"
                    ) from None
        raise DatasetError(f"{path}: inconsistent row lengths") from None
    # negative sentinels (e.g. -1 for failed invocations) become "unobserved"
    grid[grid <= 0] = 0.0
    return grid


_NULL_TOKENS = {"", "null", "none", "nan", "-"}


def _load_entities(path: Path, expected: int) -> tuple:
    if not path.exists():
        raise DatasetError(f"metadata file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty metadata file")
    header = _split_row(lines[0])
    lat_col = _find_column(header, "latitude")
    lon_col = _find_column(header, "longitude")
    if lat_col is None or lon_col is None:
        raise DatasetError(f"{path}: header has no latitude/longitude columns: {header}")

    entities = []
    for lineno, line in enumerate(lines[1:], start=2):
        row = _split_row(line)
        if len(row) <= max(lat_col, lon_col):
            raise DatasetError(f"{path}: line {lineno}: too few columns: {line!r}")
        ident = row[0]
        lat_tok = row[lat_col].lower()
        lon_tok = row[lon_col].lower()
        if lat_tok in _NULL_TOKENS or lon_tok in _NULL_TOKENS:
            entities.append((ident, None))
            continue
        try:
            ctx = GeoContext(float(row[lat_col]), float(row[lon_col]))
        except ValueError:
            raise DatasetError(
                f"{path}: line {lineno}: unparseable coordinates "
                f"{row[lat_col]!r}, {row[lon_col]!r}"
            ) from None
        entities.append((ident, ctx))
    if len(entities) != expected:
        raise DatasetError(
            f"{path}: {len(entities)} entities but matrix has {expected} rows/columns"
        )
    return tuple(entities)


def _split_row(line: str) -> list:
    if "\t" in line:
        return [c.strip() for c in line.split("\t")]
    return line.split()


def _find_column(header: list, name: str):
    for idx, cell in enumerate(header):
        if name in re.sub(r"[\[\]]", "", cell).strip().lower():
            return idx
    return None
