"""Flow-record datasets: CSV ingestion, synthetic fixtures, normalization,
stratified splitting and partitioning among local units.

A :class:`Dataset` keeps its features as one read-only ``(N, K)`` float64
array plus a label vector and the original row ids, so partitions and
splits can be checked for disjointness by record identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class SchemaProfile:
    """Which CSV columns are model features and which holds the label.

    With ``feature_columns`` left empty every column except the label and
    ``drop_columns`` is used, in file order.
    """

    label_column: str = "label"
    feature_columns: tuple[str, ...] = ()
    drop_columns: tuple[str, ...] = ()


# WUSTL-IIoT-2021 flow export: identifiers, timestamps and the multi-class
# traffic tag are not features. The remaining numeric columns give K = 40.
WUSTL_IIOT = SchemaProfile(
    label_column="Target",
    drop_columns=("StartTime", "LastTime", "SrcAddr", "DstAddr", "sIpId", "dIpId", "Traffic"),
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    schema: tuple[str, ...]
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int8)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DatasetError(f"{y.shape[0]} labels for {x.shape[0]} records")
        if x.shape[1] != len(self.schema):
            raise DatasetError(f"{x.shape[1]} feature columns but schema names {len(self.schema)}")
        if not np.isfinite(x).all():
            raise DatasetError("features must be finite")
        if y.size and not np.isin(y, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        ids = np.arange(x.shape[0]) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise DatasetError("ids do not match record count")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "ids", _readonly(ids))
        object.__setattr__(self, "schema", tuple(self.schema))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> FlowRecord:
        return FlowRecord(self.features[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[FlowRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_attacks(self) -> int:
        return int(self.labels.sum())

    @property
    def n_normals(self) -> int:
        return len(self) - self.n_attacks

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.schema, self.ids[index])

    def equals(self, other: "Dataset") -> bool:
        return (self.schema == other.schema
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


def concat(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise DatasetError("nothing to concatenate")
    schema = parts[0].schema
    for p in parts[1:]:
        if p.schema != schema:
            raise DatasetError("schema mismatch between parts")
    return Dataset(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   schema,
                   np.concatenate([p.ids for p in parts]))


def load_csv(path, schema: SchemaProfile = SchemaProfile()) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    columns = [c.strip() for c in frame.columns]
    frame.columns = columns

    if schema.label_column not in columns:
        raise DatasetError(f"label column {schema.label_column!r} absent from {path}")
    if schema.feature_columns:
        missing = [c for c in schema.feature_columns if c not in columns]
        if missing:
            raise DatasetError(f"feature columns absent from {path}: {missing}")
        feature_cols = list(schema.feature_columns)
    else:
        dropped = set(schema.drop_columns) | {schema.label_column}
        feature_cols = [c for c in columns if c not in dropped]
    if not feature_cols:
        raise DatasetError("schema selects no feature columns")
    if len(frame) == 0:
        raise DatasetError(f"no records in {path}")

    x = np.empty((len(frame), len(feature_cols)), dtype=np.float64)
    for j, col in enumerate(feature_cols):
        values = _parse_floats(frame[col])
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.argmax(bad))
            # +2: one-based line numbers and the header line
            raise DatasetError(f"{path}: line {row + 2}: column {col!r} has "
                               f"non-numeric value {frame[col].iloc[row]!r}")
        x[:, j] = values

    raw_labels = pd.to_numeric(frame[schema.label_column], errors="coerce").to_numpy()
    bad = ~np.isin(raw_labels, (0, 1))
    if bad.any():
        row = int(np.argmax(bad))
        raise DatasetError(f"{path}: line {row + 2}: label "
                           f"{frame[schema.label_column].iloc[row]!r} is not 0 or 1")
    return Dataset(x, raw_labels.astype(np.int8), tuple(feature_cols))


def _parse_floats(column: pd.Series) -> np.ndarray:
    # pandas' own string parser is not correctly rounded; numpy's is
    try:
        return np.asarray(column.to_numpy(), dtype=np.float64)
    except (TypeError, ValueError):
        return pd.to_numeric(column, errors="coerce").to_numpy(dtype=np.float64)


def save_csv(d: Dataset, path, label_column: str = "label") -> None:
    """Write ``d`` in the format :func:`load_csv` reads back losslessly."""
    frame = pd.DataFrame(d.features, columns=list(d.schema))
    frame[label_column] = d.labels.astype(int)
    # repr-precision floats so the round trip is exact
    frame.to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _readonly(np.asarray(self.std, dtype=np.float64)))
        if (self.std <= 0).any():
            raise DatasetError("std entries must be positive")


def fit_normalizer(train: Dataset) -> NormalizationStats:
    if len(train) == 0:
        raise DatasetError("cannot fit a normalizer on an empty dataset")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    # zero-variance columns: x - mean is 0 on train, keep it 0 with unit scale
    std[std == 0] = 1.0
    return NormalizationStats(mean, std)


def apply_normalizer(d: Dataset, stats: NormalizationStats) -> Dataset:
    if d.n_features != stats.mean.shape[0]:
        raise DatasetError(f"dataset has {d.n_features} features, stats have {stats.mean.shape[0]}")
    return Dataset((d.features - stats.mean) / stats.std, d.labels, d.schema, d.ids)


def split_train_test(d: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified shuffle split.

    The train side gets floor(ratio * N) records, shared between classes by
    largest remainder. A class with at least two records keeps at least one
    on each side, which can move the sizes by one.
    """
    if not 0 < ratio < 1:
        raise DatasetError(f"ratio must be in (0, 1), got {ratio}")
    n = len(d)
    if n < 2:
        raise DatasetError("need at least two records to split")
    rng = np.random.default_rng(seed)
    n_train = int(np.floor(ratio * n))

    classes = [np.flatnonzero(d.labels == c) for c in (0, 1)]
    quotas = np.array([ratio * len(c) for c in classes])
    take = np.floor(quotas).astype(int)
    remainder = n_train - take.sum()
    order = np.argsort(-(quotas - take), kind="stable")
    for c in order[:max(remainder, 0)]:
        take[c] += 1
    for c, idx in enumerate(classes):
        if len(idx) >= 2:
            take[c] = min(max(take[c], 1), len(idx) - 1)

    train_idx, test_idx = [], []
    for c, idx in enumerate(classes):
        perm = rng.permutation(idx)
        train_idx.append(perm[:take[c]])
        test_idx.append(perm[take[c]:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return d.take(train_idx), d.take(test_idx)


def partition_local(d: Dataset, n_units: int, seed: int) -> list[Dataset]:
    """Random disjoint near-equal partition (sizes differ by at most one)."""
    if n_units < 1:
        raise DatasetError("n_units must be at least 1")
    if n_units > len(d):
        raise DatasetError(f"cannot split {len(d)} records among {n_units} units")
    if n_units == 1:
        return [d]
    perm = np.random.default_rng(seed).permutation(len(d))
    return [d.take(np.sort(part)) for part in np.array_split(perm, n_units)]


def filter_normal(d: Dataset) -> Dataset:
    out = d.take(np.flatnonzero(d.labels == 0))
    if len(out) == 0:
        raise DatasetError("dataset has no normal records")
    return out


def stratified_subsample(d: Dataset, n: int, seed: int) -> Dataset:
    """Draw ``n`` records keeping the class proportions of ``d``."""
    if n >= len(d):
        return d
    sample, _ = split_train_test(d, n / len(d), seed)
    return sample


def generate_synthetic(n_normal: int, n_attack: int, k: int, seed: int,
                       displacement: float = 4.0, latent_dim: int | None = None) -> Dataset:
    """Two-cluster fixture.

    Normals lie near a random ``latent_dim``-dimensional subspace with unit
    per-feature spread. Attacks are the same cloud shifted by
    ``displacement`` standard deviations along every feature axis (random
    signs), which puts them off the normal subspace.
    """
    if k < 2:
        raise DatasetError("synthetic data needs k >= 2")
    rng = np.random.default_rng(seed)
    d_lat = latent_dim or max(1, k // 4)
    mixing = rng.normal(size=(d_lat, k))
    noise = 0.1
    # scale columns so each feature has unit standard deviation
    col_std = np.sqrt((mixing ** 2).sum(axis=0) + noise ** 2)
    mixing /= col_std
    noise_scale = noise / col_std

    def draw(n):
        z = rng.normal(size=(n, d_lat))
        return z @ mixing + rng.normal(size=(n, k)) * noise_scale

    shift = displacement * rng.choice([-1.0, 1.0], size=k)
    x = np.vstack([draw(n_normal), draw(n_attack) + shift])
    y = np.concatenate([np.zeros(n_normal, np.int8), np.ones(n_attack, np.int8)])
    return Dataset(x, y, tuple(f"f{j}" for j in range(k)))
