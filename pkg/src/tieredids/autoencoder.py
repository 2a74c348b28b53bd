"""Local-unit anomaly detector.

An autoencoder trained on normal flows only; the reconstruction error is
the anomaly score. Each unit also derives a threshold, a trust score and
the "local range" of errors that it cannot decide confidently.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import neuralnet as nn
from .dataset import Dataset


@dataclass
class AutoencoderModel:
    params: nn.NetworkParams
    code_size: int
    code_layer_index: int

    def __post_init__(self):
        sizes = self.params.layer_sizes
        if sizes != sizes[::-1]:
            raise ValueError(f"layer sizes are not symmetric: {sizes}")
        if sizes[self.code_layer_index] != self.code_size or self.code_size >= sizes[0]:
            raise ValueError(f"code layer {self.code_layer_index} of {sizes} "
                             f"is not a bottleneck of width {self.code_size}")

    @property
    def input_width(self) -> int:
        return self.params.layer_sizes[0]

    @classmethod
    def from_params(cls, params: nn.NetworkParams) -> "AutoencoderModel":
        sizes = params.layer_sizes
        middle = len(sizes) // 2
        return cls(params, sizes[middle], middle)


def layer_widths(k: int, h: int, steps: int = 3) -> list[int]:
    """Encoder widths step linearly from k down to h, mirrored for the decoder."""
    encoder = [int(np.floor(k - (k - h) * i / steps + 0.5)) for i in range(steps + 1)]
    return encoder + encoder[-2::-1]


def build_autoencoder(k: int, h: int, seed: int) -> AutoencoderModel:
    if not 2 <= h < k:
        raise ValueError(f"code size must satisfy 2 <= h < k, got h={h}, k={k}")
    widths = layer_widths(k, h)
    return AutoencoderModel(nn.init_params(widths, seed), h, len(widths) // 2)


def train(m: AutoencoderModel, normals: Dataset, cfg: nn.TrainConfig
          ) -> tuple[AutoencoderModel, list[float]]:
    """Fit the autoencoder to reproduce its input. Returns the model and loss history."""
    if len(normals) == 0:
        raise ValueError("no training samples")
    if normals.labels.any():
        raise ValueError("autoencoder training data must contain normal samples only")
    if normals.n_features != m.input_width:
        raise ValueError(f"data has {normals.n_features} features, model expects {m.input_width}")
    x = normals.features.astype(np.float32)
    params, history = nn.fit(m.params, x, x, cfg)
    return AutoencoderModel(params, m.code_size, m.code_layer_index), history


def _check_width(m: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != m.input_width:
        raise ValueError(f"sample has {x.shape[-1]} features, model expects {m.input_width}")
    return x


def reconstruct(m: AutoencoderModel, x) -> np.ndarray:
    return nn.forward(m.params, _check_width(m, x)).output


def reconstruction_error(m: AutoencoderModel, x):
    """MSE between ``x`` and its reconstruction; one value per row for batches."""
    x = _check_width(m, x)
    return nn.mse(np.asarray(x, dtype=np.float32), reconstruct(m, x))


def encode(m: AutoencoderModel, x) -> np.ndarray:
    """Bottleneck activations (float32), shape ``(h,)`` or ``(n, h)``."""
    return nn.forward(m.params, _check_width(m, x)).activations[m.code_layer_index]


def encode_with_error(m: AutoencoderModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Codes and reconstruction errors from a single forward pass."""
    x = np.asarray(_check_width(m, x), dtype=np.float32)
    fp = nn.forward(m.params, x)
    return fp.activations[m.code_layer_index], nn.mse(x, fp.output)


def classify_local(error, eta: float):
    """0 (normal) below the threshold, 1 (attack) at or above it."""
    if np.ndim(error) == 0:
        return 0 if error < eta else 1
    return (np.asarray(error) >= eta).astype(np.int8)


def best_threshold(errors, labels) -> tuple[float, float]:
    """Threshold with the best training accuracy, and that accuracy.

    Candidates are the midpoints between adjacent distinct errors; the
    first (smallest) candidate wins ties. If every error is identical there
    are no midpoints and the common value itself is returned.
    """
    errors = np.asarray(errors, dtype=np.float64)
    labels = np.asarray(labels)
    if errors.shape != labels.shape or errors.size == 0:
        raise ValueError("need one label per error")
    if labels.min() == labels.max():
        raise ValueError("threshold selection needs both classes")
    order = np.argsort(errors, kind="stable")
    e = errors[order]
    y = labels[order]
    n = e.size
    distinct = np.flatnonzero(np.diff(e) > 0)
    if distinct.size == 0:
        eta = float(e[0])
        return eta, float(np.mean(classify_local(errors, eta) == labels))
    # cut after position j: rows 0..j predicted normal, the rest attack
    normals_below = np.cumsum(y == 0)
    attacks_total = int(np.sum(y == 1))
    attacks_below = np.cumsum(y == 1)
    correct = normals_below[distinct] + (attacks_total - attacks_below[distinct])
    best = int(np.argmax(correct))
    j = distinct[best]
    eta = float((e[j] + e[j + 1]) / 2)
    return eta, float(correct[best] / n)


def select_threshold(m: AutoencoderModel, labeled_train: Dataset) -> float:
    errors = reconstruction_error(m, labeled_train.features)
    return best_threshold(errors, labeled_train.labels)[0]


def compute_local_range(errs, eta: float, trust: float, n: int | None = None
                        ) -> tuple[float, float]:
    """Error interval handed to the neutral cloud model.

    With r = 1 - trust and k = floor(r * n / 2), and idx the position of the
    sorted error closest to ``eta``::

        lo = eta - errs[idx - k]     hi = eta + errs[idx + k]

    Indices are clamped to the array and ``lo`` to be non-negative.
    """
    errs = np.asarray(errs, dtype=np.float64)
    if errs.ndim != 1 or errs.size == 0:
        raise ValueError("need a non-empty 1-D array of sorted errors")
    if not 0 <= trust <= 1:
        raise ValueError(f"trust must be in [0, 1], got {trust}")
    n = errs.size if n is None else int(n)
    k = int(np.floor((1.0 - trust) * n / 2))
    idx = int(np.argmin(np.abs(errs - eta)))
    last = errs.size - 1
    lo = eta - errs[max(idx - k, 0)]
    hi = eta + errs[min(idx + k, last)]
    return max(float(lo), 0.0), float(hi)


@dataclass(frozen=True)
class LocalProfile:
    unit_id: str
    eta: float
    trust: float
    range_lo: float
    range_hi: float
    n_train: int

    def __post_init__(self):
        if not 0 <= self.trust <= 1:
            raise ValueError(f"trust must be in [0, 1], got {self.trust}")
        if not self.range_lo <= self.eta <= self.range_hi:
            raise ValueError(f"range [{self.range_lo}, {self.range_hi}] excludes eta={self.eta}")

    def as_dict(self) -> dict:
        return asdict(self)


def fit_profile(unit_id: str, m: AutoencoderModel, labeled_train: Dataset) -> LocalProfile:
    """Threshold, trust (training accuracy at that threshold) and local range."""
    errors = reconstruction_error(m, labeled_train.features)
    eta, trust = best_threshold(errors, labeled_train.labels)
    lo, hi = compute_local_range(np.sort(errors), eta, trust, len(errors))
    return LocalProfile(unit_id, eta, trust, lo, hi, len(errors))


def model_bytes(m: AutoencoderModel) -> dict:
    """Storage for the full network and for the encoder half alone, as float32."""
    full = m.params.n_parameters * 4
    encoder = sum(w.size + b.size for w, b in
                  zip(m.params.weights[:m.code_layer_index], m.params.biases[:m.code_layer_index])) * 4
    return {"full": full, "encoder_only": encoder}
