"""Local/cloud protocol: parameter distribution, the cloud message wire
format, local-range routing and byte accounting.

Everything runs in-process. A :class:`SimulatedChannel` carries payloads
as bytes and reports their sizes to any number of taps, one of which is
normally a :class:`CostLedger`.
"""
from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import autoencoder as ae
from . import neuralnet as nn
from .adaboost import CloudModels, Variant, predict
from .dataset import Dataset, concat, filter_normal

CLASS_BYTES = 1
ERROR_BYTES = 4
FLOAT_BYTES = 4
_HEADER = struct.Struct("<Bf")


def message_size(h: int) -> int:
    """Bytes per cloud message: class byte, error, h code floats."""
    return CLASS_BYTES + ERROR_BYTES + FLOAT_BYTES * h


def raw_sample_size(k: int) -> int:
    """Bytes to ship one raw sample of k float32 features."""
    return FLOAT_BYTES * k


@dataclass(frozen=True, eq=False)
class CloudMessage:
    predicted_class: int
    recon_error: float
    code: np.ndarray

    def __post_init__(self):
        if self.predicted_class not in (0, 1):
            raise ValueError(f"predicted class must be 0 or 1, got {self.predicted_class}")
        object.__setattr__(self, "recon_error", float(np.float32(self.recon_error)))
        object.__setattr__(self, "code", np.asarray(self.code, dtype=np.float32).ravel())

    @property
    def code_size(self) -> int:
        return self.code.size

    def __eq__(self, other):
        if not isinstance(other, CloudMessage):
            return NotImplemented
        return encode_message(self) == encode_message(other)


def encode_message(m: CloudMessage) -> bytes:
    return _HEADER.pack(m.predicted_class, m.recon_error) + m.code.astype("<f4").tobytes()


def decode_message(data: bytes, h: int | None = None) -> CloudMessage:
    n_code, rest = divmod(len(data) - _HEADER.size, FLOAT_BYTES)
    if rest or n_code < 0:
        raise ValueError(f"{len(data)} bytes is not a valid message length")
    if h is not None and n_code != h:
        raise ValueError(f"message carries a code of {n_code}, expected {h}")
    cls, err = _HEADER.unpack_from(data)
    code = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    return CloudMessage(cls, err, code)


class Route(Enum):
    NORMAL = Variant.NORMAL.value
    REGULAR = Variant.REGULAR.value
    ATTACK = Variant.ATTACK.value

    @property
    def variant(self) -> Variant:
        return Variant(self.value)


def route(error: float, profile: ae.LocalProfile) -> Route:
    """Below the local range -> normal model, above -> attack, inside (inclusive) -> regular."""
    if error < profile.range_lo:
        return Route.NORMAL
    if error > profile.range_hi:
        return Route.ATTACK
    return Route.REGULAR


class CostLedger:
    """Byte counts for the simulated run; safe to update from several threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.sent_bytes = 0
        self.raw_bytes = 0
        self.messages = 0
        self.verdicts = 0
        self.distribution_bytes = 0

    def tap(self, kind: str, nbytes: int) -> None:
        with self._lock:
            if kind == "message":
                self.sent_bytes += nbytes
                self.messages += 1
            elif kind == "verdict":
                self.sent_bytes += nbytes
                self.verdicts += 1
            elif kind == "raw":
                self.raw_bytes += nbytes
            elif kind == "params":
                self.distribution_bytes += nbytes
            else:
                raise ValueError(f"unknown traffic kind {kind!r}")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.sent_bytes, self.raw_bytes) if self.raw_bytes else Fraction(0)

    def as_dict(self) -> dict:
        r = self.ratio
        return {
            "sent_bytes": self.sent_bytes,
            "raw_bytes": self.raw_bytes,
            "messages": self.messages,
            "verdicts": self.verdicts,
            "distribution_bytes": self.distribution_bytes,
            "ratio": float(r),
            "ratio_exact": f"{r.numerator}/{r.denominator}",
            "reduction": 1.0 - float(r),
        }


class SimulatedChannel:
    """In-process link. ``send`` returns the payload unchanged after notifying taps."""

    def __init__(self, taps: Sequence[Callable[[str, int], None]] = ()):
        self.taps = list(taps)
        self.log: list[tuple[str, int]] = []
        self._lock = threading.Lock()

    def send(self, kind: str, payload: bytes) -> bytes:
        with self._lock:
            self.log.append((kind, len(payload)))
        for tap in self.taps:
            tap(kind, len(payload))
        return payload

    def account(self, kind: str, nbytes: int) -> None:
        """Record traffic that is modelled but not materialized (the raw baseline)."""
        for tap in self.taps:
            tap(kind, nbytes)


def cloud_train_autoencoder(units_train: Sequence[Dataset], h: int, cfg: nn.TrainConfig,
                            init_seed: int) -> tuple[ae.AutoencoderModel, list[float]]:
    """Train one autoencoder on the normal records pooled from every unit."""
    pooled = filter_normal(concat(list(units_train)))
    model = ae.build_autoencoder(pooled.n_features, h, init_seed)
    return ae.train(model, pooled, cfg)


def distribute_params(params: nn.NetworkParams, unit_ids: Sequence[str],
                      channel: SimulatedChannel | None = None) -> dict[str, ae.AutoencoderModel]:
    """Ship the serialized parameters to each unit and rebuild a local model there."""
    payload = nn.serialize_params(params)
    models = {}
    for uid in unit_ids:
        received = channel.send("params", payload) if channel is not None else payload
        local = nn.deserialize_params(received)
        if not local.equals(params):
            raise AssertionError(f"parameter round trip to unit {uid} is not bitwise exact")
        models[uid] = ae.AutoencoderModel.from_params(local)
    return models


@dataclass(frozen=True)
class LocalVerdict:
    label: int

    def to_bytes(self) -> bytes:
        return bytes([self.label])


@dataclass
class LocalUnit:
    unit_id: str
    model: ae.AutoencoderModel
    profile: ae.LocalProfile

    def step(self, x, trusted: bool) -> LocalVerdict | CloudMessage:
        """Trusted: decide locally. Untrusted: package the sample for the cloud."""
        code, error = ae.encode_with_error(self.model, np.asarray(x))
        label = ae.classify_local(error, self.profile.eta)
        if trusted:
            return LocalVerdict(label)
        return CloudMessage(label, error, code)

    def step_batch(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Codes, errors and local labels for many samples at once."""
        codes, errors = ae.encode_with_error(self.model, x)
        return codes, errors, ae.classify_local(errors, self.profile.eta)


def cloud_features(code, recon_error, predicted_class=None) -> np.ndarray:
    """Cloud model input: code ++ error, optionally ++ the local class."""
    code = np.atleast_2d(np.asarray(code, dtype=np.float32))
    cols = [code, np.asarray(recon_error, dtype=np.float32).reshape(-1, 1)]
    if predicted_class is not None:
        cols.append(np.asarray(predicted_class, dtype=np.float32).reshape(-1, 1))
    return np.hstack(cols).astype(np.float64)


def message_features(msgs: Sequence[CloudMessage], include_class: bool = False) -> np.ndarray:
    codes = np.stack([m.code for m in msgs])
    errors = np.array([m.recon_error for m in msgs], dtype=np.float32)
    classes = np.array([m.predicted_class for m in msgs]) if include_class else None
    return cloud_features(codes, errors, classes)


@dataclass
class CloudClassifier:
    models: CloudModels
    include_class: bool = False
    ablation: Variant | None = None
    route_counts: dict = field(default_factory=lambda: {r.value: 0 for r in Route})

    def _check(self, h: int) -> None:
        expected = h + 1 + int(self.include_class)
        n = self.models.regular.n_features
        if n and n != expected:
            raise ValueError(f"cloud models expect {n} features, messages give {expected}")

    def classify(self, msg: CloudMessage, profile: ae.LocalProfile) -> int:
        return int(self.classify_batch([msg], profile)[0])

    def classify_batch(self, msgs: Sequence[CloudMessage], profile: ae.LocalProfile
                       ) -> np.ndarray:
        """Route each message by its error and the sender's profile, then predict."""
        if not msgs:
            return np.zeros(0, dtype=np.int8)
        self._check(msgs[0].code_size)
        x = message_features(msgs, self.include_class)
        routes = [route(m.recon_error, profile) for m in msgs]
        out = np.empty(len(msgs), dtype=np.int8)
        for r in Route:
            rows = np.array([i for i, ri in enumerate(routes) if ri is r], dtype=np.int64)
            self.route_counts[r.value] += rows.size
            if rows.size == 0:
                continue
            variant = self.ablation or r.variant
            out[rows] = predict(self.models.get(variant), x[rows])[0]
        return out


def cloud_classify(msg: CloudMessage, profile: ae.LocalProfile, models: CloudModels,
                   include_class: bool = False) -> int:
    return CloudClassifier(models, include_class).classify(msg, profile)
