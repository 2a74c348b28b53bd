"""Class-weighted AdaBoost over shallow decision trees.

Labels are 0 (normal) / 1 (attack) at the interface and -1 / +1 inside the
boosting arithmetic. Class weights bias only the weak learners (split
choice and leaf labels); the round error, vote weight and sample-weight
update are the textbook ones.

Split thresholds are stored as float32, matching the serialized form, so
inputs are expected to be float32-representable (codes and reconstruction
errors from the wire are).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

from . import metrics

EPS_MIN = 1e-10
DEFAULT_ROUNDS = 100
DEFAULT_MAX_DEPTH = 3
DEFAULT_GRID = tuple((a, b) for a in (1, 2, 4, 6, 8, 10) for b in (1, 2, 4, 6, 8, 10))
# relative tolerance when comparing weighted split errors
TIE_TOL = 1e-12

ENSEMBLE_MAGIC = b"TADB"
ENSEMBLE_VERSION = 1


class Variant(Enum):
    NORMAL = "normal"
    REGULAR = "regular"
    ATTACK = "attack"


def to_pm1(label):
    """0/1 labels to -1/+1."""
    return 2 * np.asarray(label, dtype=np.int8) - 1 if np.ndim(label) else 2 * int(label) - 1


def from_pm1(label):
    return (np.asarray(label) > 0).astype(np.int8) if np.ndim(label) else int(label > 0)


@dataclass(frozen=True)
class Leaf:
    label: int  # -1 or +1


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float  # float32 value; x[feature] <= threshold goes left
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class WeakLearner:
    root: Node

    def predict(self, x: np.ndarray) -> np.ndarray:
        """-1/+1 prediction for each row of ``x``."""
        out = np.empty(x.shape[0], dtype=np.int8)
        _predict_into(self.root, x, np.arange(x.shape[0]), out)
        return out

    @property
    def depth(self) -> int:
        return _depth(self.root)


def _predict_into(node: Node, x, rows, out):
    if isinstance(node, Leaf):
        out[rows] = node.label
        return
    go_left = x[rows, node.feature] <= node.threshold
    _predict_into(node.left, x, rows[go_left], out)
    _predict_into(node.right, x, rows[~go_left], out)


def _depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _f32_threshold(lo: float, hi: float) -> float:
    """Midpoint of two adjacent distinct values, rounded to a float32 in [lo, hi)."""
    t = np.float32((lo + hi) / 2)
    if t >= hi:
        t = np.nextafter(np.float32(hi), np.float32(-np.inf))
    return float(t)


def fit_weak(x, y_pm, w, cw=(1.0, 1.0), max_depth: int = DEFAULT_MAX_DEPTH,
             presorted: "Presorted | None" = None) -> WeakLearner:
    """Greedy tree minimizing class- and sample-weighted misclassification.

    A sample's effective weight is ``w[i] * cw[class of i]``. Each node
    predicts its heavier class (attack on a tie). Candidate splits are the
    midpoints between adjacent distinct values of every feature; among
    splits within tolerance of the best, the lowest feature index and then
    the lowest threshold win. A node is split only when that strictly
    lowers its error.
    """
    x = np.asarray(x, dtype=np.float64)
    y_pm = np.asarray(y_pm)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or y_pm.shape != (x.shape[0],) or w.shape != y_pm.shape:
        raise ValueError("x, labels and weights do not line up")
    if presorted is None:
        presorted = Presorted.of(x)
    pos = y_pm > 0
    eff = w * np.where(pos, cw[1], cw[0])
    eff_pos = np.where(pos, eff, 0.0)
    eff_neg = np.where(pos, 0.0, eff)
    tol = TIE_TOL * eff.sum()
    return WeakLearner(_grow(x, presorted.order, presorted.values, eff_pos, eff_neg, max_depth, tol))


@dataclass(frozen=True)
class Presorted:
    """Per-feature ascending sort of a training matrix, reused across rounds."""

    order: np.ndarray
    values: np.ndarray

    @classmethod
    def of(cls, x: np.ndarray) -> "Presorted":
        order = np.argsort(x, axis=0, kind="stable")
        return cls(order, np.take_along_axis(x, order, axis=0))


def _grow(x, node_order, vals, eff_pos, eff_neg, depth_left, tol) -> Node:
    # node_order[:, f] lists this node's rows sorted by feature f; vals holds those values
    rows = node_order[:, 0]
    w_pos = eff_pos[rows].sum()
    w_neg = eff_neg[rows].sum()
    label = 1 if w_pos >= w_neg else -1
    leaf_err = min(w_pos, w_neg)
    if depth_left == 0 or leaf_err == 0 or len(rows) < 2:
        return Leaf(label)

    left_pos = np.cumsum(eff_pos[node_order], axis=0)[:-1]
    left_neg = np.cumsum(eff_neg[node_order], axis=0)[:-1]
    err = (np.minimum(left_pos, left_neg)
           + np.minimum(w_pos - left_pos, w_neg - left_neg))
    valid = vals[1:] > vals[:-1]
    if not valid.any():
        return Leaf(label)
    err = np.where(valid, err, np.inf)
    best = err.min()
    if not best < leaf_err - tol:
        return Leaf(label)
    near = err <= best + tol
    feature = int(np.flatnonzero(near.any(axis=0))[0])
    j = int(np.flatnonzero(near[:, feature])[0])
    threshold = _f32_threshold(vals[j, feature], vals[j + 1, feature])

    goes_left = x[:, feature] <= threshold
    children = []
    for side in (goes_left, ~goes_left):
        keep = side[node_order]
        n_keep = int(keep[:, 0].sum())
        # every column keeps the same rows, so the compressed block stays rectangular
        child_order = node_order.T[keep.T].reshape(-1, n_keep).T
        child_vals = vals.T[keep.T].reshape(-1, n_keep).T
        children.append(_grow(x, child_order, child_vals, eff_pos, eff_neg, depth_left - 1, tol))
    left, right = children
    if isinstance(left, Leaf) and isinstance(right, Leaf) and left.label == right.label:
        return Leaf(left.label)
    return Split(feature, threshold, left, right)


def weighted_error(learner: WeakLearner, x, y_pm, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    wrong = learner.predict(np.asarray(x)) != np.asarray(y_pm)
    return float(w[wrong].sum() / w.sum())


def alpha(epsilon: float) -> float:
    """Vote weight 0.5 * ln((1 - eps) / eps), with eps clamped away from 0 and 1."""
    eps = min(max(epsilon, EPS_MIN), 1 - EPS_MIN)
    return 0.5 * float(np.log((1 - eps) / eps))


def update_weights(w, predictions_pm, y_pm, alpha_t: float) -> np.ndarray:
    """Scale each weight by exp(-y * l(x) * alpha), then renormalize to sum 1."""
    w = np.asarray(w, dtype=np.float64)
    new = w * np.exp(-np.asarray(y_pm) * np.asarray(predictions_pm) * alpha_t)
    total = new.sum()
    if not np.isfinite(total) or total <= 0:
        raise FloatingPointError("weight underflow")
    # keep every weight strictly positive even if it alone underflows
    new = np.maximum(new / total, np.finfo(np.float64).tiny)
    return new / new.sum()


@dataclass(frozen=True)
class BoostedEnsemble:
    learners: tuple[WeakLearner, ...]
    alphas: tuple[float, ...]
    class_weights: tuple[float, float] = (1.0, 1.0)
    variant: Variant = Variant.REGULAR
    n_features: int = 0

    def __post_init__(self):
        if len(self.learners) != len(self.alphas):
            raise ValueError("one alpha per learner")
        if not all(np.isfinite(a) for a in self.alphas):
            raise ValueError("alphas must be finite")
        if min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")

    def __len__(self) -> int:
        return len(self.learners)

    def with_variant(self, variant: Variant) -> "BoostedEnsemble":
        return BoostedEnsemble(self.learners, self.alphas, self.class_weights, variant, self.n_features)


def boost(x, y, rounds: int = DEFAULT_ROUNDS, cw=(1.0, 1.0),
          max_depth: int = DEFAULT_MAX_DEPTH, variant: Variant = Variant.REGULAR,
          history: list | None = None) -> BoostedEnsemble:
    """Train an ensemble on 0/1 labels ``y``.

    Stops early once a learner is no better than chance (not kept, unless
    it is the first) or is perfect (kept). When ``history`` is a list, each
    round's normalized sample weights are appended to it.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if y.size == 0 or y.min() == y.max():
        raise ValueError("boosting needs both classes in the training data")
    y_pm = to_pm1(y)
    w = np.full(y.size, 1.0 / y.size)
    presorted = Presorted.of(x)
    learners, alphas = [], []
    for _ in range(rounds):
        learner = fit_weak(x, y_pm, w, cw, max_depth, presorted)
        pred = learner.predict(x)
        eps = float(w[pred != y_pm].sum())
        if eps >= 0.5 and learners:
            break
        a = alpha(eps)
        learners.append(learner)
        alphas.append(a)
        if eps >= 0.5 or eps <= EPS_MIN:
            break
        w = update_weights(w, pred, y_pm, a)
        if history is not None:
            history.append(w)
    return BoostedEnsemble(tuple(learners), tuple(alphas), (float(cw[0]), float(cw[1])),
                           variant, x.shape[1])


def decision_function(e: BoostedEnsemble, x) -> np.ndarray:
    """Margins sum_t alpha_t * l_t(x) for each row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if e.n_features and x.shape[1] != e.n_features:
        raise ValueError(f"input has {x.shape[1]} features, ensemble expects {e.n_features}")
    margin = np.zeros(x.shape[0])
    for learner, a in zip(e.learners, e.alphas):
        margin += a * learner.predict(x)
    return margin


def predict(e: BoostedEnsemble, x):
    """Label (attack when the margin is >= 0) and margin.

    Scalars for a single vector, arrays for a batch.
    """
    single = np.ndim(x) == 1
    margin = decision_function(e, x)
    labels = (margin >= 0).astype(np.int8)
    if single:
        return int(labels[0]), float(margin[0])
    return labels, margin


def margin_to_probability(margin) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-2.0 * np.asarray(margin, dtype=np.float64)))


def class_weighted_loss(probabilities, labels, cw=(1.0, 1.0)) -> float:
    """(1/N) sum cw0 * y * log(p) + cw1 * (1 - y) * log(1 - p).

    The weights pair with the terms exactly as written: ``cw0`` scales the
    attack (y = 1) term. The value is <= 0; the grid search maximizes it,
    i.e. minimizes the weighted cross-entropy.
    """
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 1e-12, 1 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    terms = cw[0] * (y * np.log(p)) + cw[1] * ((1 - y) * np.log(1 - p))
    return float(terms.mean())


@dataclass(frozen=True)
class GridPoint:
    class_weights: tuple[float, float]
    loss: float
    mcc: float
    recall_normal: float
    recall_attack: float
    n_rounds: int

    @property
    def ratio(self) -> float:
        return max(self.class_weights) / min(self.class_weights)


@dataclass(frozen=True)
class CloudModels:
    normal: BoostedEnsemble
    regular: BoostedEnsemble
    attack: BoostedEnsemble
    grid: tuple[GridPoint, ...] = field(default=(), compare=False)

    def get(self, variant: Variant) -> BoostedEnsemble:
        return {Variant.NORMAL: self.normal, Variant.REGULAR: self.regular,
                Variant.ATTACK: self.attack}[variant]


def grid_search_variants(x_train, y_train, x_valid, y_valid,
                         grid: Iterable[tuple[float, float]] = DEFAULT_GRID,
                         rounds: int = DEFAULT_ROUNDS,
                         max_depth: int = DEFAULT_MAX_DEPTH,
                         mcc_slack: float = 0.05) -> CloudModels:
    """Train one ensemble per class-weight pair and pick the three variants.

    Regular: best unweighted loss on the validation set. Normal / Attack:
    highest normal / attack recall among points whose validation MCC is
    within ``mcc_slack`` of Regular's. Ties go to higher MCC, then to the
    less lopsided weight pair, then to grid order.
    """
    grid = [(float(a), float(b)) for a, b in grid]
    if not grid:
        raise ValueError("empty class-weight grid")
    y_valid = np.asarray(y_valid)
    if y_valid.size == 0:
        raise ValueError("empty validation set")

    # trees depend on the class weights only through their ratio
    by_ratio: dict[Fraction, BoostedEnsemble] = {}
    ensembles, points = [], []
    for cw in grid:
        if min(cw) <= 0:
            raise ValueError(f"class weights must be positive: {cw}")
        key = Fraction(cw[1]) / Fraction(cw[0])
        if key not in by_ratio:
            by_ratio[key] = boost(x_train, y_train, rounds, cw, max_depth)
        base = by_ratio[key]
        e = BoostedEnsemble(base.learners, base.alphas, cw, Variant.REGULAR, base.n_features)
        labels, margin = predict(e, x_valid)
        cm = metrics.ConfusionMatrix.from_labels(y_valid, labels)
        points.append(GridPoint(cw, class_weighted_loss(margin_to_probability(margin), y_valid),
                                metrics.mcc(cm), metrics.recall_normal(cm),
                                metrics.recall_attack(cm), len(e)))
        ensembles.append(e)

    order = range(len(grid))
    regular = min(order, key=lambda i: (-points[i].loss, -points[i].mcc, points[i].ratio, i))
    floor = points[regular].mcc - mcc_slack
    feasible = [i for i in order if points[i].mcc >= floor]
    normal = min(feasible, key=lambda i: (-points[i].recall_normal, -points[i].mcc, points[i].ratio, i))
    attack = min(feasible, key=lambda i: (-points[i].recall_attack, -points[i].mcc, points[i].ratio, i))
    return CloudModels(ensembles[normal].with_variant(Variant.NORMAL),
                       ensembles[regular].with_variant(Variant.REGULAR),
                       ensembles[attack].with_variant(Variant.ATTACK),
                       tuple(points))


_VARIANT_CODES = {Variant.NORMAL: 0, Variant.REGULAR: 1, Variant.ATTACK: 2}


def serialize_ensemble(e: BoostedEnsemble) -> bytes:
    """Versioned little-endian binary.

    Header: magic, version u16, variant u8, cw0 f64, cw1 f64, n_features u32,
    round count u32. Each round: alpha f64 then the tree in preorder, where
    a split is tag 1, feature u32, threshold f32 and a leaf is tag 0, label i8.
    """
    out = [ENSEMBLE_MAGIC,
           struct.pack("<HBddII", ENSEMBLE_VERSION, _VARIANT_CODES[e.variant],
                       e.class_weights[0], e.class_weights[1], e.n_features, len(e))]
    for learner, a in zip(e.learners, e.alphas):
        out.append(struct.pack("<d", a))
        _write_node(learner.root, out)
    return b"".join(out)


def _write_node(node: Node, out: list) -> None:
    if isinstance(node, Leaf):
        out.append(struct.pack("<Bb", 0, node.label))
        return
    out.append(struct.pack("<BIf", 1, node.feature, node.threshold))
    _write_node(node.left, out)
    _write_node(node.right, out)


def deserialize_ensemble(data: bytes) -> BoostedEnsemble:
    if data[:4] != ENSEMBLE_MAGIC:
        raise ValueError("not a serialized ensemble (bad magic)")
    version, variant, cw0, cw1, n_features, n_rounds = struct.unpack_from("<HBddII", data, 4)
    if version != ENSEMBLE_VERSION:
        raise ValueError(f"unsupported ensemble format version {version}")
    offset = 4 + struct.calcsize("<HBddII")
    learners, alphas = [], []
    for _ in range(n_rounds):
        (a,) = struct.unpack_from("<d", data, offset)
        offset += 8
        root, offset = _read_node(data, offset)
        learners.append(WeakLearner(root))
        alphas.append(a)
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes after ensemble")
    codes = {v: k for k, v in _VARIANT_CODES.items()}
    return BoostedEnsemble(tuple(learners), tuple(alphas), (cw0, cw1), codes[variant], n_features)


def _read_node(data: bytes, offset: int) -> tuple[Node, int]:
    tag = data[offset]
    if tag == 0:
        (label,) = struct.unpack_from("<b", data, offset + 1)
        return Leaf(label), offset + 2
    if tag != 1:
        raise ValueError(f"bad node tag {tag} at byte {offset}")
    feature, threshold = struct.unpack_from("<If", data, offset + 1)
    left, offset = _read_node(data, offset + 9)
    right, offset = _read_node(data, offset)
    return Split(feature, threshold, left, right), offset
