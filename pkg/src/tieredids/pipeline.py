"""End-to-end simulation of the two-layer deployment.

Stages, each with its own seed derived from the master seed (see
:func:`stage_seed`):

1. load or generate the dataset, optionally stratified-subsample it
2. partition it among the local units; each unit splits train/test
3. z-score with statistics of the pooled training splits
4. the cloud trains one autoencoder on all pooled normal training records
   and distributes its parameters
5. every unit fits its threshold, trust score and local range
6. the cloud trains the three AdaBoost variants on the messages the units
   would send for their training records
7. every test record is pushed through the local unit and, in untrusted
   mode, through the channel to the routed cloud model
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import adaboost as ab
from . import autoencoder as ae
from . import metrics
from . import neuralnet as nn
from .config import ExperimentConfig
from .dataset import (Dataset, NormalizationStats, apply_normalizer, concat, fit_normalizer,
                      generate_synthetic, load_csv, partition_local, split_train_test,
                      stratified_subsample)
from .federation import (CloudClassifier, CloudMessage, CostLedger, LocalUnit,
                         SimulatedChannel, cloud_features, cloud_train_autoencoder,
                         decode_message, distribute_params, encode_message, message_size,
                         raw_sample_size)

# Stage counters for stage_seed(). Unit-specific stages add the unit index.
SEED_DATA = 0
SEED_SUBSAMPLE = 1
SEED_PARTITION = 2
SEED_AE_INIT = 3
SEED_AE_TRAIN = 4
SEED_BOOST_SPLIT = 5
SEED_UNIT_SPLIT = 100


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {exc}")


def stage_seed(master: int, counter: int) -> int:
    """Seed for one stage: a SeedSequence keyed on (master, counter)."""
    return int(np.random.SeedSequence([master, counter]).generate_state(1)[0])


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class PreparedData:
    unit_ids: list[str]
    train: list[Dataset]
    test: list[Dataset]
    stats: NormalizationStats

    @property
    def n_features(self) -> int:
        return self.train[0].n_features


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.source == "csv":
        data = load_csv(cfg.csv_path, cfg.schema)
    else:
        data = generate_synthetic(cfg.n_normal, cfg.n_attack, cfg.n_features,
                                  stage_seed(cfg.seed, SEED_DATA), cfg.displacement)
    if cfg.subsample:
        data = stratified_subsample(data, cfg.subsample, stage_seed(cfg.seed, SEED_SUBSAMPLE))
    return data


def prepare_data(cfg: ExperimentConfig, data: Dataset | None = None) -> PreparedData:
    """Stages 1-3. Deterministic in the config, so training and evaluation agree."""
    with _stage("dataset"):
        data = load_dataset(cfg) if data is None else data
    with _stage("partition"):
        parts = partition_local(data, cfg.n_units, stage_seed(cfg.seed, SEED_PARTITION))
        splits = [split_train_test(p, cfg.train_ratio, stage_seed(cfg.seed, SEED_UNIT_SPLIT + i))
                  for i, p in enumerate(parts)]
    with _stage("normalize"):
        stats = fit_normalizer(concat([tr for tr, _ in splits]))
        train = [apply_normalizer(tr, stats) for tr, _ in splits]
        test = [apply_normalizer(te, stats) for _, te in splits]
    unit_ids = [f"unit{i + 1}" for i in range(cfg.n_units)]
    return PreparedData(unit_ids, train, test, stats)


@dataclass
class TrainedSystem:
    stats: NormalizationStats
    params: nn.NetworkParams
    profiles: list[ae.LocalProfile]
    cloud: ab.CloudModels
    loss_history: list[float] = field(default_factory=list)
    distribution_bytes: int = 0

    @property
    def code_size(self) -> int:
        return ae.AutoencoderModel.from_params(self.params).code_size

    @property
    def n_features(self) -> int:
        return self.params.layer_sizes[0]


def train_system(cfg: ExperimentConfig, prepared: PreparedData) -> TrainedSystem:
    with _stage("cloud-autoencoder"):
        train_cfg = cfg.train_config
        train_cfg.seed = stage_seed(cfg.seed, SEED_AE_TRAIN)
        model, history = cloud_train_autoencoder(prepared.train, cfg.code_size, train_cfg,
                                                 stage_seed(cfg.seed, SEED_AE_INIT))
    with _stage("distribute"):
        ledger = CostLedger()
        channel = SimulatedChannel([ledger.tap])
        local_models = distribute_params(model.params, prepared.unit_ids, channel)
    with _stage("local-profiles"):
        profiles = [ae.fit_profile(uid, local_models[uid], tr)
                    for uid, tr in zip(prepared.unit_ids, prepared.train)]
    with _stage("cloud-adaboost"):
        features, labels = [], []
        for uid, tr, prof in zip(prepared.unit_ids, prepared.train, profiles):
            unit = LocalUnit(uid, local_models[uid], prof)
            codes, errors, local = unit.step_batch(tr.features)
            features.append(cloud_features(codes, errors, local if cfg.include_class_feature else None))
            labels.append(tr.labels)
        pool = Dataset(np.vstack(features), np.concatenate(labels),
                       tuple(f"c{j}" for j in range(features[0].shape[1])))
        fit_part, valid_part = split_train_test(pool, 1 - cfg.valid_ratio,
                                                stage_seed(cfg.seed, SEED_BOOST_SPLIT))
        cloud = ab.grid_search_variants(fit_part.features, fit_part.labels,
                                        valid_part.features, valid_part.labels,
                                        cfg.class_weight_grid, cfg.rounds, cfg.max_depth,
                                        cfg.mcc_slack)
    return TrainedSystem(prepared.stats, model.params, profiles, cloud, history,
                         ledger.distribution_bytes)


@dataclass
class EvaluationReport:
    trust_mode: str
    ablation: str
    n_features: int
    code_size: int
    message_bytes: int
    profiles: list[dict]
    rows: list[dict]
    overall: dict
    routing: dict
    ledger: dict
    cloud_models: dict
    storage: dict
    config: str = ""

    def as_dict(self) -> dict:
        return {"kind": "evaluation", **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def metrics_row(self, unit_id: str, scope: str) -> dict:
        for row in self.rows:
            if row["unit_id"] == unit_id and row["scope"] == scope:
                return row
        raise KeyError((unit_id, scope))

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []

        def put(name, text):
            path = out / name
            path.write_text(text)
            written.append(path)

        put("report.json", self.to_json())
        put("metrics.csv", _csv(METRIC_COLUMNS, self.rows))
        put("ledger.csv", _csv(list(self.ledger), [self.ledger]))
        put("profiles.csv", _csv(PROFILE_COLUMNS, self.profiles))
        routing_rows = [{"unit_id": uid, **counts} for uid, counts in self.routing.items()]
        put("routing.csv", _csv(["unit_id", "normal", "regular", "attack"], routing_rows))
        return written


METRIC_COLUMNS = ["unit_id", "scope", "accuracy", "mcc", "ur", "tp", "tn", "fp", "fn"]
PROFILE_COLUMNS = ["unit_id", "eta", "trust", "range_lo", "range_hi", "n_train"]


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def evaluate_system(cfg: ExperimentConfig, system: TrainedSystem, prepared: PreparedData,
                    ledger: CostLedger | None = None) -> EvaluationReport:
    """Stage 7: push every test record through its unit (and the cloud)."""
    ledger = ledger or CostLedger()
    ledger.distribution_bytes += system.distribution_bytes
    channel = SimulatedChannel([ledger.tap])
    trusted = cfg.trust_mode == "trusted"
    ablation = None if cfg.ablation == "none" else ab.Variant(cfg.ablation)
    classifier = CloudClassifier(system.cloud, cfg.include_class_feature, ablation)
    model = ae.AutoencoderModel.from_params(system.params)
    h = model.code_size
    k = system.n_features

    rows, routing = [], {}
    local_total = metrics.ConfusionMatrix()
    cloud_total = metrics.ConfusionMatrix()
    with _stage("evaluate"):
        for uid, test, prof in zip(prepared.unit_ids, prepared.test, system.profiles):
            unit = LocalUnit(uid, model, prof)
            codes, errors, local = unit.step_batch(test.features)
            for _ in range(len(test)):
                channel.account("raw", raw_sample_size(k))
            before = dict(classifier.route_counts)
            if trusted:
                received = [channel.send("verdict", bytes([int(v)])) for v in local]
                cloud_pred = np.frombuffer(b"".join(received), dtype=np.uint8).astype(np.int8)
            else:
                msgs = []
                for c, e, v in zip(codes, errors, local):
                    wire = channel.send("message", encode_message(CloudMessage(int(v), e, c)))
                    msgs.append(decode_message(wire, h))
                cloud_pred = classifier.classify_batch(msgs, prof)
            routing[uid] = {r: classifier.route_counts[r] - before[r] for r in before}
            local_cm = metrics.ConfusionMatrix.from_labels(test.labels, local)
            cloud_cm = metrics.ConfusionMatrix.from_labels(test.labels, cloud_pred)
            local_total += local_cm
            cloud_total += cloud_cm
            rows.append({"unit_id": uid, "scope": "local", **metrics.summarize(local_cm)})
            rows.append({"unit_id": uid, "scope": "cloud", **metrics.summarize(cloud_cm)})
    rows.sort(key=lambda r: (r["scope"] != "local", r["unit_id"]))

    cloud_models = {}
    for variant in ab.Variant:
        e = system.cloud.get(variant)
        cloud_models[variant.value] = {"class_weights": list(e.class_weights), "rounds": len(e)}
    return EvaluationReport(
        trust_mode=cfg.trust_mode,
        ablation=cfg.ablation,
        n_features=k,
        code_size=h,
        message_bytes=message_size(h),
        profiles=[p.as_dict() for p in system.profiles],
        rows=rows,
        overall={"local": metrics.summarize(local_total), "cloud": metrics.summarize(cloud_total)},
        routing=routing,
        ledger=ledger.as_dict(),
        cloud_models=cloud_models,
        storage={"distribution_payload_bytes": len(nn.serialize_params(system.params)),
                 **{f"model_bytes_{key}": v for key, v in ae.model_bytes(model).items()}},
        config=cfg.to_ini(),
    )


def run_simulation(cfg: ExperimentConfig, data: Dataset | None = None
                   ) -> tuple[EvaluationReport, TrainedSystem]:
    cfg.validate()
    prepared = prepare_data(cfg, data)
    system = train_system(cfg, prepared)
    return evaluate_system(cfg, system, prepared), system


def sweep_code_size(cfg: ExperimentConfig, sizes) -> dict:
    """Train and evaluate once per code size; one table row per size."""
    sizes = sorted({int(h) for h in sizes})
    if not sizes:
        raise ValueError("no code sizes given")
    prepared = prepare_data(cfg.validate())
    rows = []
    for h in sizes:
        run_cfg = cfg.replace(code_size=h).validate()
        system = train_system(run_cfg, prepared)
        report = evaluate_system(run_cfg, system, prepared)
        led = report.ledger
        per_msg = led["sent_bytes"] // led["messages"] if led["messages"] else 0
        rows.append({"h": h, "bytes": per_msg, "expected_bytes": message_size(h),
                     "mcc": report.overall["cloud"]["mcc"],
                     "local_mcc": report.overall["local"]["mcc"],
                     "accuracy": report.overall["cloud"]["accuracy"]})
    return {"kind": "sweep", "rows": rows, "config": cfg.to_ini()}


# ---- artifacts -------------------------------------------------------------

ARTIFACT_FILES = ("autoencoder.bin", "normalizer.json", "profiles.json",
                  "ensemble_normal.bin", "ensemble_regular.bin", "ensemble_attack.bin",
                  "manifest.json")
# settings that decide the data pipeline; evaluation must match training on these
_DATA_KEYS = ("source", "csv_path", "profile", "label_column", "feature_columns", "drop_columns",
              "subsample", "n_normal", "n_attack", "n_features", "displacement", "n_units",
              "train_ratio", "seed", "code_size", "include_class_feature")


def save_artifacts(system: TrainedSystem, cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "autoencoder.bin": nn.serialize_params(system.params),
        "normalizer.json": _json({"mean": system.stats.mean.tolist(),
                                  "std": system.stats.std.tolist()}),
        "profiles.json": _json([p.as_dict() for p in system.profiles]),
        "manifest.json": _json({
            "format": 1,
            "n_features": system.n_features,
            "code_size": system.code_size,
            "data_settings": {key: _jsonable(getattr(cfg, key)) for key in _DATA_KEYS},
            "loss_history": system.loss_history,
            "distribution_bytes": system.distribution_bytes,
            "grid": [asdict(g) for g in system.cloud.grid],
        }),
    }
    for variant in ab.Variant:
        files[f"ensemble_{variant.value}.bin"] = ab.serialize_ensemble(system.cloud.get(variant))
    written = []
    for name in ARTIFACT_FILES:
        path = out / name
        data = files[name]
        path.write_bytes(data if isinstance(data, bytes) else data.encode())
        written.append(path)
    return written


def load_artifacts(art_dir, cfg: ExperimentConfig | None = None) -> TrainedSystem:
    art = Path(art_dir)
    missing = [n for n in ARTIFACT_FILES if not (art / n).is_file()]
    if missing:
        raise FileNotFoundError(f"missing artifacts in {art}: {missing}")
    manifest = json.loads((art / "manifest.json").read_text())
    if cfg is not None:
        mismatched = [key for key in _DATA_KEYS
                      if manifest["data_settings"].get(key) != _jsonable(getattr(cfg, key))]
        if mismatched:
            raise ValueError(f"artifacts in {art} were trained with different settings: "
                             + ", ".join(mismatched))
    params = nn.deserialize_params((art / "autoencoder.bin").read_bytes())
    norm = json.loads((art / "normalizer.json").read_text())
    profiles = [ae.LocalProfile(**p) for p in json.loads((art / "profiles.json").read_text())]
    ens = {v: ab.deserialize_ensemble((art / f"ensemble_{v.value}.bin").read_bytes())
           for v in ab.Variant}
    cloud = ab.CloudModels(ens[ab.Variant.NORMAL], ens[ab.Variant.REGULAR], ens[ab.Variant.ATTACK])
    return TrainedSystem(NormalizationStats(np.array(norm["mean"]), np.array(norm["std"])),
                         params, profiles, cloud, manifest.get("loss_history", []),
                         manifest.get("distribution_bytes", 0))


def _jsonable(value):
    return list(value) if isinstance(value, tuple) else value


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
