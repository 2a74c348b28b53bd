"""Walk one flow from a local unit to the cloud and back.

Runs the small configuration, then follows a handful of test flows: the
local verdict, the bytes put on the wire, the route chosen from the unit's
local range and the cloud's final verdict.

    python3 demos/edge_to_cloud.py
"""
from pathlib import Path

import numpy as np

from tieredids import autoencoder as ae
from tieredids import load_config, pipeline
from tieredids.federation import CloudClassifier, LocalUnit, encode_message, raw_sample_size, route

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "quick.ini"


def main() -> None:
    cfg = load_config(CONFIG)
    prepared = pipeline.prepare_data(cfg)
    system = pipeline.train_system(cfg, prepared)

    profile = system.profiles[0]
    model = ae.AutoencoderModel.from_params(system.params)
    unit = LocalUnit(profile.unit_id, model, profile)
    print(f"{profile.unit_id}: eta={profile.eta:.4f} trust={profile.trust:.3f} "
          f"range=[{profile.range_lo:.4f}, {profile.range_hi:.4f}]")

    test = prepared.test[0]
    picks = np.concatenate([np.flatnonzero(test.labels == 0)[:3], np.flatnonzero(test.labels == 1)[:3]])
    clf = CloudClassifier(system.cloud)
    for i in picks:
        msg = unit.step(test.features[i], trusted=False)
        wire = encode_message(msg)
        cloud = clf.classify(msg, profile)
        chosen = route(msg.recon_error, profile).value
        print(f"flow {i:4d} truth={test.labels[i]} local={msg.predicted_class} "
              f"error={msg.recon_error:.4f} -> {chosen:7s} model, cloud={cloud} "
              f"({len(wire)} B instead of {raw_sample_size(cfg.n_features)} B)")


if __name__ == "__main__":
    main()
