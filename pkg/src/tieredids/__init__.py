"""Layered edge/cloud anomaly detection for industrial IoT flow data.

Local units score flows with an autoencoder trained on normal traffic and
send a compact (class, error, code) message to the cloud, where one of
three class-weighted AdaBoost models is chosen by the unit's local range.
"""
from .config import ExperimentConfig, load_config, parse_config
from .pipeline import EvaluationReport, run_simulation, sweep_code_size

__all__ = ["ExperimentConfig", "EvaluationReport", "load_config", "parse_config",
           "run_simulation", "sweep_code_size"]
__version__ = "0.1.0"
