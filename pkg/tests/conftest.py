from pathlib import Path

import pytest

from tieredids import ExperimentConfig, load_config
from tieredids import pipeline

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small_config(**changes) -> ExperimentConfig:
    """configs/quick.ini: small, with enough class overlap that all routes are used."""
    return load_config(CONFIGS / "quick.ini").replace(**changes)


@pytest.fixture(scope="session")
def small_run():
    cfg = small_config()
    prepared = pipeline.prepare_data(cfg)
    system = pipeline.train_system(cfg, prepared)
    report = pipeline.evaluate_system(cfg, system, prepared)
    return cfg, prepared, system, report


@pytest.fixture(scope="session")
def default_run():
    """The full-size synthetic experiment with every default setting."""
    cfg = ExperimentConfig()
    prepared = pipeline.prepare_data(cfg)
    system = pipeline.train_system(cfg, prepared)
    report = pipeline.evaluate_system(cfg, system, prepared)
    return cfg, prepared, system, report


# acceptance criterion number -> [(status, detail)], filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[str, str]]] = {}


def record(criterion: int, ok: bool, detail: str, skipped: bool = False) -> None:
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    ACCEPTANCE.setdefault(criterion, []).append((status, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        statuses = {status for status, _ in parts}
        overall = "FAIL" if "FAIL" in statuses else ("SKIP" if statuses == {"SKIP"} else "PASS")
        detail = "; ".join(f"{d} [{s}]" if len(parts) > 1 else d for s, d in parts)
        terminalreporter.write_line(f"criterion {n:>2}: {overall}  {detail}")
