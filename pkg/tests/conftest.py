from __future__ import annotations

import dataclasses

import pytest
from hypothesis import HealthCheck, settings

from scenefuse.config import RunConfig, SimConfig
from scenefuse.fusion import ReliabilityLedger
from scenefuse.metrics import ConsistencyReport, scene_counts
from scenefuse.pipeline import run_ica, run_naive_union
from scenefuse.sim import default_calibration, scene_seed, simulate_scene

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n, title = props["criterion"]
    _ACCEPTANCE[n] = (title, "PASS" if report.outcome == "passed" else "FAIL")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}")


@pytest.fixture(scope="session")
def calib():
    return default_calibration()


@pytest.fixture(scope="session")
def run_cfg():
    return RunConfig()


def _evaluate(cfg: RunConfig, calib, n: int, seed: int) -> tuple[list, ConsistencyReport, ConsistencyReport]:
    ledger = ReliabilityLedger(cfg.fusion.beta, cfg.fusion.initial_reliability)
    ica, naive = ConsistencyReport("ICA"), ConsistencyReport("no-ICA")
    scenes = []
    for i in range(n):
        sc = simulate_scene(cfg.sim, scene_seed(seed, i), f"scene-{i:05d}", i * cfg.sim.timestamp_step_us, calib)
        summary = run_ica(sc.facts, calib, cfg, ledger).summary
        ica.scenes.append(scene_counts(summary, sc.ground_truth, sc.facts, calib, cfg.metrics))
        naive.scenes.append(scene_counts(run_naive_union(sc.facts, cfg), sc.ground_truth, sc.facts, calib,
                                         cfg.metrics))
        scenes.append((sc, summary))
    return scenes, ica, naive


@pytest.fixture(scope="session")
def ablation(calib):
    """200 scenes with class conflicts, co-reported duplicates and false positives."""
    agents = {k: dataclasses.replace(v, fp_rate=0.05) for k, v in SimConfig().agents.items()}
    cfg = RunConfig(sim=SimConfig(conflict_prob=0.3, agents=agents))
    return _evaluate(cfg, calib, 200, 0)


@pytest.fixture(scope="session")
def noiseless(calib):
    cfg = RunConfig(sim=SimConfig.noiseless())
    return _evaluate(cfg, calib, 50, 7)


@pytest.fixture(scope="session")
def default_scenes(ablation):
    """(simulated scene, fused summary) pairs reused by reasoning and QA tests."""
    return ablation[0]
