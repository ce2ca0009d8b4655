import json
import os
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from stallkit import pipeline, rom
from stallkit.model import ModelParams
from stallkit.spectral import SimConfig

ACCEPTANCE = []  # (criterion, passed, detail), filled by test_acceptance
_START = time.time()


def bundled(name):
    return json.loads(resources.files("stallkit.configs").joinpath(f"{name}.json").read_text())


@pytest.fixture(scope="session")
def stall_sim():
    return SimConfig.from_dict(bundled("stall"))


@pytest.fixture(scope="session")
def reference_params():
    """Reference parameters at the stall operating point with nu = 1."""
    return ModelParams.reference(B=0.15, gamma=0.57, nu=1.0)


@pytest.fixture(scope="session")
def stall_experiment(stall_sim):
    return pipeline.ExperimentConfig(sim=stall_sim, runs=10, reducers=("pca",), k=5, seed=0,
                                     on_error="record")


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    """Experiment artifacts shared by the session.

    Set ``STALLKIT_TEST_CACHE`` to a directory to keep the simulated runs
    between pytest invocations.
    """
    env = os.environ.get("STALLKIT_TEST_CACHE")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("experiment")


@pytest.fixture(scope="session")
def stall_runs(stall_experiment, cache_dir):
    """Ten post-transient stall trajectories (3001 x 514 each)."""
    return pipeline.simulate_stage(stall_experiment, cache_dir)


@pytest.fixture(scope="session")
def stall_pca(stall_runs):
    return rom.fit_pca(stall_runs, 2)


@pytest.fixture(scope="session")
def stall_latents(stall_runs, stall_pca):
    return [stall_pca.encode(r.data) for r in stall_runs]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    elapsed = time.time() - _START
    tr.write_line(f"{'PASS' if elapsed <= 900 else 'FAIL'}  suite runtime: {elapsed:.0f} s (target <= 900 s)")
