import time

import numpy as np
import pytest

from subpoisson.detector import DetectorParams, detection_matrix
from subpoisson.distributions import TwinBeamParams, twb_joint_pmf
from subpoisson.pipeline import simulate_joint

# Reference model and detector parameters of the post-selection experiment.
REF_PARAMS = TwinBeamParams(Mp=270, Bp=0.032, Ms=0.01, Bs=7.6, Mi=0.026, Bi=5.3)
DET_S = DetectorParams(N=6528, eta=0.23, D=0.04 / 6528)
DET_I = DetectorParams(N=6784, eta=0.22, D=0.04 / 6784)
REF_SHOTS = 1_200_000
SIM_SEED = 0

_ACCEPTANCE = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    _ACCEPTANCE.append((name, bool(passed), detail))
    print(f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'} | {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{name:<14} {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ref_params():
    return REF_PARAMS


@pytest.fixture(scope="session")
def detectors():
    return DET_S, DET_I


@pytest.fixture(scope="session")
def model_joint():
    return twb_joint_pmf(REF_PARAMS)


@pytest.fixture(scope="session")
def model_matrices(model_joint):
    return (detection_matrix(DET_S, model_joint.n_max_s),
            detection_matrix(DET_I, model_joint.n_max_i))


@pytest.fixture(scope="session")
def ref_simulation():
    t0 = time.perf_counter()
    joint = simulate_joint(REF_PARAMS, DET_S, DET_I, REF_SHOTS, seed=SIM_SEED)
    return joint, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_distribution(rng, n_max=None, zeros=False):
    n_max = int(rng.integers(1, 25)) if n_max is None else n_max
    p = rng.random(n_max + 1) ** rng.uniform(0.5, 4.0)
    if zeros:
        p[rng.random(p.size) < 0.3] = 0.0
        if p.sum() == 0:
            p[0] = 1.0
    return p / p.sum()
