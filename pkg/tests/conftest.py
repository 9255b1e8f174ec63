import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from adaptive_povm.observables import PauliObservable, transverse_field_ising  # noqa: E402
from adaptive_povm.simulator import (  # noqa: E402
    AnsatzCircuit,
    StateVector,
    exact_expectation,
    prepare_ansatz_state,
    train_vqe,
)

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@dataclass
class GroundStateProblem:
    obs: PauliObservable
    state: StateVector
    exact: float
    gap: float


@pytest.fixture(scope="session")
def tfim4() -> GroundStateProblem:
    """4-qubit open transverse-field Ising chain (J = h = 1) at its VQE ground state."""
    obs = transverse_field_ising(4, 1.0, 1.0)
    result = train_vqe(obs, AnsatzCircuit(4, 5), threshold=1e-4, seed=0)
    state = prepare_ansatz_state(result.circuit)
    return GroundStateProblem(obs, state, exact_expectation(state, obs), result.gap)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()
NUM_CRITERIA = 10


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion; printed in the terminal summary."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        results[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, NUM_CRITERIA + 1):
        if number not in results:
            terminalreporter.write_line(f"FAIL criterion {number}: not run, or errored before recording a result")
            continue
        passed, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
