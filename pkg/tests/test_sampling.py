import numpy as np
import pytest
from scipy.stats import chisquare

from adaptive_povm.povm import LocalPovm, PovmParams, sic_povm, unitary_to_effects
from adaptive_povm.sampling import (
    OutcomeBatch,
    ProductPovm,
    SamplingError,
    SeedKey,
    enumerate_probabilities,
    pauli_eigenvalues,
    sample_pauli_basis,
    sample_povm,
)
from adaptive_povm.simulator import StateVector
from oracles import dilation_probabilities, enumerate_by_matrices, random_unitary


def _frequencies(batch: OutcomeBatch) -> np.ndarray:
    n = batch.num_qubits
    flat = np.zeros(4**n)
    idx = np.zeros(batch.shots, dtype=int)
    for q in reversed(range(n)):
        idx = idx * 4 + batch.outcomes[:, q]
    np.add.at(flat, idx, 1)
    # reshape so that the first axis is m_0
    return flat.reshape((4,) * n).transpose(tuple(reversed(range(n)))) / batch.shots


def _within_sigma(freq: np.ndarray, probs: np.ndarray, shots: int, k: float = 4.0) -> bool:
    sigma = np.sqrt(probs * (1 - probs) / shots)
    return bool(np.all(np.abs(freq - probs) <= k * sigma + 1e-12))


def test_identity_dilation_only_even_outcomes():
    povm = ProductPovm([unitary_to_effects(np.eye(4))])
    batch = sample_povm(StateVector.zero(1), povm, 2000, seed=0)
    assert set(np.unique(batch.outcomes)) == {0}
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    batch = sample_povm(plus, povm, 2000, seed=0)
    assert set(np.unique(batch.outcomes)) <= {0, 2}


def test_zero_state_sic1_frequencies():
    povm = ProductPovm.uniform(sic_povm(1), 1)
    probs = enumerate_probabilities(StateVector.zero(1), povm)
    assert np.allclose(probs, [1 / 2, 1 / 6, 1 / 6, 1 / 6], atol=1e-12)
    batch = sample_povm(StateVector.zero(1), povm, 100_000, seed=11)
    assert _within_sigma(_frequencies(batch), probs, batch.shots)


def test_bell_state_sic1_joint_frequencies():
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    povm = ProductPovm.uniform(sic_povm(1), 2)
    probs = enumerate_probabilities(bell, povm)
    eff = sic_povm(1).effects
    assert np.allclose(probs, enumerate_by_matrices(bell.density_matrix(), [eff, eff]), atol=1e-12)
    batch = sample_povm(bell, povm, 100_000, seed=3)
    assert _within_sigma(_frequencies(batch), probs, batch.shots)


def test_enumeration_product_structure(rng):
    a = StateVector.random(1, rng)
    b = StateVector.random(1, rng)
    joint = StateVector.product([a.amplitudes, b.amplitudes])
    pa, pb = (LocalPovm.from_params(rng.uniform(0.05, 0.95, 8)) for _ in range(2))
    table = enumerate_probabilities(joint, ProductPovm([pa, pb]))
    ta = enumerate_probabilities(a, ProductPovm([pa]))
    tb = enumerate_probabilities(b, ProductPovm([pb]))
    assert np.allclose(table, np.outer(ta, tb), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_enumeration_matches_matrices_and_sums_to_one(n, rng):
    state = StateVector.random(n, rng)
    params = PovmParams(rng.uniform(0.05, 0.95, (n, 8)))
    povm = ProductPovm.from_params(params)
    table = enumerate_probabilities(state, povm)
    assert abs(table.sum() - 1) < 1e-10
    oracle = enumerate_by_matrices(state.density_matrix(), [p.effects for p in povm.locals])
    assert np.allclose(table, oracle, atol=1e-12)


def test_enumeration_limit():
    with pytest.raises(SamplingError):
        enumerate_probabilities(StateVector.zero(9), ProductPovm.uniform(sic_povm(1), 9))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sampler_chi_square(n):
    rng = np.random.default_rng(100 + n)
    state = StateVector.random(n, rng)
    povm = ProductPovm.from_params(PovmParams(rng.uniform(0.05, 0.95, (n, 8))))
    probs = enumerate_probabilities(state, povm).ravel()
    for seed in range(3):
        batch = sample_povm(state, povm, 50_000, seed=seed)
        observed = _frequencies(batch).ravel() * batch.shots
        keep = probs > 1e-9
        result = chisquare(observed[keep], probs[keep] / probs[keep].sum() * batch.shots)
        assert result.pvalue > 1e-4


@pytest.mark.parametrize("n", [1, 2])
def test_dilation_circuit_distribution(n, rng):
    state = StateVector.random(n, rng)
    unitaries = [random_unitary(4, rng) for _ in range(n)]
    povm = ProductPovm([unitary_to_effects(u) for u in unitaries])
    dil = dilation_probabilities(state.amplitudes, unitaries)
    assert np.allclose(enumerate_probabilities(state, povm), dil, atol=1e-12)
    batch = sample_povm(state, povm, 50_000, seed=7)
    observed = _frequencies(batch).ravel() * batch.shots
    assert chisquare(observed, dil.ravel() * batch.shots).pvalue > 1e-4


def test_seed_determinism(rng):
    state = StateVector.random(3, rng)
    povm = ProductPovm.uniform(sic_povm(2), 3)
    a = sample_povm(state, povm, 9000, seed=SeedKey(5, (2,)))
    b = sample_povm(state, povm, 9000, seed=SeedKey(5, (2,)))
    c = sample_povm(state, povm, 9000, seed=SeedKey(5, (3,)))
    assert np.array_equal(a.outcomes, b.outcomes)
    assert not np.array_equal(a.outcomes, c.outcomes)
    # a shorter batch is a prefix of a longer one with the same key
    d = sample_povm(state, povm, 5000, seed=SeedKey(5, (2,)))
    assert np.array_equal(d.outcomes, a.outcomes[:5000])


def test_pauli_basis_examples():
    bits = sample_pauli_basis(StateVector.zero(1), "Z", 1000, seed=0)
    assert not bits.any()
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    bits = sample_pauli_basis(plus, "X", 1000, seed=0)
    assert np.all(pauli_eigenvalues(bits, "X") == 1)
    shots = 40_000
    vals = pauli_eigenvalues(sample_pauli_basis(StateVector.zero(1), "X", shots, seed=1), "X")
    assert abs(vals.mean()) < 4 / np.sqrt(shots)


def test_pauli_basis_y_and_parity():
    # |+i> = (|0> + i|1>)/sqrt(2) is the +1 eigenstate of Y
    plus_i = StateVector(np.array([1, 1j]) / np.sqrt(2))
    bits = sample_pauli_basis(plus_i, "Y", 500, seed=0)
    assert np.all(pauli_eigenvalues(bits, "Y") == 1)
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    for basis in ("ZZ", "XX"):
        bits = sample_pauli_basis(bell, basis, 500, seed=0)
        assert np.all(pauli_eigenvalues(bits, basis) == 1)
    assert np.all(pauli_eigenvalues(bits, "II") == 1)


def test_invalid_basis():
    with pytest.raises(SamplingError):
        sample_pauli_basis(StateVector.zero(1), "Q", 10, seed=0)


def test_batch_csv_round_trip(tmp_path, rng):
    povm = ProductPovm.from_params(PovmParams.sic(1, 2))
    batch = sample_povm(StateVector.random(2, rng), povm, 300, seed=SeedKey(9, (1,)))
    path = tmp_path / "batch.csv"
    batch.save(path)
    text = path.read_text()
    assert f"# povm_id={povm.povm_id}" in text and "# seed=9:1" in text and "# shots=300" in text
    back = OutcomeBatch.load(path, povm)
    assert np.array_equal(back.outcomes, batch.outcomes)
    other = ProductPovm.from_params(PovmParams.sic(2, 2))
    with pytest.raises(SamplingError):
        OutcomeBatch.load(path, other)


def test_batch_validation():
    povm = ProductPovm.uniform(sic_povm(1), 2)
    with pytest.raises(ValueError):
        OutcomeBatch(np.array([[0, 4]]), povm)
    with pytest.raises(ValueError):
        OutcomeBatch(np.array([[0, 1, 2]]), povm)


def test_sampler_qubit_mismatch():
    with pytest.raises(SamplingError):
        sample_povm(StateVector.zero(2), ProductPovm.uniform(sic_povm(1), 3), 10, seed=0)
