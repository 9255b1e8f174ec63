import itertools

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from adaptive_povm.povm import (
    PAULIS,
    LocalPovm,
    PovmError,
    PovmParams,
    bloch_to_effect,
    cross_dual_table,
    dual_table,
    effect_to_bloch,
    fit_params,
    load_sic_params,
    params_to_unitary,
    sic_povm,
    unitary_to_effects,
)
from oracles import dual_by_lstsq, effects_from_dilation, random_density, random_unitary

box_rows = st.lists(st.floats(0.05, 0.95), min_size=8, max_size=8).map(np.array)


def _informative(x) -> LocalPovm:
    povm = LocalPovm.from_params(x)
    try:
        dual_table(povm)
    except PovmError:
        assume(False)
    return povm


def _check_valid(povm: LocalPovm, tol: float = 1e-10) -> None:
    eff = povm.effects
    assert np.max(np.abs(eff.sum(axis=0) - np.eye(2))) < tol
    for e in eff:
        assert np.allclose(e, e.conj().T, atol=tol)
        vals = np.linalg.eigvalsh(e)
        assert vals.min() > -tol
        assert np.sum(vals > 1e-9) <= 1


@given(box_rows)
def test_params_give_unitary_and_valid_effects(x):
    u = params_to_unitary(x)
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)
    povm = LocalPovm.from_params(x)
    _check_valid(povm)
    for mine, ref in zip(povm.effects, effects_from_dilation(u)):
        assert np.allclose(mine, ref, atol=1e-12)


def test_coarse_grid_valid():
    grid = np.linspace(0.05, 0.95, 3)
    rng = np.random.default_rng(0)
    for pts in itertools.product(grid, repeat=4):
        x = np.concatenate([pts, rng.uniform(0.05, 0.95, 4)])
        _check_valid(LocalPovm.from_params(x))


def test_pole_gives_first_basis_vector():
    u = params_to_unitary(np.zeros(8))
    assert np.allclose(u[:, 0], [1, 0, 0, 0])
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_first_column_real():
    u = params_to_unitary(np.full(8, 0.37))
    assert np.allclose(u[:, 0].imag, 0)


def test_identity_dilation_effects():
    povm = unitary_to_effects(np.eye(4))
    p0 = np.diag([1, 0]).astype(complex)
    p1 = np.diag([0, 1]).astype(complex)
    assert np.allclose(povm.effects, [p0, np.zeros((2, 2)), p1, np.zeros((2, 2))])
    with pytest.raises(PovmError):
        dual_table(povm)


def test_cnot_dilation_effects():
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    povm = unitary_to_effects(cnot)
    p0 = np.diag([1, 0]).astype(complex)
    p1 = np.diag([0, 1]).astype(complex)
    assert np.allclose(povm.effects, [p0, np.zeros((2, 2)), np.zeros((2, 2)), p1])


def test_random_unitary_effects(rng):
    for _ in range(20):
        u = random_unitary(4, rng)
        povm = unitary_to_effects(u)
        _check_valid(povm)
        for mine, ref in zip(povm.effects, effects_from_dilation(u)):
            assert np.allclose(mine, ref, atol=1e-12)


def test_non_unitary_rejected():
    with pytest.raises(PovmError):
        unitary_to_effects(np.eye(4) * 1.01)


def test_sic_variant_1():
    povm = sic_povm(1)
    assert np.trace(povm.effects[0]).real == pytest.approx(0.5)
    tilde = 2 * povm.effects
    for i, j in itertools.product(range(4), repeat=2):
        expected = (2 * (i == j) + 1) / 3
        assert np.trace(tilde[i] @ tilde[j]).real == pytest.approx(expected, abs=1e-12)
    assert np.trace(tilde[0] @ tilde[1]).real == pytest.approx(1 / 3)


def test_sic_variant_2_tetrahedron_and_table():
    povm = sic_povm(2)
    tilde = 2 * povm.effects
    for i, j in itertools.product(range(4), repeat=2):
        assert np.trace(tilde[i] @ tilde[j]).real == pytest.approx((2 * (i == j) + 1) / 3, abs=1e-12)
    b = dual_table(povm)
    assert np.allclose(np.abs(b[1:]), np.sqrt(3), atol=1e-12)


def test_sic1_sigma_z_row():
    b = dual_table(sic_povm(1))
    assert np.allclose(b[3], [3, -1, -1, -1], atol=1e-12)
    assert np.allclose(b[0], 1)


@given(box_rows, st.integers(0, 2**32 - 1))
def test_dual_table_reconstructs_paulis(x, seed):
    povm = _informative(x)
    b = dual_table(povm)
    recon = np.einsum("km,mab->kab", b, povm.effects)
    assert np.allclose(recon, PAULIS, atol=1e-10)
    assert np.allclose(b, dual_by_lstsq(list(povm.effects)), atol=1e-8)
    rho = random_density(2, np.random.default_rng(seed))
    probs = np.real(np.einsum("ab,mba->m", rho, povm.effects))
    assert np.allclose(b @ probs, np.real(np.einsum("ab,kba->k", rho, PAULIS)), atol=1e-10)


def test_uninformative_point_in_box_rejected():
    # all-equal parameters give linearly dependent effects
    with pytest.raises(PovmError, match="informationally complete"):
        dual_table(LocalPovm.from_params(np.full(8, 0.5)))


def test_cross_table_identity_and_columns(rng):
    x = rng.uniform(0.05, 0.95, 8)
    p = LocalPovm.from_params(x)
    assert np.allclose(cross_dual_table(p, p), np.eye(4), atol=1e-10)
    q = LocalPovm.from_params(np.clip(x + rng.normal(0, 0.1, 8), 0.05, 0.95))
    d = cross_dual_table(q, p)
    assert np.allclose(d.sum(axis=0), 1, atol=1e-10)
    assert np.allclose(np.einsum("rm,mab->rab", d, p.effects), q.effects, atol=1e-10)


@given(box_rows, box_rows)
def test_cross_table_composes_with_dual(x_old, x_new):
    old, new = _informative(x_old), _informative(x_new)
    d = cross_dual_table(new, old)
    assert np.allclose(dual_table(new) @ d, dual_table(old), atol=1e-8)


def test_bloch_examples():
    assert np.allclose(effect_to_bloch(np.diag([1, 0])), [0, 0, 1])
    assert np.allclose(effect_to_bloch(np.diag([0.5, 0])), [0, 0, 0.5])
    vecs = np.array([effect_to_bloch(e) for e in sic_povm(1).effects])
    assert np.allclose(np.linalg.norm(vecs, axis=1), 0.5)
    for i, j in itertools.combinations(range(4), 2):
        assert vecs[i] @ vecs[j] == pytest.approx(-1 / 12, abs=1e-12)


@given(box_rows)
def test_bloch_round_trip(x):
    for e in LocalPovm.from_params(x).effects:
        r = effect_to_bloch(e)
        assert np.linalg.norm(r) <= 1 + 1e-12
        assert np.allclose(bloch_to_effect(r), e, atol=1e-10)


def test_bloch_injective_on_distinct_effects(rng):
    seen = []
    for _ in range(30):
        e = LocalPovm.from_params(rng.uniform(0.05, 0.95, 8)).effects[0]
        r = effect_to_bloch(e)
        for e2, r2 in seen:
            if not np.allclose(e, e2, atol=1e-9):
                assert not np.allclose(r, r2, atol=1e-9)
        seen.append((e, r))


def test_fit_recovers_random_target(rng):
    x_star = rng.uniform(0.1, 0.9, 8)
    target = LocalPovm.from_params(x_star)
    fit = fit_params(target, starts=32, seed=0)
    assert fit.success and fit.residual < 1e-10
    assert np.allclose(LocalPovm.from_params(fit.x).effects, target.effects, atol=1e-5)


@pytest.mark.parametrize("variant", [1, 2])
def test_shipped_sic_rows_reproduce_sic(variant):
    params = load_sic_params(variant)
    assert params.delta == 0.05 and params.in_box()
    effects = LocalPovm.from_params(params.values[0]).effects
    residual = np.sum(np.abs(effects - sic_povm(variant).effects) ** 2)
    assert residual < 1e-8
    assert float(params.provenance["fit_residual"]) < 1e-8


def test_fit_sic1_from_scratch():
    fit = fit_params(sic_povm(1), starts=32, seed=0)
    assert fit.residual < 1e-8


def test_params_text_round_trip(rng):
    p = PovmParams(rng.uniform(0.05, 0.95, (3, 8)), 0.05, {"variant": "test"})
    back = PovmParams.loads(p.dumps())
    assert np.array_equal(back.values, p.values)
    assert back.digest() == p.digest()
    assert back.provenance == {"variant": "test"}


def test_clamp_and_box():
    p = PovmParams(np.array([[0.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]]))
    assert not p.in_box()
    c = p.clamped()
    assert c.in_box() and c.values[0, 0] == 0.05 and c.values[0, 1] == 0.95
