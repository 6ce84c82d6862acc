import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoparty_lab.qcore import (
    DensityOperator,
    DimensionError,
    PureState,
    QuantumChannel,
    RegisterError,
    RegisterSystem,
    apply_channel,
    apply_isometry,
    classical_isometry,
    dephase,
    depolarizing_channel,
    fidelity,
    measure_computational,
    overlap,
    partial_trace,
    purified_distance,
    purify,
    random_channel,
    random_density,
    random_pure,
    sqrtm_psd,
    stinespring,
    tensor,
    uhlmann_from_overlap,
    uhlmann_isometry,
    weyl_operators,
)
from twoparty_lab.selftest import qcore_selftest

QUBIT = RegisterSystem((("A", 2),))


def ket(*amps, system=QUBIT):
    v = np.asarray(amps, dtype=complex)
    return PureState(system, v / np.linalg.norm(v))


def test_register_system_rejects_duplicates_and_bad_dims():
    with pytest.raises(RegisterError):
        RegisterSystem((("A", 2), ("A", 3)))
    with pytest.raises(DimensionError):
        RegisterSystem((("A", 0),))


def test_plus_state_reduces_to_maximally_mixed():
    bell = PureState(RegisterSystem((("A", 2), ("B", 2))), np.array([1, 0, 0, 1]) / math.sqrt(2))
    rho = partial_trace(bell, ["A"])
    assert np.allclose(rho.matrix, np.eye(2) / 2)


def test_fidelity_of_orthogonal_and_identical_states():
    zero, one = ket(1, 0), ket(0, 1)
    assert fidelity(zero.density(), one.density()) == pytest.approx(0.0, abs=1e-12)
    assert fidelity(zero.density(), zero.density()) == pytest.approx(1.0)
    assert purified_distance(zero.density(), one.density()) == pytest.approx(1.0)


def test_fidelity_zero_with_plus():
    zero, plus = ket(1, 0), ket(1, 1)
    assert fidelity(zero.density(), plus.density()) == pytest.approx(1 / math.sqrt(2))
    assert purified_distance(zero.density(), plus.density()) == pytest.approx(1 / math.sqrt(2))


def test_fidelity_mixed_against_pure():
    mixed = DensityOperator(QUBIT, np.eye(2) / 2)
    assert fidelity(mixed, ket(1, 0).density()) == pytest.approx(1 / math.sqrt(2))


def test_purified_distance_of_identical_states_is_exactly_zero():
    rho = random_density(RegisterSystem((("A", 4),)), np.random.default_rng(3))
    assert purified_distance(rho, rho) == 0.0


def test_fidelity_needs_matching_systems():
    with pytest.raises(DimensionError):
        fidelity(DensityOperator(QUBIT, np.eye(2) / 2), DensityOperator(RegisterSystem((("B", 2),)), np.eye(2) / 2))


def test_density_operator_validation():
    with pytest.raises(ValueError):
        DensityOperator(QUBIT, np.array([[1.0, 0], [0, 1.0]]))
    with pytest.raises(ValueError):
        DensityOperator(QUBIT, np.array([[1.5, 0], [0, -0.5]]))


def test_sqrtm_psd_squares_back():
    rho = random_density(RegisterSystem((("A", 5),)), np.random.default_rng(0))
    root = sqrtm_psd(rho.matrix)
    assert np.allclose(root @ root, rho.matrix)


def test_weyl_operators_form_orthogonal_unitary_basis():
    ops = weyl_operators(3)
    assert len(ops) == 9
    gram = np.array([[np.trace(a.conj().T @ b) for b in ops] for a in ops])
    assert np.allclose(gram, 3 * np.eye(9))


def test_depolarizing_channel_extremes():
    rho = ket(1, 1).density()
    full = apply_channel(depolarizing_channel(QUBIT, 1.0), rho)
    assert np.allclose(full.matrix, np.eye(2) / 2)
    none = apply_channel(depolarizing_channel(QUBIT, 0.0), rho)
    assert np.allclose(none.matrix, rho.matrix)
    half = apply_channel(depolarizing_channel(QUBIT, 0.3), rho)
    assert np.allclose(half.matrix, 0.7 * rho.matrix + 0.3 * np.eye(2) / 2)
    with pytest.raises(ValueError):
        depolarizing_channel(QUBIT, 1.5)


def test_channel_rejects_non_trace_preserving_kraus():
    with pytest.raises(ValueError):
        QuantumChannel(QUBIT, QUBIT, (np.eye(2) * 0.5,))


def test_stinespring_dilation_reproduces_channel():
    rng = np.random.default_rng(5)
    ch = random_channel(QUBIT, RegisterSystem((("B", 3),)), 2, rng)
    rho = random_density(QUBIT, rng)
    dil = stinespring(ch, "E")
    assert dil.is_isometry
    via_dilation = partial_trace(apply_channel(dil, rho), ["B"])
    assert np.allclose(via_dilation.matrix, apply_channel(ch, rho).matrix)


def test_channel_acts_on_named_register_inside_larger_system():
    system = RegisterSystem((("A", 2), ("B", 2)))
    state = PureState.basis(system, (0, 1))
    flip = classical_isometry(RegisterSystem((("B", 2),)), RegisterSystem((("B", 2),)), lambda v: (1 - v[0],))
    out = apply_isometry(flip, state)
    assert np.allclose(out.reordered(["A", "B"]).amplitudes, PureState.basis(system, (0, 0)).amplitudes)


def test_measure_and_dephase_agree():
    state = ket(1, 1j)
    rho = dephase(state.density(), ["A"])
    assert np.allclose(rho.matrix, np.eye(2) / 2)
    outcomes = measure_computational(state, ["A"])
    probs = sorted(prob for _, prob, _ in outcomes)
    assert probs == pytest.approx([0.5, 0.5])


def test_tensor_of_densities_is_kron():
    a = ket(1, 0).density()
    b = DensityOperator(RegisterSystem((("B", 2),)), np.eye(2) / 2)
    joint = tensor(a, b)
    assert np.allclose(joint.matrix, np.kron(a.matrix, b.matrix))


def test_uhlmann_from_overlap_rejects_small_target():
    with pytest.raises(DimensionError):
        uhlmann_from_overlap(np.ones((3, 2)))


def test_uhlmann_with_padding_when_target_environment_is_small():
    rng = np.random.default_rng(8)
    rho = random_density(QUBIT, rng)
    phi = purify(rho, "E")
    target = random_pure(RegisterSystem((("A", 2), ("F", 1))), rng)
    t = uhlmann_isometry(phi, target, ["E"], ["F"])
    assert "F_pad" in t.output_system
    sigma = partial_trace(target, ["A"])
    assert overlap(phi, target, t) == pytest.approx(fidelity(rho, sigma), abs=1e-8)


dims = st.sampled_from([(2,), (3,), (2, 2), (4,), (2, 3), (4, 4)])


@settings(max_examples=60, deadline=None)
@given(shape=dims, seed=st.integers(0, 2**32 - 1))
def test_fidelity_properties(shape, seed):
    rng = np.random.default_rng(seed)
    system = RegisterSystem(tuple((f"A{k}", d) for k, d in enumerate(shape)))
    rho, sigma = random_density(system, rng), random_density(system, rng, rank=1)
    f = fidelity(rho, sigma)
    assert 0.0 <= f <= 1.0
    assert f == pytest.approx(fidelity(sigma, rho), abs=1e-10)
    vec = sigma.matrix[:, np.argmax(np.diag(sigma.matrix).real)]
    vec = vec / np.linalg.norm(vec)
    assert f**2 == pytest.approx(float(np.real(vec.conj() @ rho.matrix @ vec)), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(shape=dims, seed=st.integers(0, 2**32 - 1))
def test_uhlmann_achieves_fidelity(shape, seed):
    rng = np.random.default_rng(seed)
    system = RegisterSystem(tuple((f"A{k}", d) for k, d in enumerate(shape)))
    rho, sigma = random_density(system, rng), random_density(system, rng)
    phi, psi = purify(rho, "E"), purify(sigma, "F")
    t = uhlmann_isometry(phi, psi, ["E"], ["F"])
    assert overlap(phi, psi, t) == pytest.approx(fidelity(rho, sigma), abs=1e-8)
    # no other isometry does better: a random one is never above the fidelity
    other = QuantumChannel.isometry(t.input_system, t.output_system,
                                    np.linalg.qr(rng.normal(size=t.matrix.shape) + 1j * rng.normal(size=t.matrix.shape))[0])
    assert overlap(phi, psi, other) <= fidelity(rho, sigma) + 1e-10


@settings(max_examples=60, deadline=None)
@given(shape=dims, seed=st.integers(0, 2**32 - 1), n_kraus=st.integers(1, 4))
def test_channels_preserve_trace_and_positivity(shape, seed, n_kraus):
    rng = np.random.default_rng(seed)
    system = RegisterSystem(tuple((f"A{k}", d) for k, d in enumerate(shape)))
    out = RegisterSystem((("B", 3),))
    n_kraus = max(n_kraus, -(-system.dim // 3))
    ch = random_channel(system, out, n_kraus, rng)
    image = apply_channel(ch, random_density(system, rng))
    assert np.trace(image.matrix).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(image.matrix).min() > -1e-12


@settings(max_examples=60, deadline=None)
@given(shape=dims, seed=st.integers(0, 2**32 - 1))
def test_purification_round_trip(shape, seed):
    rng = np.random.default_rng(seed)
    system = RegisterSystem(tuple((f"A{k}", d) for k, d in enumerate(shape)))
    rho = random_density(system, rng, rank=int(rng.integers(1, system.dim + 1)))
    assert np.allclose(partial_trace(purify(rho, "E"), system.labels).matrix, rho.matrix, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_purified_distance_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    system = RegisterSystem((("A", 3),))
    a, b, c = (random_density(system, rng) for _ in range(3))
    assert purified_distance(a, c) <= purified_distance(a, b) + purified_distance(b, c) + 1e-12


def test_pure_state_fidelity_is_overlap():
    rng = np.random.default_rng(2)
    system = RegisterSystem((("A", 4),))
    phi, psi = random_pure(system, rng), random_pure(system, rng)
    assert fidelity(phi.density(), psi.density()) == pytest.approx(abs(np.vdot(phi.amplitudes, psi.amplitudes)))


def test_oracle_suite_thousand_instances():
    report = qcore_selftest(instances=1000, seed=11)
    assert report["instances"] >= 1000 and report["max_dim"] <= 16
    failing = {k: v for k, v in report["checks"].items() if not v["pass"]}
    assert not failing
