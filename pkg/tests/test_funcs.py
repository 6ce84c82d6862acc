import math

import numpy as np
import pytest

from twoparty_lab.funcs import (
    CapExceeded,
    appendix_protocol,
    bit_labels,
    depolarize_fixture,
    disj_flip_patterns,
    disj_perturbed_fixture,
    disj_tightness_stats,
    fixture_catalog,
    load_fixture,
    make_function,
    two_copies_simulator_check,
)
from twoparty_lab.proto import JointDistribution, correctness_epsilon, security_epsilon

# exact value from the analytic density-matrix oracle sqrt(1 - ((1 + 2**-0.5) / 2)**2)
TWO_COPIES_DISTANCE = math.sqrt(1 - ((1 + 2**-0.5) / 2) ** 2)


def test_eq_n1_table():
    f = make_function("EQ", 1)
    assert {(u, v): f(u, v) for u in "01" for v in "01"} == {
        ("0", "0"): 1, ("0", "1"): 0, ("1", "0"): 0, ("1", "1"): 1}


def test_ip_and_disj_examples():
    assert make_function("IP", 2)("11", "11") == 0
    assert make_function("DISJ", 2)("10", "10") == 0
    assert make_function("DISJ", 2)("10", "01") == 1


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tables_match_bitwise_reevaluation(n):
    eq, ip, disj = (make_function(k, n) for k in ("EQ", "IP", "DISJ"))
    for a, u in enumerate(bit_labels(n)):
        for b, v in enumerate(bit_labels(n)):
            assert eq(u, v) == int(u == v)
            assert ip(u, v) == sum(int(x) * int(y) for x, y in zip(u, v)) % 2
            assert disj(u, v) == int(not any(x == y == "1" for x, y in zip(u, v)))


@pytest.mark.parametrize("n", [1, 2])
def test_ot_like_reveals_exactly_the_chosen_string(n):
    f = make_function("OT_LIKE", n)
    size = 2**n
    for b in range(2):
        for s0 in range(size):
            for s1 in range(size):
                out = f.output_alphabet[f.table[(s0 << n) | s1, b]]
                chosen = (s0, s1)[b]
                assert out == f"{b}:{format(chosen, f'0{n}b')}"
        # output ignores the other string
        column = f.table[:, b].reshape(size, size)
        assert np.all(column == (column[:, :1] if b == 0 else column[:1, :]))


def test_caps():
    with pytest.raises(CapExceeded):
        make_function("EQ", 5)
    with pytest.raises(CapExceeded):
        make_function("OT_LIKE", 3)
    with pytest.raises(CapExceeded):
        disj_perturbed_fixture(9)
    with pytest.raises(ValueError):
        make_function("XOR", 1)


def test_catalog_fixtures_are_consistent():
    for fid in fixture_catalog():
        if fid == "disj-perturbed-n4":
            continue
        fx = load_fixture(fid)
        assert fx.id == fid
        assert (fx.protocol.u_dim, fx.protocol.v_dim) == (fx.function.n_u, fx.function.n_v)


def test_depolarize_zero_is_identity_and_rate_validated():
    base = load_fixture("reveal-eq-n1")
    assert depolarize_fixture(base, 0.0) is base
    with pytest.raises(ValueError):
        depolarize_fixture(base, 1.5)
    noisy = load_fixture("reveal-eq-n1-dep0.05")
    assert noisy.noise == 0.05 and noisy.protocol.noise


def test_full_depolarization_collapses_correctness():
    fx = depolarize_fixture(load_fixture("reveal-eq-n1"), 1.0)
    for iu in range(2):
        for iv in range(2):
            dist = fx.protocol.honest_branch_distribution(iu, iv)
            assert dist.sum(axis=0)[fx.function.table[iu, iv]] == pytest.approx(0.5)


def test_appendix_honest_run_outputs_b_and_sb():
    fx = appendix_protocol(1)
    f = fx.function
    for iu in range(f.n_u):
        for iv in range(f.n_v):
            dist = fx.protocol.honest_branch_distribution(iu, iv)
            k = f.table[iu, iv]
            assert dist[k, k] == pytest.approx(1.0)


def test_two_copies_simulator_check():
    tv, dist = two_copies_simulator_check(1)
    assert tv <= 1e-9
    assert dist > 0.1
    assert dist == pytest.approx(TWO_COPIES_DISTANCE, abs=1e-12)
    tv_c, dist_c = two_copies_simulator_check(1, hadamard=False)
    assert tv_c <= 1e-9 and dist_c == 0.0
    with pytest.raises(CapExceeded):
        two_copies_simulator_check(2)


def test_disj_flip_patterns():
    assert disj_flip_patterns(0b0011, 4) == [0b0011]
    pats = disj_flip_patterns(0b0111, 4)
    assert len(pats) == 3 and all(bin(w).count("1") == 1 for w in pats)
    assert all(w & ~0b0111 == 0 for w in pats)


def test_disj_perturbed_light_inputs_match_base():
    fx = load_fixture("disj-perturbed-n4")
    assert fx.seed == 0
    light = [v for v in range(16) if bin(v).count("1") <= 2]
    for iv in light[:4]:
        dist = fx.protocol.honest_branch_distribution(3, iv)
        k = fx.function.table[3, iv]
        assert dist[k, k] == pytest.approx(1.0)


def test_disj_tightness_statistics():
    s4, s9 = disj_tightness_stats(4, seed=1), disj_tightness_stats(9, seed=1)
    assert s4.worst_error == pytest.approx(2 / 3) and s9.worst_error == pytest.approx(3 / 5)
    assert 0 < s9.worst_error < s4.worst_error
    assert s9.average_error < s4.average_error
    assert abs(s4.sampled_error - s4.average_error) < 0.01
    assert s4.exact_recovery < 1 and s9.exact_recovery < 1
    assert disj_tightness_stats(4, seed=1) == s4


def test_disj_perturbed_security_unchanged():
    fx = load_fixture("disj-perturbed-n4")
    p = JointDistribution.uniform(16, 16)
    assert security_epsilon(fx.protocol, fx.function, p, fx.ideal_adversary) <= 1e-8
    assert correctness_epsilon(fx.protocol, fx.function, p) > 0
