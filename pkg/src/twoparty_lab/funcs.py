"""Concrete functions, protocols and simulators used as fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .proto import (
    ALICE,
    BOB,
    VT,
    YT,
    ClassicalFunction,
    IdealAdversary,
    Round,
    TwoPartyProtocol,
    view_simulator,
)
from .qcore import (
    PureState,
    RegisterSystem,
    apply_isometry,
    classical_isometry,
    dephase,
    partial_trace,
    purified_distance,
    QuantumChannel,
)

KINDS = ("EQ", "IP", "DISJ", "OT_LIKE", "CONST")
MAX_TABLE_BITS = 4
MAX_OT_BITS = 2


class CapExceeded(ValueError):
    """Requested size is beyond the dense desk-scale limits."""


@dataclass(frozen=True, eq=False)
class Fixture:
    id: str
    function: ClassicalFunction
    protocol: TwoPartyProtocol
    ideal_adversary: IdealAdversary
    noise: float | None = None
    notes: str = ""
    seed: int | None = None


def bit_labels(n: int) -> tuple[str, ...]:
    return tuple(format(i, f"0{n}b") for i in range(2**n))


def _popcount(x: int) -> int:
    return bin(x).count("1")


def make_function(kind: str, n: int) -> ClassicalFunction:
    """Truth table of EQ, IP, DISJ, CONST on n-bit strings, or the OT-like f((s0,s1),b) = (b, s_b).

    Strings are integers read most significant bit first.
    """
    kind = kind.upper()
    if kind not in KINDS:
        raise ValueError(f"unknown function kind {kind!r}; choose from {KINDS}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if kind == "OT_LIKE":
        if n > MAX_OT_BITS:
            raise CapExceeded(f"OT_LIKE is limited to n <= {MAX_OT_BITS}")
        strings = bit_labels(n)
        u_dom = tuple(f"{a}|{b}" for a in strings for b in strings)
        alphabet = tuple(f"{b}:{s}" for b in "01" for s in strings)
        table = np.zeros((4**n, 2), dtype=int)
        for u in range(4**n):
            s0, s1 = u >> n, u & (2**n - 1)
            table[u, 0] = s0
            table[u, 1] = 2**n + s1
        return ClassicalFunction(f"OT_LIKE-n{n}", u_dom, ("0", "1"), table, alphabet)
    if n > MAX_TABLE_BITS:
        raise CapExceeded(f"table functions are limited to n <= {MAX_TABLE_BITS}")
    size = 2**n
    u, v = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == "EQ":
        table = (u == v).astype(int)
    elif kind == "IP":
        table = np.vectorize(lambda a, b: _popcount(a & b) % 2)(u, v)
    elif kind == "DISJ":
        table = ((u & v) == 0).astype(int)
    else:
        return ClassicalFunction(f"CONST-n{n}", bit_labels(n), bit_labels(n),
                                 np.zeros((size, size), dtype=int), (0,))
    return ClassicalFunction(f"{kind}-n{n}", bit_labels(n), bit_labels(n), table, (0, 1))


def _copy(label: str, dim: int, copy_label: str) -> QuantumChannel:
    return classical_isometry(RegisterSystem(((label, dim),)),
                              RegisterSystem(((label, dim), (copy_label, dim))),
                              lambda vals: (vals[0], vals[0]))


def _alice_answer(f: ClassicalFunction, received: str) -> QuantumChannel:
    """Alice computes f(u, w) into X and Bob's value g(u, w) into the reply register M2."""
    return classical_isometry(
        RegisterSystem((("U", f.n_u), (received, f.n_v))),
        RegisterSystem((("U", f.n_u), (received, f.n_v), ("X", f.n_out), ("M2", f.n_out))),
        lambda vals: (vals[0], vals[1], int(f.table[vals[0], vals[1]]), int(f.bob_values[vals[0], vals[1]])),
    )


def reveal_rounds(f: ClassicalFunction) -> list[Round]:
    return [
        Round(BOB, _copy("V", f.n_v, "M1"), ("M1",)),
        Round(ALICE, _alice_answer(f, "M1"), ("M2",)),
        Round(BOB, _copy("M2", f.n_out, "Y")),
    ]


def classical_reveal_protocol(f: ClassicalFunction, fixture_id: str | None = None) -> Fixture:
    """Bob sends v in the clear; Alice answers with the function value."""
    protocol = TwoPartyProtocol(f"reveal-{f.name}", f.n_u, f.n_v, reveal_rounds(f))
    return Fixture(
        id=fixture_id or f"reveal-{f.name.lower()}",
        function=f,
        protocol=protocol,
        ideal_adversary=view_simulator(protocol, f),
        notes="Bob reveals v; secure for Bob's side only in the trivial sense, broken for Alice.",
    )


def constant_protocol(f: ClassicalFunction, value: int = 0, fixture_id: str | None = None) -> Fixture:
    """No communication: both parties output the symbol with index ``value``."""
    def emit(party_in, dim_in, out):
        return classical_isometry(RegisterSystem(((party_in, dim_in),)),
                                  RegisterSystem(((party_in, dim_in), (out, f.n_out))),
                                  lambda vals: (vals[0], value))

    protocol = TwoPartyProtocol(f"constant-{f.name}", f.n_u, f.n_v,
                                [Round(ALICE, emit("U", f.n_u, "X")), Round(BOB, emit("V", f.n_v, "Y"))])
    if f.n_out == 1:
        # submitting a fixed input keeps Bob's v out of the functionality's record
        pre = classical_isometry(RegisterSystem((("V", f.n_v),)),
                                 RegisterSystem(((VT, f.n_v), ("K", f.n_v))), lambda vals: (0, vals[0]))
        view = protocol.system_of(protocol.bob_view)
        post = classical_isometry(RegisterSystem((("K", f.n_v), (YT, 1))), view,
                                  lambda vals: tuple(vals[0] if label == "V" else 0 for label in view.labels))
        adversary = IdealAdversary(pre, post, "fixed-submission")
    else:
        adversary = view_simulator(protocol, f)
    return Fixture(
        id=fixture_id or f"const-{f.name.lower()}",
        function=f,
        protocol=protocol,
        ideal_adversary=adversary,
        notes=f"constant output {f.output_alphabet[value]!r}, no messages",
    )


def appendix_protocol(n: int = 1) -> Fixture:
    """Bob sends b; Alice answers with s_b; both output (b, s_b)."""
    if n > MAX_OT_BITS:
        raise CapExceeded(f"appendix protocol is limited to n <= {MAX_OT_BITS}")
    f = make_function("OT_LIKE", n)
    protocol = TwoPartyProtocol(f"appendix-n{n}", f.n_u, f.n_v, reveal_rounds(f))
    return Fixture(
        id=f"appendix-n{n}",
        function=f,
        protocol=protocol,
        ideal_adversary=view_simulator(protocol, f),
        notes="OT-like function; Bob's view is (b, s_b)",
    )


def depolarize_fixture(base: Fixture, delta: float) -> Fixture:
    """Every message passes a depolarizing channel of rate ``delta``.

    The simulator replays Bob's view from the same protocol at rate 0, so it
    is the base simulator extended by the (idle) noise registers.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"depolarizing rate {delta} outside [0, 1]")
    if delta == 0.0:
        return base
    noisy = base.protocol.with_noise({m: delta for m in base.protocol.messages})
    silent = base.protocol.with_noise({m: 0.0 for m in base.protocol.messages})
    return Fixture(
        id=f"{base.id}-dep{delta:g}",
        function=base.function,
        protocol=noisy,
        ideal_adversary=view_simulator(noisy, base.function, reference=silent),
        noise=delta,
        notes=f"{base.notes}; messages depolarized at rate {delta:g}",
        seed=base.seed,
    )


def disj_flip_patterns(v: int, n: int) -> list[int]:
    """Perturbed inputs Bob may submit: v itself when |v| <= n/2, else v with
    floor(sqrt n) of its one-bits cleared, one entry per choice of bits."""
    ones = [i for i in range(n) if v >> i & 1]
    if 2 * len(ones) <= n:
        return [v]
    k = math.isqrt(n)
    out = []
    for chosen in combinations(ones, k):
        w = v
        for i in chosen:
            w &= ~(1 << i)
        out.append(w)
    return out


def disj_perturbed_fixture(n: int = 4, seed: int = 0) -> Fixture:
    """Classical reveal for DISJ where Bob first flips floor(sqrt n) random one-bits of a heavy v.

    The random choice is kept coherent in Bob's register C, so the fixture is
    exact; ``seed`` only drives the sampled estimate in :func:`disj_tightness_stats`.
    """
    if n not in (4, 9):
        raise ValueError("n must be 4 or 9")
    if n != 4:
        raise CapExceeded("quantum simulation of the perturbed fixture is limited to n = 4")
    f = make_function("DISJ", n)
    patterns = {v: disj_flip_patterns(v, n) for v in range(f.n_v)}
    c_dim = max(len(p) for p in patterns.values())

    def flip(vals):
        choices = patterns[vals[0]]
        amp = 1 / math.sqrt(len(choices))
        return [(amp, (vals[0], c, w)) for c, w in enumerate(choices)]

    wrapper = classical_isometry(RegisterSystem((("V", f.n_v),)),
                                 RegisterSystem((("V", f.n_v), ("C", c_dim), ("M1", f.n_v))), flip)
    rounds = [Round(BOB, wrapper, ("M1",)),
              Round(ALICE, _alice_answer(f, "M1"), ("M2",)),
              Round(BOB, _copy("M2", f.n_out, "Y"))]
    protocol = TwoPartyProtocol(f"disj-perturbed-n{n}", f.n_u, f.n_v, rounds)
    pre = classical_isometry(
        RegisterSystem((("V", f.n_v),)),
        RegisterSystem(((VT, f.n_v), ("K", f.n_v), ("KC", c_dim))),
        lambda vals: [(a, (w, vals[0], c)) for a, (_, c, w) in flip(vals)],
    )
    view = protocol.system_of(protocol.bob_view)

    def replay(vals):
        v, c, y = vals
        slots = {"V": v, "C": c, "M2": y, "Y_rec": y, "Y": y}
        return tuple(slots[label] for label in view.labels)

    post = classical_isometry(RegisterSystem((("K", f.n_v), ("KC", c_dim), (YT, f.n_out))), view, replay)
    return Fixture(
        id=f"disj-perturbed-n{n}",
        function=f,
        protocol=protocol,
        ideal_adversary=IdealAdversary(pre, post, "perturbing-replay"),
        notes=f"Bob clears {math.isqrt(n)} one-bits of v when |v| > n/2",
        seed=seed,
    )


@dataclass(frozen=True)
class DisjStats:
    n: int
    worst_error: float
    average_error: float
    sampled_error: float
    exact_recovery: float
    samples: int
    seed: int


def disj_tightness_stats(n: int, seed: int = 0, samples: int = 20000) -> DisjStats:
    """Classical enumeration for the perturbed DISJ reveal.

    ``worst_error`` maximises over (u, v) the probability that the output
    differs from DISJ(u, v); ``average_error`` is the uniform-input average;
    ``exact_recovery`` is the chance that the submitted string equals v,
    averaged over heavy v.  ``sampled_error`` is a seeded Monte Carlo estimate
    of ``average_error``.
    """
    if n not in (4, 9):
        raise ValueError("n must be 4 or 9")
    size = 2**n
    u = np.arange(size)
    wrong = np.zeros((size, size))
    recovery = []
    for v in range(size):
        pats = disj_flip_patterns(v, n)
        truth = (u & v) == 0
        for w in pats:
            wrong[:, v] += (((u & w) == 0) != truth) / len(pats)
        if 2 * _popcount(v) > n:
            recovery.append(sum(w == v for w in pats) / len(pats))
    rng = np.random.default_rng(seed)
    su = rng.integers(0, size, samples)
    sv = rng.integers(0, size, samples)
    errs = 0
    for a, b in zip(su, sv):
        pats = disj_flip_patterns(int(b), n)
        w = pats[rng.integers(len(pats))]
        errs += ((a & w) == 0) != ((a & b) == 0)
    return DisjStats(n, float(wrong.max()), float(wrong.mean()), errs / samples,
                     float(np.mean(recovery)), samples, seed)


def fixture_catalog() -> dict[str, callable]:
    """Fixture ids mapped to zero-argument constructors."""
    return {
        "reveal-eq-n1": lambda: classical_reveal_protocol(make_function("EQ", 1), "reveal-eq-n1"),
        "reveal-eq-n2": lambda: classical_reveal_protocol(make_function("EQ", 2), "reveal-eq-n2"),
        "reveal-ip-n2": lambda: classical_reveal_protocol(make_function("IP", 2), "reveal-ip-n2"),
        "reveal-disj-n2": lambda: classical_reveal_protocol(make_function("DISJ", 2), "reveal-disj-n2"),
        "appendix-n1": lambda: appendix_protocol(1),
        "const-n1": lambda: constant_protocol(make_function("CONST", 1), fixture_id="const-n1"),
        "const-eq-n1": lambda: constant_protocol(make_function("EQ", 1), fixture_id="const-eq-n1"),
        "disj-perturbed-n4": lambda: disj_perturbed_fixture(4),
    }


def load_fixture(fixture_id: str) -> Fixture:
    """Catalog lookup; ``<id>-dep<delta>`` yields the depolarized variant."""
    catalog = fixture_catalog()
    if fixture_id in catalog:
        return catalog[fixture_id]()
    base, sep, rate = fixture_id.rpartition("-dep")
    if sep and base in catalog:
        return depolarize_fixture(catalog[base](), float(rate))
    raise KeyError(f"unknown fixture {fixture_id!r}")


# --- appendix: the Hadamard attack and the two-copies simulator -------------

_HADAMARD = np.array([[1, 1], [1, -1]]) / math.sqrt(2)


def _measure_in_basis(label: str, record: str, basis: np.ndarray) -> QuantumChannel:
    """|psi>_label -> sum_o <b_o|psi> |b_o>_label |o>_record (columns of ``basis`` are b_o)."""
    d = basis.shape[0]
    mat = np.zeros((d * d, d), dtype=complex)
    for o in range(d):
        proj = np.outer(basis[:, o], basis[:, o].conj())
        for i in range(d):
            mat[i * d + o] += proj[i]
    return QuantumChannel.isometry(RegisterSystem(((label, d),)),
                                   RegisterSystem(((label, d), (record, d))), mat)


def _controlled_measurement(b_label: str, hadamard: bool) -> QuantumChannel:
    """Measure S0 in the computational basis if b = 0, else in the Hadamard basis
    (or computationally again when ``hadamard`` is False); outcome into O."""
    bases = (np.eye(2), _HADAMARD if hadamard else np.eye(2))

    def fn(vals):
        b, s = vals
        basis = bases[b]
        return [(basis[s, o].conj() * basis[t, o], (b, t, o)) for o in range(2) for t in range(2)]

    return classical_isometry(RegisterSystem(((b_label, 2), ("S0", 2))),
                              RegisterSystem(((b_label, 2), ("S0", 2), ("O", 2))), fn)


def _appendix_inputs() -> PureState:
    """(1/sqrt 8) sum |s0 s1 b>_R |s0>_S0 |s1>_S1 |b>_B."""
    system = RegisterSystem((("R", 8), ("S0", 2), ("S1", 2), ("B", 2)))
    amps = np.zeros((8, 2, 2, 2), dtype=complex)
    for s0 in range(2):
        for s1 in range(2):
            for b in range(2):
                amps[s0 * 4 + s1 * 2 + b, s0, s1, b] = 1 / math.sqrt(8)
    return PureState(system, amps.reshape(-1))


def _outputs(b_label: str, o_label: str, state: PureState) -> PureState:
    """Copy (b, o) into Alice's X and Bob's Y, encoded as 2 b + o."""
    fn = classical_isometry(RegisterSystem(((b_label, 2), (o_label, 2))),
                            RegisterSystem(((b_label, 2), (o_label, 2), ("X", 4), ("Y", 4))),
                            lambda vals: (vals[0], vals[1], 2 * vals[0] + vals[1], 2 * vals[0] + vals[1]))
    return apply_isometry(fn, state)


def _appendix_real(hadamard: bool) -> PureState:
    state = _appendix_inputs()
    state = apply_isometry(_copy("B", 2, "Bsent"), state)  # Bob's message
    state = apply_isometry(_controlled_measurement("Bsent", hadamard), state)
    return _outputs("Bsent", "O", state)


def _appendix_ideal(hadamard: bool) -> PureState:
    """The two-copies simulator: measure U, run both copies, submit (o0, o1) to F."""
    state = _appendix_inputs()
    state = apply_isometry(_measure_in_basis("S0", "M0", np.eye(2)), state)
    state = apply_isometry(_measure_in_basis("S1", "M1", np.eye(2)), state)
    # copy 1 (b = 0): computational measurement of the classical s0
    state = apply_isometry(_copy("M0", 2, "O0"), state)
    # copy 2 (b = 1): the attack's second basis applied to a fresh |s0>
    prep = classical_isometry(RegisterSystem((("M0", 2),)), RegisterSystem((("M0", 2), ("W", 2))),
                              lambda vals: (vals[0], vals[0]))
    state = apply_isometry(prep, state)
    second = _HADAMARD if hadamard else np.eye(2)
    state = apply_isometry(_measure_in_basis("W", "O1", second), state)
    # F on (o0, o1) and Bob's b: output (b, o_b)
    fb = classical_isometry(
        RegisterSystem((("B", 2), ("O0", 2), ("O1", 2))),
        RegisterSystem((("B", 2), ("O0", 2), ("O1", 2), ("O", 2))),
        lambda vals: (vals[0], vals[1], vals[2], vals[1] if vals[0] == 0 else vals[2]),
    )
    state = apply_isometry(fb, state)
    return _outputs("B", "O", state)


def two_copies_simulator_check(n: int = 1, hadamard: bool = True) -> tuple[float, float]:
    """(tv_without_R, distance_with_R) for the Hadamard attack against the two-copies simulator.

    Without R the inputs are classical, which is the same as R being
    measured; the comparison is then a total variation distance.  With the
    coherent R it is the purified distance of the states on R, X, Y.
    """
    if n != 1:
        raise CapExceeded("the two-copies check is implemented for n = 1")
    real = partial_trace(_appendix_real(hadamard), ["R", "X", "Y"]).reordered(["R", "X", "Y"])
    ideal = partial_trace(_appendix_ideal(hadamard), ["R", "X", "Y"]).reordered(["R", "X", "Y"])
    p_real = dephase(real, ["R"]).diagonal()
    p_ideal = dephase(ideal, ["R"]).diagonal()
    tv = 0.5 * float(np.sum(np.abs(p_real - p_ideal)))
    return tv, purified_distance(real, ideal)


__all__ = [
    "CapExceeded", "DisjStats", "Fixture", "KINDS", "appendix_protocol", "bit_labels",
    "classical_reveal_protocol", "constant_protocol", "depolarize_fixture", "disj_flip_patterns",
    "disj_perturbed_fixture", "disj_tightness_stats", "fixture_catalog", "load_fixture",
    "make_function", "two_copies_simulator_check",
]
