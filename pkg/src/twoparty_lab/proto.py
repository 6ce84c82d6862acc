"""Two-party protocols, the ideal functionality, and the correctness/security measures.

Inputs are purified canonically: register ``R`` holds ``|u v>`` with index
``u * |V| + v``.  Because nothing ever acts on ``R``, every execution splits
into independent *branches*, one per input pair; the heavier pipelines work
branch by branch and only assemble full states when asked to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections import OrderedDict
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .minimax import solve_zero_sum
from .qcore import (
    TOL,
    DensityOperator,
    DimensionError,
    PureState,
    QuantumChannel,
    RegisterError,
    RegisterSystem,
    apply_channel,
    apply_isometry,
    classical_isometry,
    depolarizing_channel,
    distance_from_fidelity,
    partial_trace,
    purified_distance,
    reduced_matrix,
    stinespring,
)

ALICE, BOB = "alice", "bob"
X_REC, Y_REC = "X_rec", "Y_rec"
# ideal-world register names
VT, YT, P_FV, P_FU, P_PRE, P_POST = "Vt", "Yt", "P_Fv", "P_Fu", "P_pre", "P_post"
# dense-matrix cap for assembled states
MAX_DENSE_DIM = 4096
# total bytes held by the branch caches before least-recently-used entries go;
# single entries above a sixteenth of this are recomputed rather than kept
BRANCH_CACHE_BYTES = 256 << 20


class _BranchCache:
    """LRU store of branch states and matrices with a byte budget."""

    def __init__(self, max_bytes: int = BRANCH_CACHE_BYTES):
        self.max_bytes = max_bytes
        self._items: OrderedDict = OrderedDict()
        self._bytes = 0

    @staticmethod
    def _size(value) -> int:
        return value.amplitudes.nbytes if isinstance(value, PureState) else value.nbytes

    def get(self, key):
        value = self._items.get(key)
        if value is not None:
            self._items.move_to_end(key)
        return value

    def put(self, key, value) -> None:
        size = self._size(value)
        if size > self.max_bytes // 16 or key in self._items:
            return
        self._items[key] = value
        self._bytes += size
        while self._bytes > self.max_bytes:
            _, old = self._items.popitem(last=False)
            self._bytes -= self._size(old)

    def clear(self) -> None:
        self._items.clear()
        self._bytes = 0


_CACHE = _BranchCache()


class ProtocolError(ValueError):
    """Malformed round sequence or register ownership violation."""


@dataclass(frozen=True, eq=False)
class ClassicalFunction:
    """Truth table of f (and optionally Bob's g) as indices into ``output_alphabet``."""

    name: str
    u_domain: tuple
    v_domain: tuple
    table: np.ndarray
    output_alphabet: tuple
    bob_table: np.ndarray | None = None

    def __post_init__(self):
        for attr in ("table", "bob_table"):
            tab = getattr(self, attr)
            if tab is None:
                continue
            tab = np.asarray(tab, dtype=int)
            if tab.shape != (len(self.u_domain), len(self.v_domain)):
                raise ValueError(f"{attr} shape {tab.shape} is not |U| x |V|")
            if tab.min() < 0 or tab.max() >= len(self.output_alphabet):
                raise ValueError(f"{attr} refers to symbols outside the output alphabet")
            tab.setflags(write=False)
            object.__setattr__(self, attr, tab)

    @property
    def n_u(self) -> int:
        return len(self.u_domain)

    @property
    def n_v(self) -> int:
        return len(self.v_domain)

    @property
    def n_out(self) -> int:
        return len(self.output_alphabet)

    @property
    def bob_values(self) -> np.ndarray:
        return self.table if self.bob_table is None else self.bob_table

    def __call__(self, u, v):
        """Output symbol for domain labels ``u`` and ``v``."""
        return self.output_alphabet[self.table[self.u_domain.index(u), self.v_domain.index(v)]]

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "u_domain": list(self.u_domain),
            "v_domain": list(self.v_domain),
            "output_alphabet": list(self.output_alphabet),
            "table": self.table.tolist(),
        }


@dataclass(frozen=True, eq=False)
class JointDistribution:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be a |U| x |V| array")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_u: int, n_v: int) -> "JointDistribution":
        return cls(np.full((n_u, n_v), 1.0 / (n_u * n_v)))

    @classmethod
    def point(cls, n_u: int, n_v: int, iu: int, iv: int) -> "JointDistribution":
        w = np.zeros((n_u, n_v))
        w[iu, iv] = 1.0
        return cls(w)

    @classmethod
    def from_mapping(cls, f: ClassicalFunction, mapping: Mapping) -> "JointDistribution":
        w = np.zeros((f.n_u, f.n_v))
        for (u, v), weight in mapping.items():
            w[f.u_domain.index(u), f.v_domain.index(v)] = weight
        return cls(w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def support(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(*np.nonzero(self.weights))]


@dataclass(frozen=True, eq=False)
class Round:
    """One local isometry of ``party``; ``send`` hands registers to the other party afterwards."""

    party: str
    op: QuantumChannel
    send: tuple[str, ...] = ()


def _other(party: str) -> str:
    return BOB if party == ALICE else ALICE


class TwoPartyProtocol:
    """Alice holds ``U``, Bob holds ``V``; rounds are isometries on registers the acting party holds.

    Registers created by a round belong to the acting party.  ``noise`` maps
    message labels to a depolarizing rate applied on every hand-off; the
    dilation register of that noise goes to the receiver.
    """

    def __init__(self, name: str, u_dim: int, v_dim: int, rounds: Sequence[Round],
                 x_label: str = "X", y_label: str = "Y", noise: Mapping[str, float] | None = None):
        self.name = name
        self.u_dim = int(u_dim)
        self.v_dim = int(v_dim)
        self.rounds = tuple(rounds)
        self.x_label = x_label
        self.y_label = y_label
        self.noise = dict(noise or {})
        self._validate()

    def _validate(self) -> None:
        dims = {"U": self.u_dim, "V": self.v_dim}
        owner = {"U": ALICE, "V": BOB}
        order = ["U", "V"]
        sent: set[str] = set()
        noise_envs = []
        for k, rnd in enumerate(self.rounds):
            if rnd.party not in (ALICE, BOB):
                raise ProtocolError(f"round {k}: unknown party {rnd.party!r}")
            if not rnd.op.is_isometry:
                raise ProtocolError(f"round {k}: operation must be a single-Kraus isometry")
            ins = rnd.op.input_system
            for label, dim in ins.registers:
                if label not in dims:
                    raise ProtocolError(f"round {k}: register {label!r} does not exist")
                if dims[label] != dim:
                    raise DimensionError(f"round {k}: {label!r} has dim {dims[label]}, op expects {dim}")
                if owner[label] != rnd.party:
                    raise ProtocolError(f"round {k}: {rnd.party} does not hold {label!r}")
            for label, dim in rnd.op.output_system.registers:
                if label in ins:
                    if ins.dim_of(label) != dim:
                        raise DimensionError(f"round {k}: {label!r} changes dimension")
                elif label in dims:
                    raise RegisterError(f"round {k}: output {label!r} already exists")
                if label in (X_REC, Y_REC):
                    raise RegisterError(f"round {k}: {label!r} is reserved")
            for label in set(ins.labels) - set(rnd.op.output_system.labels):
                del dims[label], owner[label]
                order.remove(label)
            for label, dim in rnd.op.output_system.registers:
                if label not in dims:
                    dims[label] = dim
                    owner[label] = rnd.party
                    order.append(label)
            for label in rnd.send:
                if owner.get(label) != rnd.party:
                    raise ProtocolError(f"round {k}: {rnd.party} cannot send {label!r}")
                owner[label] = _other(rnd.party)
                sent.add(label)
                if label in self.noise:
                    env = f"N{k}_{label}"
                    dims[env] = dims[label] ** 2
                    owner[env] = _other(rnd.party)
                    order.append(env)
                    noise_envs.append((k, label, env))
        for label in self.noise:
            if label not in sent:
                raise ProtocolError(f"noise on {label!r}, which is never sent")
            if not 0.0 <= self.noise[label] <= 1.0:
                raise ValueError(f"depolarizing rate {self.noise[label]} outside [0, 1]")
        if owner.get(self.x_label) != ALICE:
            raise ProtocolError(f"Alice does not hold her output {self.x_label!r} at the end")
        if owner.get(self.y_label) != BOB:
            raise ProtocolError(f"Bob does not hold his output {self.y_label!r} at the end")
        self._dims = dims
        self._noise_envs = noise_envs
        self.messages = tuple(sorted(sent))
        self.alice_purification = tuple(
            [label for label in order if owner[label] == ALICE and label != self.x_label] + [X_REC]
        )
        self.bob_purification = tuple(
            [label for label in order if owner[label] == BOB and label != self.y_label] + [Y_REC]
        )

    def dim_of(self, label: str) -> int:
        if label == X_REC:
            return self._dims[self.x_label]
        if label == Y_REC:
            return self._dims[self.y_label]
        return self._dims[label]

    @property
    def bob_view(self) -> tuple[str, ...]:
        """Labels of Bob's dishonest register Y' = Y'_1 Y."""
        return self.bob_purification + (self.y_label,)

    @property
    def branch_labels(self) -> tuple[str, ...]:
        return (self.x_label,) + self.alice_purification + self.bob_view

    def system_of(self, labels: Iterable[str]) -> RegisterSystem:
        return RegisterSystem(tuple((label, self.dim_of(label)) for label in labels))

    def with_noise(self, noise: Mapping[str, float]) -> "TwoPartyProtocol":
        return TwoPartyProtocol(self.name, self.u_dim, self.v_dim, self.rounds,
                                self.x_label, self.y_label, noise)

    def _noise_channel(self, label: str, delta: float) -> QuantumChannel:
        return depolarizing_channel(RegisterSystem(((label, self._dims[label]),)), delta)

    def purified_branch(self, iu: int, iv: int) -> PureState:
        """Honest-but-purified execution on classical inputs ``|u>_U |v>_V``.

        Output registers are copied into ``X_rec`` / ``Y_rec`` (deferred
        measurement); the result is ordered as ``branch_labels``.
        """
        key = (self, "branch", iu, iv)
        cached = _CACHE.get(key)
        if cached is not None:
            return cached
        state = PureState.basis(RegisterSystem((("U", self.u_dim), ("V", self.v_dim))), (iu, iv))
        envs = {(k, label): env for k, label, env in self._noise_envs}
        for k, rnd in enumerate(self.rounds):
            state = apply_isometry(rnd.op, state)
            for label in rnd.send:
                if label in self.noise:
                    dil = stinespring(self._noise_channel(label, self.noise[label]), envs[(k, label)])
                    state = apply_isometry(dil, state)
        for out, rec in ((self.x_label, X_REC), (self.y_label, Y_REC)):
            d = state.system.dim_of(out)
            copy = classical_isometry(RegisterSystem(((out, d),)), RegisterSystem(((out, d), (rec, d))),
                                      lambda vals: (vals[0], vals[0]))
            state = apply_isometry(copy, state)
        state = state.reordered(self.branch_labels)
        _CACHE.put(key, state)
        return state

    def shared_matrix(self, iu: int, iv: int) -> np.ndarray:
        """Branch amplitudes as a matrix: rows X and Bob's view, columns Alice's purification."""
        key = (self, "shared", iu, iv)
        cached = _CACHE.get(key)
        if cached is not None:
            return cached
        shared = (self.x_label,) + self.bob_view
        mat = self.purified_branch(iu, iv).matrix(shared, self.alice_purification)
        _CACHE.put(key, mat)
        return mat

    def honest_branch_distribution(self, iu: int, iv: int) -> np.ndarray:
        """Joint distribution of the measured outputs (x, y) on inputs (u, v).

        Runs an ensemble of unnormalised pure trajectories: each noise channel
        splits a trajectory into its Kraus images, and a register that no later
        round touches is discarded by splitting over its basis values.  Zero
        trajectories are pruned, so classical protocols stay a single vector.
        """
        last_use = {}
        for k, rnd in enumerate(self.rounds):
            for label in rnd.op.input_system.labels:
                last_use[label] = k
        outputs = {self.x_label, self.y_label}
        system = RegisterSystem((("U", self.u_dim), ("V", self.v_dim)))
        start = np.zeros(system.dims, dtype=complex)
        start[iu, iv] = 1.0
        members = [start]
        for k, rnd in enumerate(self.rounds):
            members, system = _evolve(members, system, rnd.op.input_system, rnd.op.output_system,
                                      rnd.op.kraus)
            for label in rnd.send:
                if label in self.noise:
                    ch = self._noise_channel(label, self.noise[label])
                    members, system = _evolve(members, system, ch.input_system, ch.output_system, ch.kraus)
            for label in [lab for lab in system.labels if lab not in outputs and last_use.get(lab, -1) <= k]:
                axis = system.index(label)
                members = [np.take(m, i, axis=axis) for m in members for i in range(system.dim_of(label))]
                members = [m for m in members if np.vdot(m, m).real > 1e-15]
                system = system.without([label])
        dx, dy = self.dim_of(self.x_label), self.dim_of(self.y_label)
        dist = np.zeros((dx, dy))
        ix, iy = system.index(self.x_label), system.index(self.y_label)
        rest = tuple(i for i in range(len(system)) if i not in (ix, iy))
        for m in members:
            probs = np.sum(np.abs(m) ** 2, axis=rest) if rest else np.abs(m) ** 2
            dist += probs if ix < iy else probs.T
        return dist


def _evolve(members, system, ins, outs, kraus):
    """Apply Kraus operators to every trajectory; each operator spawns a trajectory."""
    axes = [system.index(label) for label in ins.labels]
    rest_axes = [i for i in range(len(system)) if i not in axes]
    new_system = outs.concat(system.without(ins.labels))
    shape = outs.dims + tuple(system.dims[i] for i in rest_axes)
    result = []
    for m in members:
        moved = np.transpose(m, axes + rest_axes).reshape(ins.dim, -1)
        for op in kraus:
            vec = (op @ moved).reshape(shape)
            if np.vdot(vec, vec).real > 1e-15:
                result.append(vec)
    return result, new_system


def _relabel_channel(ch: QuantumChannel, mapping: Mapping[str, str]) -> QuantumChannel:
    def move(system):
        return RegisterSystem(tuple((mapping.get(label, label), dim) for label, dim in system.registers))
    return QuantumChannel(move(ch.input_system), move(ch.output_system), ch.kraus)


def swap_roles(protocol: TwoPartyProtocol) -> TwoPartyProtocol:
    """The same protocol with Alice and Bob exchanged (U<->V, X<->Y).

    Security against a dishonest Alice of ``protocol`` is security against a
    dishonest Bob of the result, with the function transposed.
    """
    mapping = {"U": "V", "V": "U", protocol.x_label: "Y", protocol.y_label: "X"}
    for label in ("X", "Y"):
        if label not in mapping and any(label in r.op.output_system for r in protocol.rounds):
            raise RegisterError(f"register {label!r} would collide after the swap")
    rounds = [Round(_other(r.party), _relabel_channel(r.op, mapping),
                    tuple(mapping.get(label, label) for label in r.send)) for r in protocol.rounds]
    noise = {mapping.get(label, label): delta for label, delta in protocol.noise.items()}
    return TwoPartyProtocol(f"{protocol.name}-swapped", protocol.v_dim, protocol.u_dim, rounds, "X", "Y", noise)


def transpose_function(f: ClassicalFunction) -> ClassicalFunction:
    """f'(v, u) = f(u, v), with Bob's table becoming Alice's and vice versa."""
    bob = None if f.bob_table is None else f.table.T
    alice = f.bob_values.T
    return ClassicalFunction(f"{f.name}-transposed", f.v_domain, f.u_domain, alice, f.output_alphabet, bob)


def transpose_distribution(p: JointDistribution) -> JointDistribution:
    return JointDistribution(p.weights.T)


def reference_system(n_u: int, n_v: int) -> RegisterSystem:
    return RegisterSystem((("R", n_u * n_v),))


def input_state(p: JointDistribution) -> PureState:
    """sum_{u,v} sqrt(p(u,v)) |uv>_R |u>_U |v>_V."""
    n_u, n_v = p.shape
    system = reference_system(n_u, n_v).concat(RegisterSystem((("U", n_u), ("V", n_v))))
    amps = np.zeros((n_u * n_v, n_u, n_v), dtype=complex)
    for iu, iv in p.support():
        amps[iu * n_v + iv, iu, iv] = math.sqrt(p.weights[iu, iv])
    return PureState(system, amps.reshape(-1))


def functionality_channel(f: ClassicalFunction, augmented: bool = False, u_label: str = "Ut",
                          v_label: str = VT, x_label: str = "Xt", y_label: str = YT) -> QuantumChannel:
    """F (or F_aug) in Kraus form: one Kraus operator |f f (v)><u v| per input pair."""
    ins = RegisterSystem(((u_label, f.n_u), (v_label, f.n_v)))
    regs = [(x_label, f.n_out), (y_label, f.n_out)]
    if augmented:
        regs.append((v_label, f.n_v))
    outs = RegisterSystem(tuple(regs))
    kraus = []
    for iu in range(f.n_u):
        for iv in range(f.n_v):
            k = np.zeros((outs.dim, ins.dim))
            image = (f.table[iu, iv], f.bob_values[iu, iv]) + ((iv,) if augmented else ())
            k[np.ravel_multi_index(image, outs.dims), iu * f.n_v + iv] = 1.0
            kraus.append(k)
    return QuantumChannel(ins, outs, tuple(kraus))


def apply_ideal_functionality(f: ClassicalFunction, rho: DensityOperator, u_label: str = "Ut",
                              v_label: str = VT, x_label: str = "Xt", y_label: str = YT) -> DensityOperator:
    return apply_channel(functionality_channel(f, False, u_label, v_label, x_label, y_label), rho)


def apply_augmented_functionality(f: ClassicalFunction, rho: DensityOperator, u_label: str = "Ut",
                                  v_label: str = VT, x_label: str = "Xt",
                                  y_label: str = YT) -> DensityOperator:
    return apply_channel(functionality_channel(f, True, u_label, v_label, x_label, y_label), rho)


@dataclass(frozen=True, eq=False)
class IdealAdversary:
    """Bob's simulator: ``pre`` maps V -> Vt K..., ``post`` maps K... Yt -> Y'."""

    pre: QuantumChannel
    post: QuantumChannel
    name: str = "simulator"

    def __post_init__(self):
        if self.pre.input_system.labels != ("V",):
            raise RegisterError("pre-processing must act on exactly the register V")
        if VT not in self.pre.output_system:
            raise RegisterError(f"pre-processing must output {VT!r}")
        if YT not in self.post.input_system:
            raise RegisterError(f"post-processing must consume {YT!r}")
        k_pre = self.pre.output_system.without([VT])
        k_post = self.post.input_system.without([YT])
        if sorted(k_pre.registers) != sorted(k_post.registers):
            raise DimensionError(f"K registers disagree: {k_pre} vs {k_post}")

    @property
    def view_labels(self) -> tuple[str, ...]:
        return self.post.output_system.labels

    @classmethod
    def forwarding(cls, v_dim: int, out_dim: int, y_label: str = "Y") -> "IdealAdversary":
        """The honest ideal Bob: input and output are forwarded unchanged."""
        pre = QuantumChannel.identity(RegisterSystem((("V", v_dim),)))
        pre = QuantumChannel.isometry(pre.input_system, RegisterSystem(((VT, v_dim),)), pre.matrix)
        post = QuantumChannel.isometry(RegisterSystem(((YT, out_dim),)),
                                       RegisterSystem(((y_label, out_dim),)), np.eye(out_dim))
        return cls(pre, post, "forwarding")


def _dilate(ch: QuantumChannel, env: str) -> QuantumChannel:
    return ch if ch.is_isometry else stinespring(ch, env)


def ideal_env_labels(adversary: IdealAdversary) -> tuple[str, ...]:
    """Purifying registers of one ideal branch, excluding the implicit copy of u."""
    labels = []
    if not adversary.pre.is_isometry:
        labels.append(P_PRE)
    labels.append(P_FV)
    if not adversary.post.is_isometry:
        labels.append(P_POST)
    return tuple(labels)


def ideal_branch(f: ClassicalFunction, adversary: IdealAdversary, iu: int, iv: int) -> PureState:
    """Dilated ideal execution on classical inputs (u, v).

    The functionality's record of u is left implicit (it equals the branch
    key); its record of the submitted input sits in ``P_Fv``.  Result order:
    ``X, Y'..., env..., Vt``.
    """
    key = (f, adversary, iu, iv)
    cached = _CACHE.get(key)
    if cached is None:
        cached = _ideal_branch(f, adversary, iu, iv)
        _CACHE.put(key, cached)
    return cached


def _ideal_branch(f: ClassicalFunction, adversary: IdealAdversary, iu: int, iv: int) -> PureState:
    state = PureState.basis(RegisterSystem((("V", f.n_v),)), (iv,))
    state = apply_isometry(_dilate(adversary.pre, P_PRE), state)
    f_u = classical_isometry(
        RegisterSystem(((VT, f.n_v),)),
        RegisterSystem((("X", f.n_out), (YT, f.n_out), (VT, f.n_v), (P_FV, f.n_v))),
        lambda vals: (int(f.table[iu, vals[0]]), int(f.bob_values[iu, vals[0]]), vals[0], vals[0]),
    )
    state = apply_isometry(f_u, state)
    state = apply_isometry(_dilate(adversary.post, P_POST), state)
    return state.reordered(("X",) + adversary.view_labels + ideal_env_labels(adversary) + (VT,))


def _relabel_x(state: PureState, x_label: str) -> PureState:
    if x_label == "X":
        return state
    regs = tuple((x_label if label == "X" else label, dim) for label, dim in state.system.registers)
    return PureState(RegisterSystem(regs), state.amplitudes)


def _assemble_density(rows: dict[tuple[int, int], np.ndarray], n_u: int, n_v: int, dk: int,
                      tagged: bool) -> np.ndarray:
    """sum over branches of |uv><u'v'| (x) M_uv M_u'v'^dagger, M rows = kept registers.

    With ``tagged`` the environment also holds a copy of u, so blocks with u != u' vanish.
    """
    d = n_u * n_v * dk
    if d > MAX_DENSE_DIM:
        raise DimensionError(f"assembled state of dim {d} exceeds the dense cap {MAX_DENSE_DIM}")
    mat = np.zeros((d, d), dtype=complex)
    groups = [list(range(n_u))] if not tagged else [[iu] for iu in range(n_u)]
    for group in groups:
        keys = [(iu, iv) for iu in group for iv in range(n_v) if (iu, iv) in rows]
        if not keys:
            continue
        stacked = np.concatenate([rows[key] for key in keys], axis=0)
        block = stacked @ stacked.conj().T
        idx = np.concatenate([np.arange(dk) + (iu * n_v + iv) * dk for iu, iv in keys])
        mat[np.ix_(idx, idx)] += block
    return 0.5 * (mat + mat.conj().T)


def run_ideal(f: ClassicalFunction, p: JointDistribution, adversary: IdealAdversary | None = None,
              augmented: bool = False, x_label: str = "X") -> DensityOperator:
    """id_R (x) [Lambda2 o F(_aug) o Lambda1] applied to the purified input.

    Returns the state on ``R, X, (Vt), Y'``; ``adversary=None`` is the honest ideal Bob.
    """
    adversary = adversary or IdealAdversary.forwarding(f.n_v, f.n_out)
    env = ideal_env_labels(adversary)
    kept = ("X",) + ((VT,) if augmented else ()) + adversary.view_labels
    traced = env if augmented else env + (VT,)
    rows = {}
    for iu, iv in p.support():
        branch = ideal_branch(f, adversary, iu, iv)
        rows[(iu, iv)] = math.sqrt(p.weights[iu, iv]) * branch.matrix(kept, traced)
    dk = math.prod(branch.system.dim_of(label) for label in kept)
    mat = _assemble_density(rows, f.n_u, f.n_v, dk, tagged=True)
    system = reference_system(f.n_u, f.n_v).concat(branch.system.select(kept).ordered(kept))
    return _relabel_density(DensityOperator(system, mat), x_label)


def _relabel_density(rho: DensityOperator, x_label: str) -> DensityOperator:
    if x_label == "X":
        return rho
    regs = tuple((x_label if label == "X" else label, dim) for label, dim in rho.system.registers)
    return DensityOperator(RegisterSystem(regs), rho.matrix)


def run_honest(protocol: TwoPartyProtocol, p: JointDistribution) -> DensityOperator:
    """Output state on R, X, Y when both parties follow the protocol and measure."""
    n_u, n_v = p.shape
    if (n_u, n_v) != (protocol.u_dim, protocol.v_dim):
        raise DimensionError("distribution shape does not match the protocol inputs")
    dx, dy = protocol.dim_of(protocol.x_label), protocol.dim_of(protocol.y_label)
    diag = np.zeros((n_u * n_v, dx, dy))
    for iu, iv in p.support():
        diag[iu * n_v + iv] = p.weights[iu, iv] * protocol.honest_branch_distribution(iu, iv)
    system = reference_system(n_u, n_v).concat(
        RegisterSystem(((protocol.x_label, dx), (protocol.y_label, dy))))
    return DensityOperator(system, np.diag(diag.reshape(-1)).astype(complex))


def run_purified(protocol: TwoPartyProtocol, p: JointDistribution, dishonest: str = ALICE) -> PureState:
    """|Phi> on R, X, X'_1, Y'_1, Y with every measurement deferred.

    X'_1 is ``protocol.alice_purification`` and Y'_1 ``protocol.bob_purification``.
    Both parties are honest-but-purified, so ``dishonest`` only selects who
    will later act on the state; the state itself is the same.
    """
    if dishonest not in (ALICE, BOB):
        raise ValueError(f"unknown party {dishonest!r}")
    n_u, n_v = p.shape
    first = protocol.purified_branch(*p.support()[0])
    total = n_u * n_v * first.system.dim
    if total > 1 << 24:
        raise DimensionError(f"|Phi> would need {total} amplitudes; use the branch interface")
    amps = np.zeros((n_u * n_v, first.system.dim), dtype=complex)
    for iu, iv in p.support():
        amps[iu * n_v + iv] = math.sqrt(p.weights[iu, iv]) * protocol.purified_branch(iu, iv).amplitudes
    return PureState(reference_system(n_u, n_v).concat(first.system), amps.reshape(-1))


def real_output_state(protocol: TwoPartyProtocol, p: JointDistribution,
                      keep: Sequence[str] | None = None) -> DensityOperator:
    """Reduced state of |Phi> on R and ``keep`` (default: X and Bob's view, i.e. rho_RXY')."""
    keep = tuple(keep) if keep is not None else (protocol.x_label,) + protocol.bob_view
    traced = tuple(label for label in protocol.branch_labels if label not in keep)
    n_u, n_v = p.shape
    rows = {}
    for iu, iv in p.support():
        branch = protocol.purified_branch(iu, iv)
        rows[(iu, iv)] = math.sqrt(p.weights[iu, iv]) * branch.matrix(keep, traced)
    system = reference_system(n_u, n_v).concat(protocol.system_of(keep))
    dk = system.dim // (n_u * n_v)
    return DensityOperator(system, _assemble_density(rows, n_u, n_v, dk, tagged=False))


def correctness_epsilon(protocol: TwoPartyProtocol, f: ClassicalFunction, p: JointDistribution) -> float:
    """C([id_R (x) pi_AB](rho_UVR), [id_R (x) F_AB](rho_UVR))."""
    real = run_honest(protocol, p)
    ideal = run_ideal(f, p, IdealAdversary.forwarding(f.n_v, f.n_out, protocol.y_label),
                      x_label=protocol.x_label)
    ideal = ideal.reordered(real.system.labels)
    return purified_distance(real, ideal)


def worst_case_correctness(protocol: TwoPartyProtocol, f: ClassicalFunction) -> tuple[float, tuple[int, int]]:
    """max over input distributions of :func:`correctness_epsilon`.

    Real and ideal honest outputs are both block diagonal in R with the same
    block weights, so the fidelity is linear in p and the worst case sits at a
    point mass.
    """
    best = (-1.0, (0, 0))
    for iu in range(f.n_u):
        for iv in range(f.n_v):
            eps = correctness_epsilon(protocol, f, JointDistribution.point(f.n_u, f.n_v, iu, iv))
            best = max(best, (eps, (iu, iv)))
    return best


def _check_compatible(protocol: TwoPartyProtocol, f: ClassicalFunction, adversary: IdealAdversary) -> None:
    if (protocol.u_dim, protocol.v_dim) != (f.n_u, f.n_v):
        raise DimensionError("function domains do not match the protocol inputs")
    view = protocol.system_of(protocol.bob_view)
    if adversary.post.output_system != view:
        raise DimensionError(f"simulator outputs {adversary.post.output_system}, Bob's view is {view}")
    if protocol.dim_of(protocol.x_label) != f.n_out:
        raise DimensionError("Alice's output register does not match the output alphabet")


def _sparse_block(protocol: TwoPartyProtocol, f: ClassicalFunction, adversary: IdealAdversary,
                  iu: int, iv: int) -> sparse.csr_matrix:
    ideal_shared = ("X",) + adversary.view_labels
    env_ideal = ideal_env_labels(adversary) + (VT,)
    phi = protocol.shared_matrix(iu, iv)
    psi = ideal_branch(f, adversary, iu, iv).matrix(ideal_shared, env_ideal)
    # branch states of classical protocols have few nonzero amplitudes
    return sparse.csr_matrix(phi).T @ sparse.csr_matrix(psi).conj()


def overlap_blocks(protocol: TwoPartyProtocol, f: ClassicalFunction, adversary: IdealAdversary,
                   pairs: Iterable[tuple[int, int]]) -> dict[tuple[int, int], np.ndarray]:
    """Per-branch overlap matrices phi_uv^T conj(psi_uv) between Alice's purification
    X'_1 (rows) and the ideal environment P Vt without the u-copy (columns)."""
    _check_compatible(protocol, f, adversary)
    return {(iu, iv): _sparse_block(protocol, f, adversary, iu, iv).toarray() for iu, iv in pairs}


def trace_norm(mat: np.ndarray) -> float:
    """Sum of singular values; all-zero rows and columns are dropped first."""
    mat = mat[np.any(mat != 0, axis=1)]
    mat = mat[:, np.any(mat != 0, axis=0)]
    if mat.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(mat, compute_uv=False)))


def combine_blocks(blocks: Mapping[tuple[int, int], np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Full overlap matrix sum_uv p(u,v) X_uv, with the u-copy as the leading column index."""
    n_u = weights.shape[0]
    e1, e2 = next(iter(blocks.values())).shape
    out = np.zeros((e1, n_u, e2), dtype=complex)
    for (iu, iv), block in blocks.items():
        w = weights[iu, iv]
        if w > 0:
            out[:, iu, :] += w * block
    return out.reshape(e1, n_u * e2)


def fidelity_from_blocks(blocks, weights: np.ndarray) -> float:
    """F(rho_RXY', sigma_RXY') as the trace norm of the overlap matrix (Uhlmann)."""
    return min(1.0, trace_norm(combine_blocks(blocks, weights)))


def security_epsilon(protocol: TwoPartyProtocol, f: ClassicalFunction, p: JointDistribution,
                     ideal_adversary: IdealAdversary) -> float:
    """C(rho_RXY', sigma_RXY') for the honest-but-purified Bob against ``ideal_adversary``.

    Evaluated through purifications: F equals the trace norm of
    sum_uv p(u,v) phi_uv^T conj(psi_uv), which never forms the large states.
    """
    _check_compatible(protocol, f, ideal_adversary)
    rows, cols, vals = [], [], []
    shape = None
    for iu, iv in p.support():
        block = _sparse_block(protocol, f, ideal_adversary, iu, iv).tocoo()
        shape = block.shape
        rows.append(block.row)
        cols.append(block.col + iu * block.shape[1])
        vals.append(p.weights[iu, iv] * block.data)
    total = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(shape[0], f.n_u * shape[1])).tocsr()
    total.sum_duplicates()
    nz_rows = np.unique(total.nonzero()[0])
    nz_cols = np.unique(total.nonzero()[1])
    return distance_from_fidelity(min(1.0, trace_norm(total[nz_rows][:, nz_cols].toarray())))


@dataclass(frozen=True, eq=False)
class WorstCaseSecurity:
    """``eps_attained`` is reached at ``weights``; ``eps_upper`` bounds every p."""

    eps_attained: float
    eps_upper: float
    weights: np.ndarray
    rounds: int


def worst_case_security(protocol: TwoPartyProtocol, f: ClassicalFunction, adversary: IdealAdversary,
                        max_rounds: int = 40, tol: float = 1e-9) -> WorstCaseSecurity:
    """sup over p of :func:`security_epsilon` for a fixed simulator.

    The fidelity is h(p) = ||sum_uv p(u,v) X_uv||_1.  For any contraction G,
    h(p) >= Re<G, sum p X>, hence min_p h >= max over mixtures of candidate
    G of min_uv Re<G, X_uv>, a matrix game.  Candidates are polar factors of
    evaluated points; each round evaluates the game's minimising mix and adds
    its polar factor, until the attained minimum meets the certified bound.
    """
    n_u, n_v = f.n_u, f.n_v
    pairs = [(iu, iv) for iu in range(n_u) for iv in range(n_v)]
    blocks = overlap_blocks(protocol, f, adversary, pairs)

    def evaluate(w):
        mat = combine_blocks(blocks, w)
        left, sing, right_h = np.linalg.svd(mat, full_matrices=False)
        polar = (left @ right_h).reshape(mat.shape[0], n_u, -1)
        scores = [float(np.real(np.vdot(polar[:, iu, :], blocks[(iu, iv)]))) for iu, iv in pairs]
        return float(np.sum(sing)), scores

    starts = [np.eye(len(pairs))[k].reshape(n_u, n_v) for k in range(len(pairs))]
    starts.append(np.full((n_u, n_v), 1.0 / len(pairs)))
    columns, best_val, best_w = [], np.inf, starts[0]
    for w in starts:
        val, scores = evaluate(w)
        columns.append(scores)
        if val < best_val:
            best_val, best_w = val, w
    lower, rnd = 0.0, 0
    for rnd in range(1, max_rounds + 1):
        game = solve_zero_sum(np.array(columns).T)
        lower = game.lower
        if best_val - lower <= tol:
            break
        w = game.row_strategy.reshape(n_u, n_v)
        val, scores = evaluate(w)
        columns.append(scores)
        if val < best_val:
            best_val, best_w = val, w
    return WorstCaseSecurity(
        eps_attained=distance_from_fidelity(best_val),
        eps_upper=distance_from_fidelity(min(best_val, lower)),
        weights=best_w,
        rounds=rnd,
    )


def view_simulator(protocol: TwoPartyProtocol, f: ClassicalFunction,
                   reference: TwoPartyProtocol | None = None) -> IdealAdversary:
    """Simulator that forwards v and replays Bob's view.

    ``pre`` copies v into the functionality and into K.  ``post`` reads (v, y)
    and prepares Bob's reduced view from an honest run of ``reference``
    (default ``protocol``) on the first u with g(u, v) = y.  It is exact
    whenever Bob's view depends on (v, y) only.
    """
    reference = reference or protocol
    view = protocol.bob_view
    view_sys = protocol.system_of(view)
    n_v, n_out = f.n_v, f.n_out
    pre = classical_isometry(RegisterSystem((("V", n_v),)), RegisterSystem(((VT, n_v), ("K", n_v))),
                             lambda vals: (vals[0], vals[0]))
    columns: dict[tuple[int, int], list[tuple[float, np.ndarray]]] = {}
    for iv in range(n_v):
        for y in range(n_out):
            hits = np.flatnonzero(f.bob_values[:, iv] == y)
            if hits.size == 0:
                vec = np.zeros(view_sys.dim, dtype=complex)
                vec[0] = 1.0
                columns[(iv, y)] = [(1.0, vec)]
                continue
            branch = reference.purified_branch(int(hits[0]), iv)
            _, mat = reduced_matrix(branch, view)
            vals, vecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
            keep = vals > 1e-12
            vals = vals[keep] / vals[keep].sum()
            columns[(iv, y)] = [(float(lam), vecs[:, i]) for lam, i in zip(vals, np.flatnonzero(keep))]
    in_sys = RegisterSystem((("K", n_v), (YT, n_out)))
    kraus = []
    for (iv, y), col in columns.items():
        for lam, vec in col:
            mat = np.zeros((view_sys.dim, in_sys.dim), dtype=complex)
            mat[:, iv * n_out + y] = math.sqrt(lam) * vec
            kraus.append(mat)
    post = QuantumChannel(in_sys, view_sys, tuple(kraus))
    return IdealAdversary(pre, post, "view-replay")


def dense_ok(dim: int) -> bool:
    return dim <= MAX_DENSE_DIM


__all__ = [
    "ALICE", "BOB", "ClassicalFunction", "IdealAdversary", "JointDistribution", "ProtocolError",
    "Round", "TwoPartyProtocol", "WorstCaseSecurity", "apply_augmented_functionality",
    "apply_ideal_functionality", "combine_blocks", "correctness_epsilon", "fidelity_from_blocks",
    "functionality_channel", "ideal_branch", "ideal_env_labels", "input_state", "overlap_blocks",
    "real_output_state", "run_honest", "run_ideal", "run_purified", "security_epsilon",
    "view_simulator", "worst_case_correctness", "worst_case_security", "TOL",
]
