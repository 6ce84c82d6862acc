"""Finite-dimensional state and channel numerics over labelled registers.

Every object carries a :class:`RegisterSystem`, an ordered list of
``(label, dim)`` pairs.  Amplitude vectors and density matrices are stored
dense, with the first register as the most significant tensor index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-9
DERIVED_TOL = 1e-8
# F carries ~1e-15 rounding, so 1 - F^2 below this is indistinguishable from 0
FIDELITY_FLOOR = 1e-12
EIG_FLOOR = 1e-13


class RegisterError(ValueError):
    """Unknown, duplicated or colliding register label."""


class DimensionError(ValueError):
    """Register or operator dimensions do not fit together."""


@dataclass(frozen=True)
class RegisterSystem:
    registers: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        regs = tuple((str(label), int(dim)) for label, dim in self.registers)
        labels = [label for label, _ in regs]
        if len(set(labels)) != len(labels):
            raise RegisterError(f"duplicate register labels in {labels}")
        for label, dim in regs:
            if dim < 1:
                raise DimensionError(f"register {label!r} has dimension {dim}")
        object.__setattr__(self, "registers", regs)

    @classmethod
    def of(cls, *registers: tuple[str, int]) -> "RegisterSystem":
        return cls(tuple(registers))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.registers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.registers)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return len(self.registers)

    def __contains__(self, label) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise RegisterError(f"unknown register {label!r}; have {self.labels}") from None

    def dim_of(self, label: str) -> int:
        return self.registers[self.index(label)][1]

    def select(self, labels: Iterable[str]) -> "RegisterSystem":
        """Subsystem on ``labels``, kept in this system's order."""
        wanted = set(labels)
        for label in wanted:
            self.index(label)
        return RegisterSystem(tuple(r for r in self.registers if r[0] in wanted))

    def without(self, labels: Iterable[str]) -> "RegisterSystem":
        dropped = set(labels)
        for label in dropped:
            self.index(label)
        return RegisterSystem(tuple(r for r in self.registers if r[0] not in dropped))

    def ordered(self, labels: Sequence[str]) -> "RegisterSystem":
        """The same registers listed in the order given by ``labels``."""
        labels = list(labels)
        if sorted(labels) != sorted(self.labels):
            raise RegisterError(f"{labels} is not a permutation of {self.labels}")
        return RegisterSystem(tuple((label, self.dim_of(label)) for label in labels))

    def concat(self, other: "RegisterSystem") -> "RegisterSystem":
        clash = set(self.labels) & set(other.labels)
        if clash:
            raise RegisterError(f"register labels collide: {sorted(clash)}")
        return RegisterSystem(self.registers + other.registers)


def _check_subsystem(system: RegisterSystem, sub: RegisterSystem) -> None:
    for label, dim in sub.registers:
        if system.dim_of(label) != dim:
            raise DimensionError(
                f"register {label!r} has dim {system.dim_of(label)}, operator expects {dim}"
            )


@dataclass(frozen=True)
class PureState:
    system: RegisterSystem
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.system.dim:
            raise DimensionError(f"{amps.size} amplitudes for a system of dim {self.system.dim}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > TOL:
            raise ValueError(f"state norm {norm!r} deviates from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, system: RegisterSystem, values: Sequence[int]) -> "PureState":
        amps = np.zeros(system.dim, dtype=complex)
        amps[np.ravel_multi_index(tuple(values), system.dims)] = 1.0
        return cls(system, amps)

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.system.dims)

    def density(self) -> "DensityOperator":
        return DensityOperator(self.system, np.outer(self.amplitudes, self.amplitudes.conj()))

    def reordered(self, labels: Sequence[str]) -> "PureState":
        new = self.system.ordered(labels)
        perm = [self.system.index(label) for label in new.labels]
        return PureState(new, self.tensor_view().transpose(perm).reshape(-1))

    def matrix(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        """Amplitudes reshaped to a (rows x cols) matrix; every label must appear once."""
        perm = [self.system.index(label) for label in list(rows) + list(cols)]
        if len(perm) != len(self.system):
            raise RegisterError("rows and cols must partition the system")
        drow = math.prod(self.system.dim_of(label) for label in rows)
        return self.tensor_view().transpose(perm).reshape(drow, -1)


@dataclass(frozen=True)
class DensityOperator:
    system: RegisterSystem
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.system.dim
        if mat.shape != (d, d):
            raise DimensionError(f"matrix shape {mat.shape} for a system of dim {d}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(mat).real - 1.0) > TOL:
            raise ValueError(f"density matrix trace {np.trace(mat).real!r} deviates from 1")
        try:
            # succeeds iff the smallest eigenvalue exceeds -TOL
            np.linalg.cholesky(mat + TOL * np.eye(d))
        except np.linalg.LinAlgError:
            raise ValueError("density matrix has eigenvalues below -1e-9") from None
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def tensor_view(self) -> np.ndarray:
        return self.matrix.reshape(self.system.dims * 2)

    def reordered(self, labels: Sequence[str]) -> "DensityOperator":
        new = self.system.ordered(labels)
        return DensityOperator(new, _permute_matrix(self.matrix, self.system, new.labels))

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()


def _permute_matrix(mat: np.ndarray, system: RegisterSystem, labels: Sequence[str]) -> np.ndarray:
    perm = [system.index(label) for label in labels]
    n = len(system)
    return (
        mat.reshape(system.dims * 2)
        .transpose(perm + [p + n for p in perm])
        .reshape(mat.shape)
    )


@dataclass(frozen=True)
class QuantumChannel:
    """CPTP map in Kraus form; each Kraus matrix is (output_dim x input_dim)."""

    input_system: RegisterSystem
    output_system: RegisterSystem
    kraus: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        shape = (self.output_system.dim, self.input_system.dim)
        for k in ops:
            if k.shape != shape:
                raise DimensionError(f"Kraus operator shape {k.shape}, expected {shape}")
            k.setflags(write=False)
        total = sum(k.conj().T @ k for k in ops)
        if np.max(np.abs(total - np.eye(shape[1]))) > TOL:
            raise ValueError("Kraus operators are not trace preserving")
        object.__setattr__(self, "kraus", ops)

    @classmethod
    def isometry(cls, input_system, output_system, matrix) -> "QuantumChannel":
        return cls(input_system, output_system, (matrix,))

    @classmethod
    def identity(cls, system: RegisterSystem) -> "QuantumChannel":
        return cls(system, system, (np.eye(system.dim),))

    @property
    def is_isometry(self) -> bool:
        return len(self.kraus) == 1

    @property
    def matrix(self) -> np.ndarray:
        if not self.is_isometry:
            raise ValueError("channel has more than one Kraus operator")
        return self.kraus[0]


def tensor(a, b):
    """Joint state of two objects on disjoint registers."""
    system = a.system.concat(b.system)
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(system, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        return DensityOperator(system, np.kron(a.matrix, b.matrix))
    raise TypeError("tensor needs two PureStates or two DensityOperators")


def reduced_matrix(state: PureState, keep: Iterable[str]) -> tuple[RegisterSystem, np.ndarray]:
    kept = state.system.select(keep)
    traced = [label for label in state.system.labels if label not in kept.labels]
    m = state.matrix(kept.labels, traced)
    return kept, m @ m.conj().T


def partial_trace(rho, keep: Iterable[str]) -> DensityOperator:
    """Reduced state on ``keep`` (system order preserved).  Accepts pure states too."""
    if isinstance(rho, PureState):
        kept, mat = reduced_matrix(rho, keep)
        return DensityOperator(kept, 0.5 * (mat + mat.conj().T))
    system = rho.system
    kept = system.select(keep)
    traced = [label for label in system.labels if label not in kept.labels]
    dk = kept.dim
    dt = system.dim // dk
    t = _permute_matrix(rho.matrix, system, list(kept.labels) + traced).reshape(dk, dt, dk, dt)
    return DensityOperator(kept, np.einsum("ajbj->ab", t))


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix.

    Eigenvalues below ``EIG_FLOOR`` times the largest are round-off and set to
    0; their square roots would otherwise add errors near 1e-8.
    """
    herm = 0.5 * (mat + mat.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    top = vals.max() if vals.size else 0.0
    vals = np.where(vals > EIG_FLOOR * top, vals, 0.0)
    vals = np.sqrt(vals)
    return (vecs * vals) @ vecs.conj().T


def _nuclear_norm(mat: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(mat, compute_uv=False)))


def fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    """tr sqrt(sqrt(rho) sigma sqrt(rho)), evaluated as the trace norm of sqrt(rho) sqrt(sigma)."""
    if rho.system != sigma.system:
        raise DimensionError(f"fidelity of states on {rho.system} and {sigma.system}")
    value = _nuclear_norm(sqrtm_psd(rho.matrix) @ sqrtm_psd(sigma.matrix))
    return min(1.0, max(0.0, value))


def distance_from_fidelity(fid: float) -> float:
    """sqrt(1 - F^2), with 1 - F^2 below the double-precision floor reported as exactly 0."""
    gap = 1.0 - min(1.0, fid) ** 2
    return 0.0 if gap <= FIDELITY_FLOOR else math.sqrt(gap)


def purified_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    return distance_from_fidelity(fidelity(rho, sigma))


def purify(rho: DensityOperator, env_label: str) -> PureState:
    """Eigendecomposition purification sum_k sqrt(l_k) |e_k>|k>, largest weight on |0>_env."""
    d = rho.system.dim
    vals, vecs = np.linalg.eigh(0.5 * (rho.matrix + rho.matrix.conj().T))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vals = np.where(vals > EIG_FLOOR * vals[0], vals, 0.0)
    vecs = vecs[:, order]
    amps = (vecs * np.sqrt(vals)).reshape(-1)
    amps = amps / np.linalg.norm(amps)
    return PureState(rho.system.concat(RegisterSystem(((env_label, d),))), amps)


def _placed_labels(system: RegisterSystem, ch: QuantumChannel) -> list[str]:
    """Register order after ``ch`` acts: in place when the label set is unchanged,
    otherwise outputs are spliced in where the first consumed register was."""
    inputs = ch.input_system.labels
    outputs = list(ch.output_system.labels)
    if set(outputs) == set(inputs):
        return list(system.labels)
    rest = [label for label in system.labels if label not in inputs]
    first = min(system.index(label) for label in inputs) if inputs else len(system)
    cut = sum(1 for label in system.labels[:first] if label not in inputs)
    return rest[:cut] + outputs + rest[cut:]


def _prepare(system: RegisterSystem, ch: QuantumChannel):
    _check_subsystem(system, ch.input_system)
    rest = system.without(ch.input_system.labels)
    clash = set(rest.labels) & set(ch.output_system.labels)
    if clash:
        raise RegisterError(f"channel outputs collide with untouched registers {sorted(clash)}")
    return rest


def apply_channel(ch: QuantumChannel, rho: DensityOperator) -> DensityOperator:
    """Apply ``ch`` to its input registers, acting as the identity elsewhere."""
    system = rho.system
    rest = _prepare(system, ch)
    din, dr = ch.input_system.dim, rest.dim
    t = _permute_matrix(rho.matrix, system, list(ch.input_system.labels) + list(rest.labels))
    t = t.reshape(din, dr, din, dr)
    dout = ch.output_system.dim
    out = np.zeros((dout, dr, dout, dr), dtype=complex)
    for k in ch.kraus:
        left = np.tensordot(k, t, axes=(1, 0))  # (dout, dr, din, dr)
        out += np.tensordot(left, k.conj(), axes=(2, 1)).transpose(0, 1, 3, 2)
    joint = ch.output_system.concat(rest)
    mat = out.reshape(joint.dim, joint.dim)
    placed = _placed_labels(system, ch)
    mat = _permute_matrix(mat, joint, placed)
    mat = 0.5 * (mat + mat.conj().T)
    return DensityOperator(joint.ordered(placed), mat)


def apply_isometry(ch: QuantumChannel, state: PureState) -> PureState:
    """Pure-state counterpart of :func:`apply_channel` for single-Kraus channels."""
    rest = _prepare(state.system, ch)
    m = state.matrix(ch.input_system.labels, rest.labels)
    out = ch.matrix @ m
    joint = ch.output_system.concat(rest)
    result = PureState(joint, out.reshape(-1))
    placed = _placed_labels(state.system, ch)
    return result if list(joint.labels) == placed else result.reordered(placed)


def measure_computational(state, targets: Sequence[str]):
    """Computational-basis measurement of ``targets``.

    Returns ``[(outcome, probability, post_state), ...]`` where ``outcome`` is a
    tuple of basis indices in the order of ``targets`` and ``post_state`` lives
    on the unmeasured registers.  Outcomes with probability <= 1e-14 are dropped.
    """
    targets = list(targets)
    system = state.system
    tsys = RegisterSystem(tuple((label, system.dim_of(label)) for label in targets))
    rest = system.without(targets)
    results = []
    if isinstance(state, PureState):
        m = state.matrix(targets, rest.labels)
        probs = np.sum(np.abs(m) ** 2, axis=1)
        for i in np.flatnonzero(probs > 1e-14):
            post = PureState(rest, m[i] / math.sqrt(probs[i]))
            results.append((tuple(int(x) for x in np.unravel_index(i, tsys.dims)), float(probs[i]), post))
        return results
    dt, dr = tsys.dim, rest.dim
    t = _permute_matrix(state.matrix, system, targets + list(rest.labels)).reshape(dt, dr, dt, dr)
    for i in range(dt):
        block = t[i, :, i, :]
        prob = float(np.trace(block).real)
        if prob > 1e-14:
            results.append(
                (tuple(int(x) for x in np.unravel_index(i, tsys.dims)), prob, DensityOperator(rest, block / prob))
            )
    return results


def dephase(rho: DensityOperator, targets: Iterable[str]) -> DensityOperator:
    """The measure-and-forget map: off-diagonal blocks in ``targets`` are removed."""
    targets = list(targets)
    system = rho.system
    idx = np.indices(system.dims)
    mask = np.ones((system.dim, system.dim), dtype=bool)
    for label in targets:
        vals = idx[system.index(label)].reshape(-1)
        mask &= vals[:, None] == vals[None, :]
    return DensityOperator(system, np.where(mask, rho.matrix, 0.0))


def stinespring(ch: QuantumChannel, env_label: str) -> QuantumChannel:
    """Isometric dilation sum_k K_k (x) |k>_env; outputs are (channel outputs, env)."""
    r = len(ch.kraus)
    out = ch.output_system.concat(RegisterSystem(((env_label, r),)))
    v = np.stack(ch.kraus, axis=1).reshape(out.dim, ch.input_system.dim)
    return QuantumChannel.isometry(ch.input_system, out, v)


def classical_isometry(input_system: RegisterSystem, output_system: RegisterSystem, fn) -> QuantumChannel:
    """Isometry from a map on basis tuples.

    ``fn(values)`` returns either an output tuple or a list of
    ``(amplitude, output_tuple)`` pairs describing a superposition.
    """
    mat = np.zeros((output_system.dim, input_system.dim), dtype=complex)
    for col, values in enumerate(np.ndindex(*input_system.dims)):
        image = fn(values)
        if isinstance(image, tuple):
            image = [(1.0, image)]
        for amp, out in image:
            mat[np.ravel_multi_index(tuple(out), output_system.dims), col] += amp
    return QuantumChannel.isometry(input_system, output_system, mat)


def weyl_operators(d: int) -> list[np.ndarray]:
    """X^a Z^b for a, b in range(d), with (0, 0) first."""
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    return [
        np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
        for a in range(d)
        for b in range(d)
    ]


def depolarizing_channel(system: RegisterSystem, delta: float) -> QuantumChannel:
    """rho -> (1 - delta) rho + delta I/d, realised by uniformly weighted Weyl errors."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"depolarizing rate {delta} outside [0, 1]")
    d = system.dim
    weights = np.full(d * d, delta / d**2)
    weights[0] += 1.0 - delta
    kraus = tuple(math.sqrt(w) * op for w, op in zip(weights, weyl_operators(d)))
    return QuantumChannel(system, system, kraus)


def uhlmann_from_overlap(overlap: np.ndarray) -> tuple[np.ndarray, float]:
    """Isometry T (e2 x e1) maximising |tr(T X)| for X (e1 x e2), e1 <= e2, and the optimum.

    Only the nonzero rows and columns of X enter the SVD.  T sends each left
    singular vector to the matching right one; the remaining directions are
    paired in a fixed order, which keeps T an isometry without changing the
    optimum.
    """
    e1, e2 = overlap.shape
    if e2 < e1:
        raise DimensionError(f"target environment ({e2}) smaller than source ({e1})")
    rows = np.flatnonzero(np.any(overlap != 0, axis=1))
    cols = np.flatnonzero(np.any(overlap != 0, axis=0))
    left, sing, right_h = np.linalg.svd(overlap[np.ix_(rows, cols)], full_matrices=True)
    paired = min(len(rows), len(cols))
    source = np.zeros((e1, e1), dtype=complex)
    target = np.zeros((e2, e1), dtype=complex)
    source[rows, :paired] = left[:, :paired]
    target[cols, :paired] = right_h.conj().T[:, :paired]
    spare_rows = np.zeros((e1, e1 - paired), dtype=complex)
    spare_rows[rows, : len(rows) - paired] = left[:, paired:]
    free_rows = np.setdiff1d(np.arange(e1), rows)
    spare_rows[free_rows, np.arange(len(rows) - paired, e1 - paired)] = 1.0
    spare_cols = np.zeros((e2, e2 - paired), dtype=complex)
    spare_cols[cols, : len(cols) - paired] = right_h.conj().T[:, paired:]
    free_cols = np.setdiff1d(np.arange(e2), cols)
    spare_cols[free_cols, np.arange(len(cols) - paired, e2 - paired)] = 1.0
    source[:, paired:] = spare_rows
    target[:, paired:] = spare_cols[:, : e1 - paired]
    return target @ source.conj().T, float(np.sum(sing))


def _shared_labels(phi: PureState, psi: PureState, env_phi, env_psi) -> list[str]:
    shared = phi.system.without(env_phi)
    other = psi.system.without(env_psi)
    if sorted(shared.registers) != sorted(other.registers):
        raise DimensionError(f"non-environment systems differ: {shared} vs {other}")
    return list(shared.labels)


def uhlmann_isometry(phi: PureState, psi: PureState, env_phi: Sequence[str], env_psi: Sequence[str]) -> QuantumChannel:
    """Isometry T: env_phi -> env_psi maximising |<psi|(T (x) id)|phi>|.

    When env_psi is smaller than env_phi, psi is first extended by an ancilla
    register ``"<first env label>_pad"`` in state |0>, which then appears among
    the outputs of T.
    """
    env_phi, env_psi = list(env_phi), list(env_psi)
    shared = _shared_labels(phi, psi, env_phi, env_psi)
    e1 = phi.system.select(env_phi).dim
    e2 = psi.system.select(env_psi).dim
    if e2 < e1:
        pad_label = f"{env_psi[0] if env_psi else 'env'}_pad"
        pad = PureState.basis(RegisterSystem(((pad_label, -(-e1 // e2)),)), (0,))
        psi = tensor(psi, pad)
        env_psi = env_psi + [pad_label]
    a = phi.matrix(shared, env_phi)
    b = psi.matrix(shared, env_psi)
    t, _ = uhlmann_from_overlap(a.T @ b.conj())
    in_sys = RegisterSystem(tuple((label, phi.system.dim_of(label)) for label in env_phi))
    out_sys = RegisterSystem(tuple((label, psi.system.dim_of(label)) for label in env_psi))
    return QuantumChannel.isometry(in_sys, out_sys, t)


def overlap(phi: PureState, psi: PureState, t: QuantumChannel) -> float:
    """|<psi|(T (x) id)|phi>|; registers of psi missing after T (e.g. padding) must be in |0>."""
    moved = apply_isometry(t, phi)
    missing = [label for label in moved.system.labels if label not in psi.system]
    if missing:
        anc = RegisterSystem(tuple((label, moved.system.dim_of(label)) for label in missing))
        psi = tensor(psi, PureState.basis(anc, (0,) * len(missing)))
    psi = psi.reordered(moved.system.labels)
    return float(abs(np.vdot(psi.amplitudes, moved.amplitudes)))


# random instances for property checks


def random_pure(system: RegisterSystem, rng: np.random.Generator) -> PureState:
    v = rng.normal(size=system.dim) + 1j * rng.normal(size=system.dim)
    return PureState(system, v / np.linalg.norm(v))


def random_density(system: RegisterSystem, rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    d = system.dim
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    m = g @ g.conj().T
    m = m / np.trace(m).real
    return DensityOperator(system, 0.5 * (m + m.conj().T))


def haar_isometry(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d_out, d_in)) + 1j * rng.normal(size=(d_out, d_in))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(input_system: RegisterSystem, output_system: RegisterSystem, n_kraus: int,
                   rng: np.random.Generator) -> QuantumChannel:
    dout = output_system.dim
    v = haar_isometry(input_system.dim, dout * n_kraus, rng)
    kraus = tuple(v.reshape(dout, n_kraus, input_system.dim)[:, k, :] for k in range(n_kraus))
    return QuantumChannel(input_system, output_system, kraus)
