"""Cheating Alice: the Uhlmann attack on Bob-secure protocols and the success and independence bounds it must meet."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from .proto import (
    P_FU,
    VT,
    ClassicalFunction,
    IdealAdversary,
    JointDistribution,
    TwoPartyProtocol,
    combine_blocks,
    correctness_epsilon,
    ideal_branch,
    ideal_env_labels,
    overlap_blocks,
    reference_system,
    security_epsilon,
)
from .qcore import (
    DimensionError,
    PureState,
    QuantumChannel,
    RegisterSystem,
    uhlmann_from_overlap,
)

P_PAD = "P_pad"
ROW_TOL = 1e-9
MAX_PURIFICATION_AMPLITUDES = 1 << 22

# below this many entries dense products beat sparse ones
SPARSE_MIN_SIZE = 1 << 14


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Rows ``conditioner tuple -> probability vector over outcomes``; absent rows had zero weight."""

    outcomes: tuple
    rows: Mapping[tuple, np.ndarray]
    name: str = ""

    def __post_init__(self):
        clean = {}
        for cond, row in self.rows.items():
            row = np.asarray(row, dtype=float)
            if row.shape != (len(self.outcomes),):
                raise ValueError(f"row {cond} has shape {row.shape}")
            if row.min() < -ROW_TOL or abs(row.sum() - 1.0) > ROW_TOL:
                raise ValueError(f"row {cond} of {self.name or 'distribution'} is not a probability vector")
            row = np.clip(row, 0.0, None)
            row.setflags(write=False)
            clean[tuple(cond)] = row
        object.__setattr__(self, "rows", clean)

    def __getitem__(self, cond) -> np.ndarray:
        cond = tuple(cond)
        if cond not in self.rows:
            raise KeyError(f"{self.name or 'distribution'} has no row for {cond}")
        return self.rows[cond]

    def __contains__(self, cond) -> bool:
        return tuple(cond) in self.rows

    def to_dict(self, cond_labels=None, outcome_labels=None) -> dict:
        outs = [str(o) for o in (outcome_labels or self.outcomes)]
        table = {}
        for cond in sorted(self.rows):
            key = ",".join(str(cond_labels[i][c]) if cond_labels else str(c) for i, c in enumerate(cond))
            table[key] = {o: float(x) for o, x in zip(outs, self.rows[cond]) if x > 0}
        return {"name": self.name, "rows": table}


@dataclass(frozen=True, eq=False)
class CheatIsometry:
    """T: X'_1 -> P Vt, built for ``source_distribution``.

    ``secure_marginal`` is q~(vt|v) of the secure state it was aimed at; it
    does not depend on the distribution because the simulators are fixed.
    """

    map: QuantumChannel
    source_distribution: JointDistribution
    achieved_overlap: float
    secure_marginal: ConditionalDistribution

    def __post_init__(self):
        t = self.map.matrix
        if np.max(np.abs(t.conj().T @ t - np.eye(t.shape[1]))) > 1e-9:
            raise ValueError("cheat map is not an isometry")
        if not -1e-9 <= self.achieved_overlap <= 1 + 1e-9:
            raise ValueError("achieved overlap outside [0, 1]")

    @property
    def vt_axis(self) -> int:
        return self.map.output_system.index(VT)


def build_secure_purification(f: ClassicalFunction, p: JointDistribution,
                              adversary: IdealAdversary) -> PureState:
    """|Psi> on R, X, P, Vt, Y' with P = (P_Fu, environment of the ideal run)."""
    n_u, n_v = p.shape
    env = ideal_env_labels(adversary)
    first = ideal_branch(f, adversary, *p.support()[0])
    body = ("X",) + env + (VT,) + adversary.view_labels
    branch_sys = first.system.ordered(body)
    total = n_u * n_v * n_u * branch_sys.dim
    if total > MAX_PURIFICATION_AMPLITUDES:
        raise DimensionError(f"|Psi> needs {total} amplitudes")
    amps = np.zeros((n_u * n_v, branch_sys.dim, n_u), dtype=complex)
    for iu, iv in p.support():
        psi = ideal_branch(f, adversary, iu, iv).reordered(body)
        amps[iu * n_v + iv, :, iu] = math.sqrt(p.weights[iu, iv]) * psi.amplitudes
    # move the copy of u next to the other purifying registers
    dx = branch_sys.dim_of("X")
    amps = amps.reshape(n_u * n_v, dx, branch_sys.dim // dx, n_u).transpose(0, 1, 3, 2)
    system = reference_system(n_u, n_v).concat(RegisterSystem(
        (("X", dx), (P_FU, n_u)) + branch_sys.registers[1:]))
    return PureState(system, amps.reshape(-1))


def secure_conditional(f: ClassicalFunction, adversary: IdealAdversary,
                       p: JointDistribution | None = None) -> ConditionalDistribution:
    """q~(vt|v): the classical (R, Vt) marginal of the secure state.

    The submitted input is produced from v alone, so every row with
    p(v) > 0 matches the u-average used for rows outside the support.
    """
    weights = p.weights if p is not None else np.full((f.n_u, f.n_v), 1.0 / (f.n_u * f.n_v))
    rows = {}
    for iv in range(f.n_v):
        col = weights[:, iv]
        mix = col / col.sum() if col.sum() > 0 else np.full(f.n_u, 1.0 / f.n_u)
        row = np.zeros(f.n_v)
        for iu in np.flatnonzero(mix):
            psi = ideal_branch(f, adversary, int(iu), iv)
            vt = psi.system.index(VT)
            probs = np.abs(psi.tensor_view()) ** 2
            row += mix[iu] * probs.sum(axis=tuple(i for i in range(probs.ndim) if i != vt))
        rows[(iv,)] = row / row.sum()
    return ConditionalDistribution(tuple(range(f.n_v)), rows, "q_tilde")


def construct_cheat_isometry(protocol: TwoPartyProtocol, f: ClassicalFunction, p: JointDistribution,
                             ideal_adversary: IdealAdversary, blocks=None,
                             q_tilde: ConditionalDistribution | None = None) -> CheatIsometry:
    """Uhlmann isometry from Alice's purification X'_1 to P Vt for distribution ``p``.

    The overlap matrix is assembled branch by branch (see
    :func:`proto.overlap_blocks`); when P Vt is smaller than X'_1 a padding
    register ``P_pad`` is appended.  ``blocks`` and ``q_tilde`` may be passed
    in when many isometries are built for the same fixture.
    """
    if blocks is None:
        blocks = overlap_blocks(protocol, f, ideal_adversary, p.support())
    else:
        blocks = {key: blocks[key] for key in p.support()}
    mat = combine_blocks(blocks, p.weights)
    e1, e2 = mat.shape
    pad = -(-e1 // e2)
    if pad > 1:
        padded = np.zeros((e1, e2, pad), dtype=complex)
        padded[:, :, 0] = mat
        mat = padded.reshape(e1, e2 * pad)
    t, achieved = uhlmann_from_overlap(mat)
    env = ideal_env_labels(ideal_adversary)
    probe = ideal_branch(f, ideal_adversary, *p.support()[0])
    regs = [(P_FU, f.n_u)] + [(label, probe.system.dim_of(label)) for label in env] + [(VT, f.n_v)]
    if pad > 1:
        regs.append((P_PAD, pad))
    cheat = QuantumChannel.isometry(protocol.system_of(protocol.alice_purification),
                                    RegisterSystem(tuple(regs)), t)
    if q_tilde is None:
        q_tilde = secure_conditional(f, ideal_adversary)
    return CheatIsometry(cheat, p, min(1.0, achieved), q_tilde)


def attack_joint(protocol: TwoPartyProtocol, p: JointDistribution, t: CheatIsometry) -> np.ndarray:
    """Pr[u, v, vt, x] when Alice applies T to X'_1 and measures Vt and her output X.

    Shape ``(|U|, |V|, |V|, |X|)``; rows outside the support of ``p`` are zero.
    """
    n_u, n_v = p.shape
    dx = protocol.dim_of(protocol.x_label)
    tmat = t.map.matrix
    out_dims = t.map.output_system.dims
    vt = t.vt_axis
    joint = np.zeros((n_u, n_v, n_v, dx))
    for iu, iv in p.support():
        phi = protocol.shared_matrix(iu, iv)
        if phi.size > SPARSE_MIN_SIZE:
            phi = sparse.csr_matrix(phi)
        moved = np.asarray(phi @ tmat.T).reshape((dx, -1) + out_dims)
        probs = np.abs(moved) ** 2
        axes = tuple(i for i in range(probs.ndim) if i not in (0, 2 + vt))
        marg = probs.sum(axis=axes)  # (x, vt)
        joint[iu, iv] = p.weights[iu, iv] * marg.T
    return joint


def _conditionals(joint: np.ndarray, p: JointDistribution, n_v: int):
    q_rows, r_rows = {}, {}
    for iu, iv in p.support():
        block = joint[iu, iv] / p.weights[iu, iv]
        q = block.sum(axis=1)
        q_rows[(iu, iv)] = q / q.sum()
        for ivt in np.flatnonzero(q > 1e-12):
            r_rows[(iu, iv, int(ivt))] = block[ivt] / block[ivt].sum()
    return q_rows, r_rows


def execute_attack(protocol: TwoPartyProtocol, p: JointDistribution, t: CheatIsometry) -> ConditionalDistribution:
    """q(vt|u,v): distribution of the measured Vt given that R reads (u, v)."""
    joint = attack_joint(protocol, p, t)
    q_rows, _ = _conditionals(joint, p, p.shape[1])
    return ConditionalDistribution(tuple(range(p.shape[1])), q_rows, "q")


def output_conditional(protocol: TwoPartyProtocol, p: JointDistribution, t: CheatIsometry) -> ConditionalDistribution:
    """r(x|u,v,vt), exposed for diagnostics only."""
    joint = attack_joint(protocol, p, t)
    _, r_rows = _conditionals(joint, p, p.shape[1])
    return ConditionalDistribution(tuple(range(joint.shape[3])), r_rows, "r")


def _agreement(f: ClassicalFunction, iu: int, iv: int) -> np.ndarray:
    """Indicator over vt of f(u, v) == f(u, vt)."""
    return (f.table[iu] == f.table[iu, iv]).astype(float)


@dataclass(frozen=True)
class Lemma1Result:
    avg_success: float
    independence_defect: float
    eps: float
    success_pass: bool
    defect_pass: bool

    @property
    def passed(self) -> bool:
        return self.success_pass and self.defect_pass


def lemma1_check(q: ConditionalDistribution, q_tilde: ConditionalDistribution, p: JointDistribution,
                 f: ClassicalFunction, eps: float, slack: float = 1e-6) -> Lemma1Result:
    """sum p q delta >= 1 - 6 eps and sum p |q - q~| <= 6 eps (zero-weight pairs skipped)."""
    success, defect = [], []
    for iu, iv in p.support():
        w = p.weights[iu, iv]
        row = q[(iu, iv)]
        success.append(w * math.fsum(row * _agreement(f, iu, iv)))
        defect.append(w * math.fsum(np.abs(row - q_tilde[(iv,)])))
    avg, dfc = math.fsum(success), math.fsum(defect)
    return Lemma1Result(avg, dfc, eps, avg >= 1 - 6 * eps - slack, dfc <= 6 * eps + slack)


def theorem1_extract(q_tilde: ConditionalDistribution, f: ClassicalFunction, v: int,
                     threshold: float = 1e-9) -> tuple[tuple, bool]:
    """Row (f(u, vt))_u for the submitted values vt that occur given v.

    Passes iff every occurring vt reproduces the row of v.
    """
    row = q_tilde[(v,)]
    occurring = np.flatnonzero(row > threshold)
    target = tuple(f.output_alphabet[k] for k in f.table[:, v])
    best = int(occurring[np.argmax(row[occurring])])
    extracted = tuple(f.output_alphabet[k] for k in f.table[:, best])
    ok = all(np.array_equal(f.table[:, int(w)], f.table[:, v]) for w in occurring)
    return extracted, ok and extracted == target


@dataclass(frozen=True, eq=False)
class AttackReport:
    fixture_id: str
    eps_corr: float
    eps_sec: float
    avg_success: float
    independence_defect: float
    achieved_overlap: float
    success_pass: bool
    defect_pass: bool
    q: ConditionalDistribution
    q_tilde: ConditionalDistribution
    distribution: JointDistribution
    extra: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return max(self.eps_corr, self.eps_sec)

    @property
    def passed(self) -> bool:
        return self.success_pass and self.defect_pass

    def to_dict(self, f: ClassicalFunction | None = None) -> dict:
        cond_q = (f.u_domain, f.v_domain) if f else None
        cond_qt = (f.v_domain,) if f else None
        outs = f.v_domain if f else None
        out = {
            "fixture": self.fixture_id,
            "eps_corr": self.eps_corr,
            "eps_sec": self.eps_sec,
            "avg_success": self.avg_success,
            "success_threshold": 1 - 6 * self.eps,
            "independence_defect": self.independence_defect,
            "defect_threshold": 6 * self.eps,
            "achieved_overlap": self.achieved_overlap,
            "bound_pass": {"success": self.success_pass, "independence": self.defect_pass},
            "q": self.q.to_dict(cond_q, outs),
            "q_tilde": self.q_tilde.to_dict(cond_qt, outs),
        }
        out.update(self.extra)
        return out


def run_lemma1(fixture, p: JointDistribution | None = None) -> AttackReport:
    """Full single-attack pipeline on a fixture (uniform inputs by default).

    The bounds use eps = max(eps_corr, eps_sec), the smallest value for which
    the protocol is both eps-correct and eps-secure at ``p``.
    """
    f, protocol, adversary = fixture.function, fixture.protocol, fixture.ideal_adversary
    p = p or JointDistribution.uniform(f.n_u, f.n_v)
    eps_corr = correctness_epsilon(protocol, f, p)
    eps_sec = security_epsilon(protocol, f, p, adversary)
    cheat = construct_cheat_isometry(protocol, f, p, adversary)
    q = execute_attack(protocol, p, cheat)
    q_tilde = secure_conditional(f, adversary, p)
    res = lemma1_check(q, q_tilde, p, f, max(eps_corr, eps_sec))
    return AttackReport(fixture.id, eps_corr, eps_sec, res.avg_success, res.independence_defect,
                        cheat.achieved_overlap, res.success_pass, res.defect_pass, q, q_tilde, p)
