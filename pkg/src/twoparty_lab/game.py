"""Combining Uhlmann attacks across input distributions with a zero-sum game."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .attack import (
    CheatIsometry,
    ConditionalDistribution,
    construct_cheat_isometry,
    execute_attack,
    secure_conditional,
)
from .minimax import ZeroSumGame, solve_zero_sum
from .proto import (
    ClassicalFunction,
    JointDistribution,
    overlap_blocks,
    worst_case_correctness,
    worst_case_security,
)

NET_CAP = 100_000
CHAIN_SLACK = 1e-6


class NetTooLarge(ValueError):
    """The requested net exceeds the configured cell cap."""


@dataclass(frozen=True, eq=False)
class SimplexNet:
    """Grid points k / m of the simplex over ``w_size`` outcomes; ``resolution`` is the TV radius."""

    points: np.ndarray
    resolution: float
    denominator: int

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, p) -> tuple[np.ndarray, float]:
        """Grid point reached by largest-remainder rounding of ``p`` and its TV distance."""
        p = np.asarray(p, dtype=float).reshape(-1)
        m = self.denominator
        scaled = p * m
        k = np.floor(scaled).astype(int)
        short = m - int(k.sum())
        if short > 0:
            k[np.argsort(-(scaled - k), kind="stable")[:short]] += 1
        point = k / m
        return point, 0.5 * float(np.abs(point - p).sum())


def net_size(w_size: int, denominator: int) -> int:
    return math.comb(denominator + w_size - 1, w_size - 1)


def grid_net(w_size: int, denominator: int, cap: int = NET_CAP) -> SimplexNet:
    """All compositions of ``denominator`` into ``w_size`` parts, scaled to the simplex."""
    if w_size < 1 or denominator < 1:
        raise ValueError("w_size and denominator must be positive")
    size = net_size(w_size, denominator)
    if size > cap:
        raise NetTooLarge(f"net with step 1/{denominator} over {w_size} outcomes has {size} points (cap {cap})")
    points = np.zeros((size, w_size))
    for row, bars in enumerate(combinations(range(denominator + w_size - 1), w_size - 1)):
        edges = (-1,) + bars + (denominator + w_size - 1,)
        points[row] = np.diff(edges) - 1
    points /= denominator
    # worst rounding error of largest-remainder rounding
    resolution = min(1.0, 0.5 * w_size / denominator)
    return SimplexNet(points, resolution, denominator)


def build_simplex_net(w_size: int, eps: float, cap: int = NET_CAP) -> SimplexNet:
    """eps-net with coordinates on multiples of at most s = 2 eps / w_size.

    Rounding a distribution to the grid moves each coordinate by less than
    one step, so the TV distance is at most w_size * s / 2 = eps.
    """
    if w_size < 1 or not 0 < eps <= 1:
        raise ValueError("need w_size >= 1 and 0 < eps <= 1")
    if w_size == 1:
        return SimplexNet(np.ones((1, 1)), eps, 1)
    step = 2 * eps / w_size
    denominator = math.ceil(1 / step - 1e-12)
    net = grid_net(w_size, denominator, cap)
    return SimplexNet(net.points, eps, denominator)


def payoff_column(q: ConditionalDistribution, q_tilde: ConditionalDistribution,
                  f: ClassicalFunction) -> np.ndarray:
    """g(u, v, T) for every (u, v), flattened as u * |V| + v."""
    return np.array([_cell(q, q_tilde, f, iu, iv) for iu in range(f.n_u) for iv in range(f.n_v)])


def payoff(u: int, v: int, t: CheatIsometry, protocol, f: ClassicalFunction) -> float:
    """g(u, v, T) = sum_vt q delta - sum_vt |q - q~|.

    The L1 term reaches 2, so g lies in [-2, 1].
    """
    point = JointDistribution.point(f.n_u, f.n_v, u, v)
    q = execute_attack(protocol, point, t)
    return _cell(q, t.secure_marginal, f, u, v)


def _cell(q, q_tilde, f, iu, iv) -> float:
    row = q[(iu, iv)]
    agree = (f.table[iu] == f.table[iu, iv]).astype(float)
    return math.fsum(row * agree) - math.fsum(np.abs(row - q_tilde[(iv,)]))


@dataclass(frozen=True, eq=False)
class CombinedAttack:
    """Q = sum_T p''(T) q(.|., T) with the per-(u, v) slacks of the mixed strategy.

    ``eps1[u, v] = 1 - sum p'' sum q delta`` and
    ``eps2[u, v] = sum p'' sum |q - q~|``; ``eps1_eps2_budget`` is the worst
    eps1 + eps2 over (u, v).
    """

    Q: ConditionalDistribution
    Q_tilde: ConditionalDistribution
    eps1: np.ndarray
    eps2: np.ndarray

    @property
    def eps1_eps2_budget(self) -> float:
        return float(np.max(self.eps1 + self.eps2))


def combined_attack(p_double_prime, qs: list[ConditionalDistribution],
                    q_tildes: list[ConditionalDistribution], f: ClassicalFunction) -> CombinedAttack:
    weights = np.asarray(p_double_prime, dtype=float)
    if len(weights) != len(qs) or len(qs) != len(q_tildes):
        raise ValueError("strategy and conditionals are indexed differently")
    q_rows, qt_rows = {}, {}
    eps1 = np.zeros((f.n_u, f.n_v))
    eps2 = np.zeros((f.n_u, f.n_v))
    for iu in range(f.n_u):
        for iv in range(f.n_v):
            agree = (f.table[iu] == f.table[iu, iv]).astype(float)
            mix = np.zeros(f.n_v)
            succ, dev = [], []
            for w, q, qt in zip(weights, qs, q_tildes):
                if w == 0:
                    continue
                mix += w * q[(iu, iv)]
                succ.append(w * math.fsum(q[(iu, iv)] * agree))
                dev.append(w * math.fsum(np.abs(q[(iu, iv)] - qt[(iv,)])))
            q_rows[(iu, iv)] = mix
            eps1[iu, iv] = 1 - math.fsum(succ)
            eps2[iu, iv] = math.fsum(dev)
    for iv in range(f.n_v):
        qt_rows[(iv,)] = sum(w * qt[(iv,)] for w, qt in zip(weights, q_tildes) if w > 0)
    outcomes = tuple(range(f.n_v))
    return CombinedAttack(ConditionalDistribution(outcomes, q_rows, "Q"),
                          ConditionalDistribution(outcomes, qt_rows, "Q_tilde"), eps1, eps2)


def theorem2_check(Q: ConditionalDistribution, f: ClassicalFunction, u0: int, eps: float,
                   slack: float = 0.0) -> tuple[float, bool]:
    """min over (u, v) of sum_vt Q(vt|u0, v) [f(u, v) = f(u, vt)], against 1 - 28 eps."""
    worst = 1.0
    for iv in range(f.n_v):
        row = Q[(u0, iv)]
        for iu in range(f.n_u):
            agree = (f.table[iu] == f.table[iu, iv]).astype(float)
            worst = min(worst, math.fsum(row * agree))
    return worst, worst >= 1 - 28 * eps - slack


def strengthen_eq(Q: ConditionalDistribution, u0: int, eps: float, slack: float = 0.0):
    """Per-v recovery Q(v|u0, v) against 1 - 28 eps."""
    rec = np.array([Q[(u0, iv)][iv] for iv in range(len(Q.outcomes))])
    return rec, bool(np.all(rec >= 1 - 28 * eps - slack))


def ip_collision_average(n: int) -> np.ndarray:
    """A[v, w] = 2^-n sum_u [IP(u, v) = IP(u, w)] by brute force."""
    size = 2**n
    ip = np.array([[bin(a & b).count("1") % 2 for b in range(size)] for a in range(size)])
    return np.array([[np.mean(ip[:, v] == ip[:, w]) for w in range(size)] for v in range(size)])


def strengthen_ip(Q: ConditionalDistribution, u0: int, eps: float, n: int, slack: float = 0.0):
    """Per-v recovery Q(v|u0, v) against 1 - 56 eps.

    Averaging the 28 eps guarantee over uniform u gives
    Q(v) + (1 - Q(v)) / 2 >= 1 - 28 eps, since distinct strings agree on IP
    for exactly half of all u.
    """
    rec = np.array([Q[(u0, iv)][iv] for iv in range(2**n)])
    return rec, bool(np.all(rec >= 1 - 56 * eps - slack))


@dataclass(eq=False)
class Theorem2Report:
    fixture_id: str
    eps: float
    eps_sec_worst: float
    eps_corr_worst: float
    mode: str
    net_points: int
    columns: int
    game: ZeroSumGame
    combined: CombinedAttack
    min_success: dict
    chain: dict
    strengthening: dict = field(default_factory=dict)

    @property
    def theorem_pass(self) -> bool:
        return all(self.min_success[u0] >= 1 - 28 * self.eps for u0 in self.min_success)

    @property
    def chain_pass(self) -> bool:
        return self.chain["lower_ok"] and self.chain["upper_ok"]

    def to_dict(self, f: ClassicalFunction | None = None) -> dict:
        labels = (f.u_domain, f.v_domain) if f else None
        return {
            "fixture": self.fixture_id,
            "eps": self.eps,
            "eps_sec_worst": self.eps_sec_worst,
            "eps_corr_worst": self.eps_corr_worst,
            "net_mode": self.mode,
            "net_points": self.net_points,
            "strategies": self.columns,
            "game_value": self.game.value,
            "duality_gap": self.game.gap,
            "p_double_prime": self.game.col_strategy.tolist(),
            "min_success_by_u0": {str(k): v for k, v in self.min_success.items()},
            "success_threshold": 1 - 28 * self.eps,
            "eps1_eps2_budget": self.combined.eps1_eps2_budget,
            "chain": self.chain,
            "strengthening": self.strengthening,
            "bound_pass": {"theorem2": self.theorem_pass, "chain": self.chain_pass,
                           **{k: v["pass"] for k, v in self.strengthening.items()}},
            "Q": self.combined.Q.to_dict(labels, f.v_domain if f else None),
        }


def run_theorem2(fixture, eps: float | None = None, mode: str = "adaptive", coarse_denominator: int = 2,
                 cap: int = NET_CAP, max_rounds: int = 50, tol: float = 1e-9) -> Theorem2Report:
    """Net of Uhlmann attacks, minimax mixture, and the 28 eps check for every u0.

    ``mode="grid"`` uses the eps-net of :func:`build_simplex_net` (raising
    :class:`NetTooLarge` beyond ``cap``).  ``mode="adaptive"`` starts from the
    coarse grid with the given denominator plus the uniform distribution.
    While the game value is below 1 - 12 eps it adds the attack built for the
    game's minimising distribution p*, which scores at least 1 - 12 eps
    against p*, so each round cuts off the current p*.  The game value is a
    certificate in its own right: it is what the mixed strategy guarantees
    on every (u, v).
    """
    f, protocol, adversary = fixture.function, fixture.protocol, fixture.ideal_adversary
    sec = worst_case_security(protocol, f, adversary)
    corr, _ = worst_case_correctness(protocol, f)
    if eps is None:
        eps = max(sec.eps_upper, corr)
    w_size = f.n_u * f.n_v
    if mode == "grid":
        net = build_simplex_net(w_size, eps, cap) if eps > 0 else grid_net(w_size, 1, cap)
    elif mode == "adaptive":
        net = grid_net(w_size, coarse_denominator, cap)
    else:
        raise ValueError(f"unknown net mode {mode!r}")
    every = JointDistribution.uniform(f.n_u, f.n_v)
    q_tilde = secure_conditional(f, adversary)
    blocks = overlap_blocks(protocol, f, adversary, every.support())
    points, qs, cols = [], [], []

    def add(weights):
        weights = np.clip(weights, 0, None)
        dist = JointDistribution(weights.reshape(f.n_u, f.n_v) / weights.sum())
        cheat = construct_cheat_isometry(protocol, f, dist, adversary, blocks, q_tilde)
        q = execute_attack(protocol, every, cheat)
        points.append(dist.weights.reshape(-1))
        qs.append(q)
        cols.append(payoff_column(q, cheat.secure_marginal, f))

    for pt in net.points:
        add(pt)
    if mode == "adaptive":
        add(every.weights.reshape(-1))
    game = solve_zero_sum(np.array(cols).T)
    rounds = 0
    if mode == "adaptive":
        while rounds < max_rounds and game.value < 1 - 12 * eps - tol:
            rounds += 1
            add(game.row_strategy)
            best_response = float(game.row_strategy @ cols[-1])
            game = solve_zero_sum(np.array(cols).T)
            if best_response <= game.value + tol:
                break
    payoffs = np.array(cols).T  # (W, E)
    per_point = [float(np.max(pt @ payoffs)) for pt in points]
    mid = min(per_point)
    chain = {
        "lower": 1 - 12 * eps,
        "min_net_max_T": mid,
        "upper": 2 * eps + game.value,
        "lower_ok": 1 - 12 * eps - CHAIN_SLACK <= mid,
        "upper_ok": mid <= 2 * eps + game.value + CHAIN_SLACK,
        "refinement_rounds": rounds,
    }
    combined = combined_attack(game.col_strategy, qs, [q_tilde] * len(qs), f)
    min_success = {u0: theorem2_check(combined.Q, f, u0, eps)[0] for u0 in range(f.n_u)}
    strengthening = {}
    kind = f.name.split("-")[0]
    if kind == "EQ":
        recs = [strengthen_eq(combined.Q, u0, eps) for u0 in range(f.n_u)]
        strengthening["eq_recovery"] = {"min": float(min(r.min() for r, _ in recs)),
                                        "threshold": 1 - 28 * eps, "pass": all(ok for _, ok in recs)}
    if kind == "IP":
        n = int(round(math.log2(f.n_v)))
        recs = [strengthen_ip(combined.Q, u0, eps, n) for u0 in range(f.n_u)]
        strengthening["ip_recovery"] = {"min": float(min(r.min() for r, _ in recs)),
                                        "threshold": 1 - 56 * eps, "pass": all(ok for _, ok in recs)}
    return Theorem2Report(fixture.id, eps, sec.eps_upper, corr, mode, len(net), len(cols), game,
                          combined, min_success, chain, strengthening)
