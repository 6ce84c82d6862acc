"""Randomised oracle checks for the linear-algebra core."""

from __future__ import annotations

import numpy as np

from .qcore import (
    DensityOperator,
    PureState,
    RegisterSystem,
    apply_channel,
    fidelity,
    haar_isometry,
    overlap,
    partial_trace,
    purified_distance,
    purify,
    random_channel,
    random_density,
    random_pure,
    uhlmann_isometry,
)

TOL = 1e-8
SHAPES = ((2,), (3,), (4,), (2, 2), (2, 3), (5,), (2, 4), (3, 3), (4, 4), (2, 2, 2))


def _system(shape) -> RegisterSystem:
    return RegisterSystem(tuple((f"A{k}", d) for k, d in enumerate(shape)))


def _rotated_purification(rho: DensityOperator, env: str, rng) -> PureState:
    """A purification other than the canonical one: a Haar unitary acts on the environment."""
    base = purify(rho, env)
    d = rho.system.dim
    u = haar_isometry(d, d, rng)
    mat = base.matrix(rho.system.labels, [env]) @ u.T
    return PureState(base.system, mat.reshape(-1))


def check_instance(rng: np.random.Generator, shape) -> dict[str, float]:
    """Worst deviations of each identity on one random instance."""
    system = _system(shape)
    d = system.dim
    rank = int(rng.integers(1, d + 1))
    rho = random_density(system, rng, rank)
    sigma = random_density(system, rng)
    tau = random_density(system, rng)
    errors = {}

    f_rs, f_sr = fidelity(rho, sigma), fidelity(sigma, rho)
    errors["fidelity_symmetry"] = abs(f_rs - f_sr)
    errors["fidelity_self"] = abs(1.0 - fidelity(rho, rho))
    errors["fidelity_range"] = max(0.0, f_rs - 1.0, -f_rs)
    phi, psi = random_pure(system, rng), random_pure(system, rng)
    errors["fidelity_pure"] = abs(fidelity(phi.density(), psi.density()) - abs(np.vdot(phi.amplitudes, psi.amplitudes)))
    d_rs, d_st, d_rt = purified_distance(rho, sigma), purified_distance(sigma, tau), purified_distance(rho, tau)
    errors["distance_triangle"] = max(0.0, d_rt - d_rs - d_st)
    errors["distance_definition"] = abs(d_rs**2 - (1.0 - f_rs**2)) if d_rs > 0 else 0.0

    pur = purify(rho, "E")
    errors["purify_roundtrip"] = float(np.max(np.abs(partial_trace(pur, system.labels).matrix - rho.matrix)))
    errors["purify_norm"] = abs(1.0 - np.linalg.norm(pur.amplitudes))

    d_out = int(rng.integers(1, 5))
    out_sys = RegisterSystem((("B", d_out),))
    ch = random_channel(system, out_sys, -(-d // d_out) + int(rng.integers(0, 3)), rng)
    completeness = sum(k.conj().T @ k for k in ch.kraus)
    errors["channel_completeness"] = float(np.max(np.abs(completeness - np.eye(d))))
    image = apply_channel(ch, rho)
    errors["channel_trace"] = abs(1.0 - np.trace(image.matrix).real)
    errors["channel_positivity"] = max(0.0, -float(np.linalg.eigvalsh(image.matrix).min()))

    phi_p = _rotated_purification(rho, "E", rng)
    psi_p = _rotated_purification(sigma, "F", rng)
    t = uhlmann_isometry(phi_p, psi_p, ["E"], ["F"])
    errors["uhlmann_isometry"] = float(np.max(np.abs(t.matrix.conj().T @ t.matrix - np.eye(t.matrix.shape[1]))))
    errors["uhlmann_optimality"] = abs(overlap(phi_p, psi_p, t) - f_rs)
    return errors


def qcore_selftest(instances: int = 1000, seed: int = 0, tol: float = TOL) -> dict:
    """Run ``instances`` random instances, cycling through dimensions up to 16."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for k in range(instances):
        for name, err in check_instance(rng, SHAPES[k % len(SHAPES)]).items():
            worst[name] = max(worst.get(name, 0.0), float(err))
    checks = {name: {"max_error": err, "pass": err <= tol} for name, err in sorted(worst.items())}
    return {
        "instances": instances,
        "seed": seed,
        "tolerance": tol,
        "max_dim": max(int(np.prod(s)) for s in SHAPES),
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }

