"""Batch runner: ``lab run <scenario>``, ``lab list-fixtures`` and ``lab selftest``.

Each run writes ``<scenario>.json`` (full report), ``<scenario>_checks.csv``
(one row per asserted bound) and ``<scenario>_summary.csv`` into the output
directory, and prints the summary table.

Checks CSV columns: scenario, fixture, delta, check, value, relation,
threshold, pass.

Summary CSV columns: fixture, delta, eps_corr, eps_sec, avg_success,
lemma1_threshold, min_success, theorem2_threshold, lemma1_pass,
theorem2_pass, pass.  Bound columns that a scenario does not evaluate hold
``not_run``; the final ``pass`` column is always true or false.

Exit status: 0 when every bound passes, 1 when some bound fails, 2 for an
invalid configuration, 3 for a numerical fault (a ``diagnostic.json`` is
written next to the reports).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli

from .attack import ConditionalDistribution, run_lemma1, theorem1_extract
from .funcs import (
    CapExceeded,
    classical_reveal_protocol,
    depolarize_fixture,
    disj_tightness_stats,
    fixture_catalog,
    load_fixture,
    make_function,
    two_copies_simulator_check,
)
from .game import NetTooLarge, ip_collision_average, run_theorem2
from .minimax import GAP_TOL, NumericsFault
from .proto import JointDistribution, correctness_epsilon, security_epsilon
from .selftest import qcore_selftest

SCHEMA_VERSION = 1
EXACT_TOL = 1e-9
SCENARIOS = ("theorem1", "lemma1", "theorem2", "appendix", "strengthen-eq", "strengthen-ip",
             "disj-tightness", "qcore-selftest")
CHECK_COLUMNS = ("scenario", "fixture", "delta", "check", "value", "relation", "threshold", "pass")
SUMMARY_COLUMNS = ("fixture", "delta", "eps_corr", "eps_sec", "avg_success", "lemma1_threshold",
                   "min_success", "theorem2_threshold", "lemma1_pass", "theorem2_pass", "pass")

DEFAULT_FIXTURES = {
    "theorem1": ["reveal-eq-n2", "reveal-ip-n2", "reveal-disj-n2", "appendix-n1"],
    "lemma1": ["reveal-eq-n2"],
    "theorem2": ["reveal-eq-n2"],
    "strengthen-eq": ["reveal-eq-n2"],
    "strengthen-ip": ["reveal-ip-n2"],
}
DEFAULT_DELTAS = {
    "lemma1": [0.01, 0.05],
    "theorem2": [1e-4],
    "strengthen-eq": [1e-4],
    "strengthen-ip": [1e-4],
}


class ConfigError(ValueError):
    """Invalid scenario configuration (exit status 2)."""


@dataclass
class ScenarioConfig:
    scenario: str
    fixture: list[str] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)
    net_eps: float | None = None
    net_mode: str = "adaptive"
    seed: int = 0
    out: str = "lab-out"
    parallel: bool = False
    instances: int = 1000
    samples: int = 20000
    disj_n: list[int] = field(default_factory=lambda: [4, 9])

    def validate(self) -> "ScenarioConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if isinstance(self.fixture, str):
            self.fixture = [self.fixture]
        if not self.fixture:
            self.fixture = list(DEFAULT_FIXTURES.get(self.scenario, []))
        if not self.deltas:
            self.deltas = list(DEFAULT_DELTAS.get(self.scenario, []))
        catalog = fixture_catalog()
        for fid in self.fixture:
            base = fid.rpartition("-dep")[0] if fid not in catalog else fid
            if base not in catalog:
                raise ConfigError(f"unknown fixture {fid!r}")
        for d in self.deltas:
            if not isinstance(d, (int, float)) or not 0.0 <= d <= 1.0:
                raise ConfigError(f"noise rate {d!r} outside [0, 1]")
        if self.net_eps is not None and not (isinstance(self.net_eps, (int, float)) and self.net_eps > 0):
            raise ConfigError(f"net epsilon must be positive, got {self.net_eps!r}")
        if self.net_mode not in ("adaptive", "grid"):
            raise ConfigError(f"net_mode must be 'adaptive' or 'grid', got {self.net_mode!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.instances < 1 or self.samples < 1:
            raise ConfigError("instances and samples must be positive")
        for n in self.disj_n:
            if n not in (4, 9):
                raise ConfigError(f"disj_n entries must be 4 or 9, got {n!r}")
        return self


CONFIG_KEYS = {f.name for f in fields(ScenarioConfig)}


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            data = tomli.loads(text.decode())
        else:
            data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a table/object")
    return data


def build_config(file_values: dict, overrides: dict) -> ScenarioConfig:
    """Config file values overlaid by command-line values (which win)."""
    unknown = sorted(set(file_values) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "scenario" not in merged:
        raise ConfigError("scenario is required")
    try:
        cfg = ScenarioConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# --- checks and per-fixture results ------------------------------------------

def _check(name: str, value: float, relation: str, threshold: float) -> dict:
    ok = {">=": value >= threshold, "<=": value <= threshold, ">": value > threshold,
          "<": value < threshold}[relation]
    return {"check": name, "value": float(value), "relation": relation,
            "threshold": float(threshold), "pass": bool(ok)}


def _result(fixture: str, delta, checks: list[dict], detail: dict, **summary) -> dict:
    return {"fixture": fixture, "delta": delta, "summary": summary, "checks": checks,
            "pass": all(c["pass"] for c in checks), "detail": detail}


def _fixture_for(fid: str, delta: float | None):
    base = load_fixture(fid)
    return depolarize_fixture(base, delta) if delta else base


def task_theorem1(fid: str, delta, cfg: ScenarioConfig) -> dict:
    fixture = load_fixture(fid)
    f = fixture.function
    report = run_lemma1(fixture)
    rows = {}
    exact = 0
    for iv in range(f.n_v):
        ideal_row, ideal_ok = theorem1_extract(report.q_tilde, f, iv)
        attack_ok = True
        for iu in range(f.n_u):
            per_u = ConditionalDistribution(report.q.outcomes, {(iv,): report.q[(iu, iv)]}, "Q_u")
            _, ok = theorem1_extract(per_u, f, iv)
            attack_ok = attack_ok and ok
        rows[str(f.v_domain[iv])] = {"row": [str(x) for x in ideal_row],
                                     "secure_exact": ideal_ok, "attack_exact": attack_ok}
        exact += ideal_ok and attack_ok
    checks = [
        _check("eps_corr", report.eps_corr, "<=", EXACT_TOL),
        _check("eps_sec", report.eps_sec, "<=", EXACT_TOL),
        _check("avg_success", report.avg_success, ">=", 1 - 6 * report.eps - 1e-6),
        _check("exact_rows", exact, ">=", f.n_v),
    ]
    detail = report.to_dict(f)
    detail["extracted_rows"] = rows
    return _result(fid, None, checks, detail, eps_corr=report.eps_corr, eps_sec=report.eps_sec,
                   avg_success=report.avg_success, lemma1_threshold=1 - 6 * report.eps,
                   lemma1_pass=report.passed)


def task_lemma1(fid: str, delta, cfg: ScenarioConfig) -> dict:
    fixture = _fixture_for(fid, delta)
    report = run_lemma1(fixture)
    checks = [
        _check("avg_success", report.avg_success, ">=", 1 - 6 * report.eps - 1e-6),
        _check("independence_defect", report.independence_defect, "<=", 6 * report.eps + 1e-6),
    ]
    return _result(fixture.id, delta, checks, report.to_dict(fixture.function), eps_corr=report.eps_corr,
                   eps_sec=report.eps_sec, avg_success=report.avg_success,
                   lemma1_threshold=1 - 6 * report.eps, lemma1_pass=report.passed)


def _theorem2_result(fid: str, delta, cfg: ScenarioConfig, extra_checks) -> dict:
    fixture = _fixture_for(fid, delta)
    f = fixture.function
    report = run_theorem2(fixture, eps=cfg.net_eps, mode=cfg.net_mode)
    worst = min(report.min_success.values())
    threshold = 1 - 28 * report.eps
    checks = [
        _check("theorem2_min_success", worst, ">=", threshold),
        _check("duality_gap", report.game.gap, "<=", GAP_TOL),
        _check("chain_lower", report.chain["min_net_max_T"], ">=", report.chain["lower"] - 1e-6),
        _check("chain_upper", report.chain["min_net_max_T"], "<=", report.chain["upper"] + 1e-6),
    ]
    checks += extra_checks(report)
    return _result(fixture.id, delta, checks, report.to_dict(f), eps_corr=report.eps_corr_worst,
                   eps_sec=report.eps_sec_worst, min_success=worst, theorem2_threshold=threshold,
                   theorem2_pass=report.theorem_pass)


def task_theorem2(fid, delta, cfg):
    return _theorem2_result(fid, delta, cfg, lambda report: [])


def task_strengthen_eq(fid, delta, cfg):
    def extra(report):
        rec = report.strengthening.get("eq_recovery")
        if rec is None:
            raise ConfigError(f"fixture {fid} does not compute EQ")
        return [_check("eq_recovery", rec["min"], ">=", rec["threshold"])]

    return _theorem2_result(fid, delta, cfg, extra)


def task_strengthen_ip(fid, delta, cfg):
    def extra(report):
        rec = report.strengthening.get("ip_recovery")
        if rec is None:
            raise ConfigError(f"fixture {fid} does not compute IP")
        return [_check("ip_recovery", rec["min"], ">=", rec["threshold"])]

    return _theorem2_result(fid, delta, cfg, extra)


def ip_identity_checks(max_n: int = 3) -> list[dict]:
    """Distinct strings agree on IP for exactly half of all u, for every n <= max_n."""
    out = []
    for n in range(1, max_n + 1):
        avg = ip_collision_average(n)
        target = np.where(np.eye(2**n, dtype=bool), 1.0, 0.5)
        out.append(_check(f"ip_collision_identity_n{n}", float(np.max(np.abs(avg - target))), "<=", EXACT_TOL))
    return out


def task_appendix(fid, delta, cfg):
    tv, dist = two_copies_simulator_check(1)
    tv_comp, dist_comp = two_copies_simulator_check(1, hadamard=False)
    checks = [
        _check("tv_without_R", tv, "<=", EXACT_TOL),
        _check("distance_with_R", dist, ">", 0.1),
        _check("computational_distance_with_R", dist_comp, "<=", EXACT_TOL),
    ]
    detail = {"tv_without_R": tv, "distance_with_R": dist,
              "computational_variant": {"tv_without_R": tv_comp, "distance_with_R": dist_comp}}
    return _result("appendix-n1", None, checks, detail)


def task_disj(fid, delta, cfg):
    stats = [disj_tightness_stats(n, cfg.seed, cfg.samples) for n in sorted(cfg.disj_n)]
    checks = []
    for s in stats:
        checks.append(_check(f"slack_positive_n{s.n}", s.worst_error, ">", 0.0))
    for a, b in zip(stats, stats[1:]):
        checks.append(_check(f"slack_shrinks_n{a.n}_to_n{b.n}", b.worst_error, "<", a.worst_error))
    perturbed = load_fixture("disj-perturbed-n4")
    base = classical_reveal_protocol(make_function("DISJ", 4), "reveal-disj-n4")
    p = JointDistribution.uniform(perturbed.function.n_u, perturbed.function.n_v)
    eps_perturbed = security_epsilon(perturbed.protocol, perturbed.function, p, perturbed.ideal_adversary)
    eps_base = security_epsilon(base.protocol, base.function, p, base.ideal_adversary)
    eps_corr = correctness_epsilon(perturbed.protocol, perturbed.function, p)
    checks.append(_check("eps_sec_unchanged", abs(eps_perturbed - eps_base), "<=", 1e-8))
    eq = run_lemma1(load_fixture("reveal-eq-n2"))
    f_eq = eq.q_tilde
    eq_recovery = float(np.mean([f_eq[(iv,)][iv] for iv in range(len(f_eq.outcomes))]))
    for s in stats:
        checks.append(_check(f"exact_recovery_below_eq_n{s.n}", s.exact_recovery, "<", eq_recovery))
    detail = {
        "stats": [asdict(s) for s in stats],
        "perturbed_n4": {"eps_sec": eps_perturbed, "eps_sec_base": eps_base, "eps_corr": eps_corr,
                         "seed": perturbed.seed},
        "eq_recovery_rate": eq_recovery,
        "inverse_sqrt_n": {str(s.n): 1 / math.sqrt(s.n) for s in stats},
    }
    return _result("disj-perturbed", None, checks, detail, eps_corr=eps_corr, eps_sec=eps_perturbed)


def task_selftest(fid, delta, cfg):
    report = qcore_selftest(cfg.instances, cfg.seed)
    checks = [_check(name, c["max_error"], "<=", report["tolerance"]) for name, c in report["checks"].items()]
    return _result("qcore", None, checks, report)


TASKS = {
    "theorem1": task_theorem1,
    "lemma1": task_lemma1,
    "theorem2": task_theorem2,
    "strengthen-eq": task_strengthen_eq,
    "strengthen-ip": task_strengthen_ip,
    "appendix": task_appendix,
    "disj-tightness": task_disj,
    "qcore-selftest": task_selftest,
}


def _jobs(cfg: ScenarioConfig) -> list[tuple[str, float | None]]:
    if cfg.scenario in ("appendix", "disj-tightness", "qcore-selftest"):
        return [(cfg.scenario, None)]
    if cfg.scenario == "theorem1":
        return [(fid, None) for fid in cfg.fixture]
    return [(fid, float(d)) for fid in cfg.fixture for d in cfg.deltas]


def _run_job(args) -> dict:
    scenario, fid, delta, cfg = args
    return TASKS[scenario](fid, delta, cfg)


def run_scenario(cfg: ScenarioConfig) -> dict:
    """Execute the configured pipeline and return the report (nothing is written)."""
    jobs = [(cfg.scenario, fid, delta, cfg) for fid, delta in _jobs(cfg)]
    if cfg.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    results.sort(key=lambda r: (r["fixture"], -1.0 if r["delta"] is None else r["delta"]))
    if cfg.scenario == "strengthen-ip":
        results.append(_result("ip-identity", None, ip_identity_checks(3), {"max_n": 3}))
    config = asdict(cfg)
    config.pop("out")
    config.pop("parallel")
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "config": config,
        "results": results,
        "pass": all(r["pass"] for r in results),
    }


# --- output --------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def checks_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CHECK_COLUMNS)
    for res in report["results"]:
        for c in res["checks"]:
            writer.writerow([report["scenario"], res["fixture"], _fmt(res["delta"]), c["check"],
                             _fmt(c["value"]), c["relation"], _fmt(c["threshold"]), _fmt(c["pass"])])
    return buf.getvalue()


def summary_rows(reports: list[dict]) -> list[dict]:
    rows = []
    for report in reports:
        for res in report["results"]:
            s = res["summary"]
            row = {"fixture": res["fixture"], "delta": res["delta"]}
            for key in ("eps_corr", "eps_sec", "avg_success", "lemma1_threshold", "min_success",
                        "theorem2_threshold"):
                row[key] = s.get(key)
            for key in ("lemma1_pass", "theorem2_pass"):
                row[key] = s[key] if key in s else "not_run"
            row["pass"] = res["pass"]
            rows.append(row)
    return rows


def emit_summary(reports: list[dict]) -> tuple[str, str]:
    """(text table, CSV) with one row per (fixture, delta)."""
    if not reports:
        raise ValueError("emit_summary needs at least one report")
    rows = summary_rows(reports)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return _fmt(v) or "-"

    table = [list(SUMMARY_COLUMNS)] + [[cell(row[c]) for c in SUMMARY_COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(SUMMARY_COLUMNS))]
    text = "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table) + "\n"
    return text, buf.getvalue()


def write_outputs(report: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = report["scenario"]
    paths = {"report": out / f"{name}.json", "checks": out / f"{name}_checks.csv",
             "summary": out / f"{name}_summary.csv"}
    paths["report"].write_text(report_json(report))
    paths["checks"].write_text(checks_csv(report))
    paths["summary"].write_text(emit_summary([report])[1])
    return paths


def _diagnostic(cfg: ScenarioConfig | None, exc: BaseException) -> None:
    out = Path(cfg.out if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    dump = {"schema_version": SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc),
            "config": asdict(cfg) if cfg else None,
            "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__)}
    (out / "diagnostic.json").write_text(json.dumps(_clean(dump), indent=2, sort_keys=True) + "\n")


# --- entry point -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description="Reproduction experiments for two-party quantum computation bounds.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", help="TOML or JSON config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default lab-out)")
    run.add_argument("--parallel", action="store_true", default=None)
    run.add_argument("--fixture", action="append", help="fixture id (repeatable)")
    run.add_argument("--delta", action="append", type=float, help="noise rate (repeatable)")
    run.add_argument("--net-eps", type=float, dest="net_eps")
    run.add_argument("--net-mode", choices=("adaptive", "grid"), dest="net_mode")
    sub.add_parser("list-fixtures", help="print the fixture catalog")
    selftest = sub.add_parser("selftest", help="run the linear-algebra property suite")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.add_argument("--instances", type=int, default=1000)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.command == "list-fixtures":
        for fid in sorted(fixture_catalog()):
            print(fid)
        print("(append -dep<rate> to any id for the depolarized variant)")
        return 0
    if args.command == "selftest":
        report = qcore_selftest(args.instances, args.seed)
        for name, c in report["checks"].items():
            print(f"{'PASS' if c['pass'] else 'FAIL'} {name} max_error={c['max_error']:.3e}")
        return 0 if report["pass"] else 1

    cfg = None
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = {"scenario": args.scenario, "seed": args.seed, "out": args.out, "parallel": args.parallel,
                     "fixture": args.fixture, "deltas": args.delta, "net_eps": args.net_eps,
                     "net_mode": args.net_mode}
        cfg = build_config(file_values, overrides)
        report = run_scenario(cfg)
    except (ConfigError, CapExceeded, NetTooLarge, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericsFault, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerics fault: {exc}", file=sys.stderr)
        _diagnostic(cfg, exc)
        return 3
    paths = write_outputs(report, cfg.out)
    print(emit_summary([report])[0], end="")
    for res in report["results"]:
        for c in res["checks"]:
            print(f"{'PASS' if c['pass'] else 'FAIL'} {res['fixture']} {c['check']} "
                  f"{c['value']:.6g} {c['relation']} {c['threshold']:.6g}")
    print(f"report: {paths['report']}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
