"""Command-line front end for reproducible experiment runs.

All commands consume one JSON config document; individual fields can be
overridden with flags.  Every artifact carries the fingerprint of the
effective config, so re-running a command with the same config and seed
byte-reproduces its outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import run_structure_checks
from .errors import VaoiError
from .kernel import build_kernel
from .model import SystemParams, validate_params
from .sim import PolicySpec, Protocol, SWEEP_AXES, simulate, sweep
from .solver import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITER,
    brute_force_optimal,
    extract_policy,
    load_policy_csv,
    load_value_csv,
    relative_value_iteration,
    save_policy_csv,
    save_value_csv,
)

AXIS_FILE = {
    "q_all": "fig3.csv",
    "B": "fig5.csv",
    "beta": "fig6.csv",
    "p_t": "fig7.csv",
    "lambda_all": "fig8.csv",
}


@dataclass
class SweepSpec:
    axis: str
    values: list


@dataclass
class ExperimentConfig:
    params: SystemParams
    epsilon: float = DEFAULT_EPSILON
    max_iter: int = DEFAULT_MAX_ITER
    sweeps: list[SweepSpec] = field(default_factory=list)
    policies: list[dict] = field(default_factory=lambda: [{"kind": "optimal"}, {"kind": "greedy"}, {"kind": "random", "prob": 0.5}])
    horizon: int = 4000
    replications: int = 400
    seed: int = 1
    out_dir: str = "out"
    threads: int = 1
    oracle_max_policies: int = 1 << 20

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "solver": {"epsilon": self.epsilon, "max_iter": self.max_iter},
            "sweeps": [{"axis": s.axis, "values": list(s.values)} for s in self.sweeps],
            "policies": self.policies,
            "protocol": {
                "horizon": self.horizon,
                "replications": self.replications,
                "seed": self.seed,
            },
            "out_dir": self.out_dir,
            "oracle_max_policies": self.oracle_max_policies,
        }

    def fingerprint(self) -> str:
        # out_dir is where artifacts land, not what they contain
        doc = self.to_json()
        del doc["out_dir"]
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def protocol(self) -> Protocol:
        return Protocol(horizon=self.horizon, replications=self.replications, seed=self.seed)


def _normalize_policy(entry) -> dict:
    if isinstance(entry, str):
        return {"kind": entry}
    if isinstance(entry, dict) and "kind" in entry:
        return dict(entry)
    raise VaoiError(f"policy entry must be a kind string or an object with 'kind': {entry!r}")


def load_config(path, overrides: argparse.Namespace | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "params" not in doc:
        raise VaoiError("config is missing the 'params' object")
    params = SystemParams.from_json(doc["params"])
    validate_params(params)
    solver = doc.get("solver", {})
    protocol = doc.get("protocol", {})
    sweeps_doc = doc.get("sweeps")
    if sweeps_doc is None and "sweep" in doc:
        sweeps_doc = [doc["sweep"]]
    sweeps = [SweepSpec(axis=s["axis"], values=list(s["values"])) for s in sweeps_doc or []]
    for s in sweeps:
        if s.axis not in SWEEP_AXES:
            raise VaoiError(f"unknown sweep axis {s.axis!r}; expected one of {SWEEP_AXES}")
    cfg = ExperimentConfig(
        params=params,
        epsilon=float(solver.get("epsilon", DEFAULT_EPSILON)),
        max_iter=int(solver.get("max_iter", DEFAULT_MAX_ITER)),
        sweeps=sweeps,
        policies=[_normalize_policy(p) for p in doc.get("policies", ["optimal", "greedy", "random"])],
        horizon=int(protocol.get("horizon", 4000)),
        replications=int(protocol.get("replications", 400)),
        seed=int(protocol.get("seed", 1)),
        out_dir=doc.get("out_dir", "out"),
        oracle_max_policies=int(doc.get("oracle_max_policies", 1 << 20)),
    )
    if overrides is not None:
        if getattr(overrides, "out", None):
            cfg.out_dir = overrides.out
        if getattr(overrides, "seed", None) is not None:
            cfg.seed = overrides.seed
        if getattr(overrides, "epsilon", None) is not None:
            cfg.epsilon = overrides.epsilon
        if getattr(overrides, "threads", None) is not None:
            cfg.threads = overrides.threads
    return cfg


def _policy_spec(entry: dict, solved: PolicySpec | None) -> PolicySpec:
    kind = entry["kind"]
    if kind == "optimal":
        return solved if solved is not None else PolicySpec.optimal_placeholder()
    if kind == "greedy":
        return PolicySpec.greedy()
    if kind == "random":
        return PolicySpec.random(prob=float(entry.get("prob", 0.5)))
    if kind == "never":
        return PolicySpec.never()
    if kind == "threshold":
        table = entry.get("table")
        if table is None:
            raise VaoiError("threshold policy entry needs a 'table' array (one entry per b)")
        return PolicySpec.threshold(tuple(None if t in (None, "none") else int(t) for t in table))
    raise VaoiError(f"unknown policy kind: {kind}")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, doc: dict) -> None:
    _write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    out = _out_dir(cfg)
    fp = cfg.fingerprint()
    kernel = build_kernel(cfg.params)
    vf, report = relative_value_iteration(kernel, epsilon=cfg.epsilon, max_iter=cfg.max_iter)
    policy = extract_policy(vf, kernel)
    header = [f"# config_fingerprint={fp}"]
    save_policy_csv(policy, out / "policy.csv", extra_header=header)
    save_value_csv(vf, out / "value.csv", extra_header=header)
    doc = report.to_json()
    doc["config_fingerprint"] = fp
    doc["state_count"] = kernel.space.count
    _write_json(out / "solve_report.json", doc)
    from .analysis import check_delta_independence, extract_thresholds

    if check_delta_independence(policy, kernel.space).passed:
        table = extract_thresholds(policy, kernel.space)
        _write_text(out / "thresholds.csv", f"# config_fingerprint={fp}\n" + table.to_csv())
    print(f"gain={report.gain:.9f} iterations={report.iterations} converged={report.converged}")
    return 0 if report.converged else 1


def cmd_check(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    out = _out_dir(cfg)
    fp = cfg.fingerprint()
    policy_path = args.policy or out / "policy.csv"
    value_path = args.value or out / "value.csv"
    policy = load_policy_csv(policy_path)
    vf = load_value_csv(value_path)
    expected = cfg.params.fingerprint()
    for name, got in (("policy", policy.fingerprint), ("value", vf.fingerprint)):
        if got and got != expected:
            raise VaoiError(f"{name} file fingerprint {got} does not match params {expected}")
    kernel = build_kernel(cfg.params)
    report = run_structure_checks(kernel, vf, policy)
    doc = report.to_json()
    doc["config_fingerprint"] = fp
    _write_json(out / "structure_report.json", doc)
    if report.thresholds is not None:
        _write_text(out / "thresholds.csv", f"# config_fingerprint={fp}\n" + report.thresholds.to_csv())
    for line in (
        f"accessibility: closed_classes={report.accessibility.closed_class_count} "
        f"transient={report.accessibility.transient_count}",
        f"delta_independence: {'pass' if report.delta_independence.passed else 'FAIL'}",
        f"thresholds: {'pass' if report.thresholds and not report.thresholds.violations else 'FAIL'}",
        f"monotonicity: {'pass' if report.monotonicity.passed else 'FAIL'}",
    ):
        print(line)
    return 0 if report.passed else 1


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    if not cfg.sweeps:
        raise VaoiError("config has no sweep specs; add a 'sweeps' array")
    out = _out_dir(cfg)
    fp = cfg.fingerprint()
    manifest = {
        "config_fingerprint": fp,
        "protocol": {"horizon": cfg.horizon, "replications": cfg.replications, "seed": cfg.seed},
        "sweeps": [],
    }
    all_converged = True
    for spec in cfg.sweeps:
        policies = [_policy_spec(p, None) for p in cfg.policies]
        result = sweep(
            cfg.params,
            spec.axis,
            spec.values,
            policies,
            cfg.protocol(),
            epsilon=cfg.epsilon,
            max_iter=cfg.max_iter,
            threads=cfg.threads,
        )
        fname = AXIS_FILE[spec.axis]
        _write_text(out / fname, f"# config_fingerprint={fp}\n" + result.to_csv())
        entry = {"axis": spec.axis, "file": fname, "points": []}
        for v in spec.values:
            rep = result.solve_reports.get(float(v))
            entry["points"].append(
                {"value": v, "solve_report": rep.to_json() if rep is not None else None}
            )
            if rep is not None and not rep.converged:
                all_converged = False
        manifest["sweeps"].append(entry)
        print(f"sweep {spec.axis}: wrote {fname} ({len(result.rows)} rows)")
    _write_json(out / "sweep_manifest.json", manifest)
    return 0 if all_converged else 1


def cmd_samplepath(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    out = _out_dir(cfg)
    fp = cfg.fingerprint()
    kernel = build_kernel(cfg.params)
    vf, report = relative_value_iteration(kernel, epsilon=cfg.epsilon, max_iter=cfg.max_iter)
    policy = extract_policy(vf, kernel)
    for name, spec in (("optimal", PolicySpec.from_policy(policy)), ("greedy", PolicySpec.greedy())):
        result = simulate(
            cfg.params,
            spec,
            horizon=cfg.horizon,
            replications=1,
            seed=cfg.seed,
            record_path=True,
        )
        _write_text(
            out / f"samplepath_{name}.csv",
            f"# config_fingerprint={fp}\n" + result.sample_path.to_csv(),
        )
    print(f"wrote samplepath_optimal.csv and samplepath_greedy.csv (horizon={cfg.horizon})")
    return 0 if report.converged else 1


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args)
    out = _out_dir(cfg)
    fp = cfg.fingerprint()
    gain, policy = brute_force_optimal(cfg.params, max_policies=cfg.oracle_max_policies)
    save_policy_csv(policy, out / "oracle_policy.csv", extra_header=[f"# config_fingerprint={fp}"])
    free_states = cfg.params.B * (cfg.params.delta_max + 1) ** (cfg.params.K + 1)
    _write_json(
        out / "oracle_report.json",
        {
            "config_fingerprint": fp,
            "gain": gain,
            "free_states": free_states,
            "policies_enumerated": 2**free_states,
        },
    )
    print(f"oracle gain={gain:.12f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vaoi",
        description="Solve, check, and simulate the cached-update MDP for a gossiping ring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    env_threads = int(os.environ.get("VAOI_THREADS", "1"))

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="simulation seed (overrides config)")
        p.add_argument("--epsilon", type=float, default=None, help="solver tolerance (overrides config)")
        p.add_argument("--threads", type=int, default=env_threads, help="sweep-point parallelism")

    p_solve = sub.add_parser("solve", help="solve the MDP and persist policy/value tables")
    common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check", help="run the structural checks on solved tables")
    common(p_check)
    p_check.add_argument("--policy", default=None, help="policy CSV (default <out>/policy.csv)")
    p_check.add_argument("--value", default=None, help="value CSV (default <out>/value.csv)")
    p_check.set_defaults(func=cmd_check)

    p_sweep = sub.add_parser("sweep", help="run parameter sweeps with re-solve per point")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_path = sub.add_parser("samplepath", help="trace optimal and greedy on a shared outcome stream")
    common(p_path)
    p_path.set_defaults(func=cmd_samplepath)

    p_oracle = sub.add_parser("oracle", help="brute-force the optimal policy on a tiny instance")
    common(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid config JSON: {exc}", file=sys.stderr)
        return 2
    except VaoiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
