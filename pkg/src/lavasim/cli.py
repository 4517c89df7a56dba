"""Experiment runner CLI.

Subcommands: generate, run, compare, sweep-accuracy, defrag-compare,
theorem, train, eval-model.  All outputs are CSV/JSON files; every command
is deterministic given its inputs and seeds.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

from .core import ResourceVec
from .defrag import compare_orderings
from .evaluate import model_report
from .predict import EmpiricalLifetimeModel, make_predictor
from .sched import ALGORITHMS, LavaConfig, NilasConfig
from .sim import DefragConfig, RunResult, SimConfig, Simulator, optimal_empty_bound
from .theorem import TheoremConfig, gap_regression, gap_vs_m, misprediction_probability
from .workload import (
    GeneratorConfig,
    Stratum,
    generate,
    parse_trace,
    split,
    training_examples,
    write_trace,
)

SERIES_HEADER = "# lavasim-series v1"
SERIES_COLUMNS = ("time_s", "empty_hosts_pct", "empty_to_free_ratio",
                  "packing_density", "num_vms", "util_cpu", "util_mem")


@dataclasses.dataclass(frozen=True)
class PoolConfig:
    hosts: int = 50
    cpu_m: int = 96_000
    mem_mib: int = 393_216

    @property
    def capacity(self) -> ResourceVec:
        return ResourceVec(self.cpu_m, self.mem_mib)


def load_config(path: Optional[str]) -> Dict[str, Dict[str, str]]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {section: dict(parser[section]) for section in parser.sections()}


def resolve_configs(raw: Dict[str, Dict[str, str]], args) -> Tuple[
        PoolConfig, NilasConfig, LavaConfig, SimConfig]:
    pool_raw = raw.get("pool", {})
    pool = PoolConfig(hosts=int(pool_raw.get("hosts", 50)),
                      cpu_m=int(pool_raw.get("cpu_m", 96_000)),
                      mem_mib=int(pool_raw.get("mem_mib", 393_216)))
    n_raw = raw.get("nilas", {})
    position = getattr(args, "nilas_position", None) or n_raw.get("position", "above-binpacking")
    buckets = n_raw.get("bucket_boundaries_s")
    nilas = NilasConfig(
        bucket_boundaries_s=tuple(int(x) for x in buckets.split(",")) if buckets
        else NilasConfig.bucket_boundaries_s,
        position=position)
    l_raw = raw.get("lava", {})
    lava = LavaConfig(recycle_threshold=float(l_raw.get("recycle_threshold", 0.90)),
                      deadline_factor=float(l_raw.get("deadline_factor", 1.1)))
    s_raw = raw.get("sim", {})
    d_raw = raw.get("defrag", {})
    defrag = DefragConfig(
        enabled=d_raw.get("enabled", "0") == "1",
        empty_host_trigger=float(d_raw.get("empty_host_trigger", 0.05)),
        check_interval_s=float(d_raw.get("check_interval_s", 3600)),
        candidates_per_round=int(d_raw.get("candidates_per_round", 2)),
        ordering=d_raw.get("ordering", "trace"),
        max_concurrent=int(d_raw.get("max_concurrent", 3)),
        migration_s=float(d_raw.get("migration_s", 1200)))
    sim = SimConfig(
        warmup=not getattr(args, "cold_start", False) and s_raw.get("warmup", "1") == "1",
        warmup_s=float(s_raw.get("warmup_s", 172_800)),
        sample_interval_s=float(s_raw.get("sample_interval_s", 300)),
        check_invariants=s_raw.get("check_invariants", "0") == "1"
        or getattr(args, "check_invariants", False),
        record_placements=getattr(args, "placements", False),
        measure_stranding=s_raw.get("measure_stranding", "0") == "1",
        defrag=defrag)
    return pool, nilas, lava, sim


def run_one(trace, algorithm: str, predictor_spec: str, pool: PoolConfig,
            nilas: NilasConfig, lava: LavaConfig, sim_cfg: SimConfig,
            seed: int = 0) -> RunResult:
    model = make_predictor(predictor_spec, seed=seed)
    sim = Simulator(trace, pool.hosts, pool.capacity, algorithm, model,
                    nilas, lava, sim_cfg)
    return sim.run()


def write_series_csv(path, series) -> None:
    with open(path, "w") as fh:
        fh.write(SERIES_HEADER + "\n")
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for row in series:
            t, e, r, d, n, uc, um = row
            fh.write(f"{t:.0f},{e:.6f},{r:.6f},{d:.6f},{n},{uc:.6f},{um:.6f}\n")


def write_summary_json(path, summary: Dict, resolved: Dict) -> None:
    payload = dict(summary)
    payload["config"] = resolved
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolved_dict(pool, nilas, lava, sim_cfg, extra=None) -> Dict:
    out = {"pool": dataclasses.asdict(pool),
           "nilas": dataclasses.asdict(nilas),
           "lava": dataclasses.asdict(lava),
           "sim": dataclasses.asdict(sim_cfg)}
    if extra:
        out.update(extra)
    return out


# -- subcommands ---------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(num_vms=args.num_vms, seed=args.seed,
                          arrival_rate_per_h=args.rate)
    write_trace(generate(cfg), args.out)
    print(f"wrote {args.num_vms} VMs to {args.out}")
    return 0


def cmd_run(args) -> int:
    trace = parse_trace(args.trace)
    pool, nilas, lava, sim_cfg = resolve_configs(load_config(args.config), args)
    if args.algo not in ALGORITHMS:
        print(f"error: unknown algorithm {args.algo!r} (choose from {ALGORITHMS})",
              file=sys.stderr)
        return 2
    result = run_one(trace, args.algo, args.predictor, pool, nilas, lava,
                     sim_cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_series_csv(os.path.join(args.out, "series.csv"), result.series)
    resolved = _resolved_dict(pool, nilas, lava, sim_cfg,
                              {"algorithm": args.algo, "predictor": args.predictor,
                               "seed": args.seed, "trace": args.trace})
    write_summary_json(os.path.join(args.out, "summary.json"), result.summary, resolved)
    with open(os.path.join(args.out, "placements.log"), "w") as fh:
        fh.write("\n".join(result.placements) + ("\n" if result.placements else ""))
    print(f"{args.algo}: avg empty hosts "
          f"{result.summary['avg_empty_hosts_pct']:.2f}%")
    return 0


def _compare_worker(payload):
    trace_path, algo, predictor, pool, nilas, lava, sim_cfg, seed = payload
    trace = parse_trace(trace_path)
    result = run_one(trace, algo, predictor, pool, nilas, lava, sim_cfg, seed)
    return algo, result.summary


def cmd_compare(args) -> int:
    if len(args.algos) < 2:
        print("error: compare needs at least two algorithms", file=sys.stderr)
        return 2
    pool, nilas, lava, sim_cfg = resolve_configs(load_config(args.config), args)
    payloads = [(args.trace, algo, args.predictor, pool, nilas, lava, sim_cfg,
                 args.seed) for algo in args.algos]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool_exec:
            results = list(pool_exec.map(_compare_worker, payloads))
    else:
        results = [_compare_worker(p) for p in payloads]
    results = {algo: summary for algo, summary in results}
    base = results[args.algos[0]]["avg_empty_hosts_pct"]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "comparison.csv")
    with open(path, "w") as fh:
        fh.write("# lavasim-comparison v1\n")
        fh.write("algorithm,avg_empty_hosts_pct,delta_pp_vs_first,"
                 "avg_empty_to_free_ratio,avg_packing_density,scheduling_failures\n")
        for algo in args.algos:
            s = results[algo]
            fh.write(f"{algo},{s['avg_empty_hosts_pct']:.6f},"
                     f"{s['avg_empty_hosts_pct'] - base:.6f},"
                     f"{s['avg_empty_to_free_ratio']:.6f},"
                     f"{s['avg_packing_density']:.6f},{s['scheduling_failures']}\n")
    for algo in args.algos:
        print(f"{algo}: {results[algo]['avg_empty_hosts_pct']:.2f}% empty "
              f"({results[algo]['avg_empty_hosts_pct'] - base:+.2f} pp)")
    return 0


def _sweep_worker(payload):
    trace_path, algo, accuracy, seed, pool, nilas, lava, sim_cfg = payload
    trace = parse_trace(trace_path)
    spec = "oracle" if accuracy is None else f"noisy:{accuracy}"
    result = run_one(trace, algo, spec, pool, nilas, lava, sim_cfg, seed)
    return (algo, accuracy, seed, result.summary["avg_empty_hosts_pct"])


def cmd_sweep_accuracy(args) -> int:
    grid = [float(x) for x in args.accuracies.split(",")]
    for acc in grid:
        if not 0.0 <= acc <= 1.0:
            print(f"error: accuracy {acc} outside [0,1]", file=sys.stderr)
            return 2
    pool, nilas, lava, sim_cfg = resolve_configs(load_config(args.config), args)
    seeds = list(range(args.seed, args.seed + args.num_seeds))
    payloads = []
    for algo in args.algos:
        for acc in grid:
            for seed in seeds:
                payloads.append((args.trace, algo, acc, seed, pool, nilas, lava, sim_cfg))
    baseline_payloads = [(args.trace, "baseline", None, args.seed, pool, nilas,
                          lava, sim_cfg)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool_exec:
            rows = list(pool_exec.map(_sweep_worker, payloads + baseline_payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads + baseline_payloads]
    baseline_pct = next(r[3] for r in rows if r[0] == "baseline")
    rows = sorted(r for r in rows if r[0] != "baseline")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
        fh.write("# lavasim-sweep v1\n")
        fh.write("algorithm,accuracy,seed,avg_empty_hosts_pct,improvement_pp\n")
        for algo, acc, seed, pct in rows:
            fh.write(f"{algo},{acc},{seed},{pct:.6f},{pct - baseline_pct:.6f}\n")
    print(f"baseline: {baseline_pct:.2f}% empty; {len(rows)} sweep cells written")
    return 0


def cmd_defrag_compare(args) -> int:
    trace = parse_trace(args.trace)
    raw = load_config(args.config)
    raw.setdefault("defrag", {})["enabled"] = "1"
    pool, nilas, lava, sim_cfg = resolve_configs(raw, args)
    sim_cfg = dataclasses.replace(sim_cfg, record_defrag_instances=True)
    result = run_one(trace, args.algo, args.predictor, pool, nilas, lava,
                     sim_cfg, seed=args.seed)
    report = compare_orderings(result.defrag_instances, algorithm=args.algo,
                               max_concurrent=sim_cfg.defrag.max_concurrent,
                               migration_s=sim_cfg.defrag.migration_s)
    os.makedirs(args.out, exist_ok=True)
    payload = {"baseline_migrations": report["baseline_migrations"],
               "lars_migrations": report["lars_migrations"],
               "reduction": report["reduction"],
               "instances": len(result.defrag_instances),
               "per_host": report["per_host"]}
    with open(os.path.join(args.out, "defrag_report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"baseline {report['baseline_migrations']} vs LARS "
          f"{report['lars_migrations']} migrations "
          f"({100 * report['reduction']:.2f}% reduction)")
    return 0


def cmd_theorem(args) -> int:
    try:
        base = TheoremConfig(epsilon=args.epsilon, rho=args.rho, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ms = [int(x) for x in args.ms.split(",")]
    rows = gap_vs_m(base, ms, seeds=list(range(args.seed, args.seed + args.num_seeds)))
    reg = gap_regression(rows)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "theorem.csv"), "w") as fh:
        fh.write("# lavasim-theorem v1\n")
        fh.write("m,seed,avg_hosts_no_learning,avg_hosts_learning,gap\n")
        for m, seed, nl, l in rows:
            fh.write(f"{m},{seed},{nl:.6f},{l:.6f},{nl - l:.6f}\n")
    summary = {"slope": reg.slope, "p_value": reg.pvalue, "intercept": reg.intercept,
               "epsilon": args.epsilon, "rho": args.rho,
               "eq1_example": misprediction_probability(args.epsilon, args.rho, 1.0, 1.0)}
    with open(os.path.join(args.out, "theorem_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"gap slope vs m: {reg.slope:.3f} (p={reg.pvalue:.4f})")
    return 0


def cmd_train(args) -> int:
    trace = parse_trace(args.trace)
    model = EmpiricalLifetimeModel(min_count=args.min_count)
    model.fit(training_examples(trace))
    model.save(args.out)
    print(f"trained on {len(trace)} VMs, {len(model.strata)} strata -> {args.out}")
    return 0


def cmd_eval_model(args) -> int:
    model = EmpiricalLifetimeModel.load(args.model)
    test = parse_trace(args.trace)
    if args.train_trace:
        train_ids = {r.vm_id for r in parse_trace(args.train_trace)}
        overlap = sum(1 for r in test if r.vm_id in train_ids)
        if overlap:
            print(f"warning: {overlap} test VMs also appear in the training trace",
                  file=sys.stderr)
    report = model_report(model, test)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"precision {report['precision']:.3f} recall {report['recall']:.3f} "
          f"f1 {report['f1']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lavasim",
                                description="Lifetime-aware VM scheduling simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, predictor=True):
        sp.add_argument("--trace", required=True)
        sp.add_argument("--config", default=None)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--cold-start", action="store_true")
        sp.add_argument("--nilas-position", choices=("above-binpacking", "highest"),
                        default=None)
        if predictor:
            sp.add_argument("--predictor", default="oracle",
                            help="oracle | noisy:<acc> | empirical:<model-file>")

    sp = sub.add_parser("generate", help="generate a synthetic trace")
    sp.add_argument("--num-vms", type=int, default=20_000)
    sp.add_argument("--rate", type=float, default=128.0, help="arrivals per hour")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("run", help="replay one trace with one algorithm")
    common(sp)
    sp.add_argument("--algo", required=True)
    sp.add_argument("--placements", action="store_true")
    sp.add_argument("--check-invariants", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run several algorithms on one trace")
    common(sp)
    sp.add_argument("--algos", nargs="+", required=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep-accuracy", help="noisy-predictor accuracy sweep")
    common(sp, predictor=False)
    sp.add_argument("--algos", nargs="+", default=["nilas", "lava"])
    sp.add_argument("--accuracies", default="0.5,0.7,0.9,1.0")
    sp.add_argument("--num-seeds", type=int, default=5)
    sp.set_defaults(func=cmd_sweep_accuracy)

    sp = sub.add_parser("defrag-compare", help="trace-order vs LARS migrations")
    common(sp)
    sp.add_argument("--algo", default="baseline")
    sp.set_defaults(func=cmd_defrag_compare)

    sp = sub.add_parser("theorem", help="two-lifetime learning experiment")
    sp.add_argument("--epsilon", type=float, default=0.05)
    sp.add_argument("--rho", type=float, default=0.1)
    sp.add_argument("--ms", default="20,40,80")
    sp.add_argument("--num-seeds", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_theorem)

    sp = sub.add_parser("train", help="train the empirical lifetime model")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--min-count", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-model", help="accuracy report for a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--trace", required=True)
    sp.add_argument("--train-trace", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_model)

    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
