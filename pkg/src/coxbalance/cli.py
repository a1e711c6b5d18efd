"""coxbalance command line: simulate | exact | verify <suite> | sweep | report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness as H
from .errors import ConfigError, StateCapExceeded
from .exact import exact_metrics, solve, write_distribution
from .microsim import per_server_microsim
from .model import CoxianParams
from .policies import PolicyKind
from .simulator import run

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CAP, EXIT_VERIFY = 0, 2, 3, 4, 5


def _err(msg: str) -> None:
    print(f"coxbalance: {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    flat = H.read_config(args.config)
    cfg = H.system_from(flat)
    sim = H.sim_from(flat, horizon=args.horizon, warmup=args.warmup, seed=args.seed, batches=args.batches,
                     trace_interval=args.trace_interval)
    report = per_server_microsim(cfg, sim) if args.per_server else run(cfg, sim)
    report.write_json(args.out, timing=args.timing)
    if args.trace:
        report.write_trace(args.trace)
    if report.insufficient:
        _err(f"insufficient data: {report.arrivals} post-warmup arrivals ({args.out} written, flagged)")
        return EXIT_DATA
    return EXIT_OK


def cmd_exact(args) -> int:
    cfg = H.system_from(H.read_config(args.config))
    space, gen, dist = solve(cfg, method=args.method)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_distribution(out / "distribution.csv", space, dist)
    metrics = exact_metrics(dist, space, cfg.policy, cfg).to_dict()
    metrics.update(states=len(space), reachable=dist.n_reachable, residual=dist.residual, method=dist.method,
                   instance=H.instance_params(cfg))
    H.dump_json(metrics, out / "metrics.json")
    return EXIT_OK


def cmd_verify(args) -> int:
    instances = None
    if args.config or args.policy:
        instances = H.builtin_instances()
        if args.policy:
            policy = PolicyKind(args.policy, args.d, args.pod_sampling)
            instances = [c.replace(policy=policy) for c in instances
                         if policy.kind != "pod" or policy.with_replacement or policy.d <= c.N]
        if args.config:
            instances.append(H.system_from(H.read_config(args.config)))
    report = H.run_suite(args.suite, instances, asserted_pi=bool(args.policy))
    text = H.dump_json(report, args.out)
    if args.out is None:
        sys.stdout.write(text)
    c = report["counts"]
    _err(f"verify {args.suite}: {c['pass']} pass, {c['fail']} fail, {c['inapplicable']} inapplicable")
    return EXIT_VERIFY if report["status"] == "fail" else EXIT_OK


def _sweep_spec(args) -> H.SweepSpec:
    flat = H.read_config(args.config) if args.config else {}
    policies = args.policies or [flat.get("policy.kind", "jsq")]
    kinds = []
    for name in policies:
        if name.startswith("pod"):
            d = int(name[3:]) if len(name) > 3 else int(flat.get("policy.d", 2))
            kinds.append(PolicyKind("pod", d, flat.get("policy.pod_sampling", "without_replacement")))
        else:
            kinds.append(PolicyKind(name))
    cox = CoxianParams(float(args.mu1 or flat.get("mu1", 2.0)), float(args.mu2 or flat.get("mu2", 1.0)),
                       float(args.p if args.p is not None else flat.get("p", 0.5)))
    return H.SweepSpec(
        n_grid=args.n_grid,
        alpha=float(args.alpha if args.alpha is not None else flat.get("alpha", 0.3)),
        beta=float(args.beta if args.beta is not None else flat.get("beta", 1.0)),
        policies=kinds,
        b=int(args.b or flat.get("b", 4)),
        coxian=cox,
        horizon=float(args.horizon or flat.get("horizon", 1000.0)),
        batches=int(args.batches or flat.get("batches", 32)),
        seed=int(args.seed if args.seed is not None else flat.get("seed", 0)),
        initial_state=args.initial_state,
    )


def cmd_sweep(args) -> int:
    spec = _sweep_spec(args)

    def progress(row):
        if args.verbose:
            _err(f"N={row['N']} {row['policy']}: p_wait={row['p_wait']:.3g} events={row['events']}")

    rows = H.run_sweep(spec, progress)
    Path(args.out).write_text(H.rows_to_csv(rows, timing=args.timing))
    summary = H.sweep_summary(rows, spec)
    summary["fit_self_test"] = H.fit_self_test()
    fit_path = args.fit_out or str(Path(args.out).with_suffix(".fit.json"))
    H.dump_json(summary, fit_path)
    insufficient = any(r["insufficient_data"] for r in rows)
    primary = [f for k, f in summary["fits"].items() if k.endswith(":p_wait")]
    if insufficient and any(f["status"] == "skipped" for f in primary):
        _err("insufficient data at some grid points and fewer than 4 usable points remain")
        return EXIT_DATA
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        with open(args.input, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read sweep CSV {args.input}: {exc}") from exc
    fit_path = args.fit or str(Path(args.input).with_suffix(".fit.json"))
    fits = json.loads(Path(fit_path).read_text()) if Path(fit_path).exists() else None
    lines = ["| N | policy | lambda | p_wait | p_block | mean_total | excess_mean | theorem_bound | corollary_bound |",
             "|---|---|---|---|---|---|---|---|---|"]
    for r in rows:
        def g(k):
            v = r.get(k, "")
            try:
                return f"{float(v):.4g}"
            except ValueError:
                return v

        lines.append(f"| {r['N']} | {r['policy']} | {g('lambda')} | {g('p_wait')} ± {g('p_wait_ci')} | "
                     f"{g('p_block')} | {g('mean_total')} | {g('excess_mean')} | {g('theorem_bound')} | "
                     f"{g('corollary_bound')} |")
    if fits:
        lines.append("")
        for key, f in fits["fits"].items():
            if f["status"] == "ok":
                lines.append(f"- {key}: slope {f['slope']:.4f}, R^2 {f['r2']:.4f} on {f['usable']} points "
                             f"(regressor {f['regressor']})")
            else:
                lines.append(f"- {key}: fit skipped ({f['reason']})")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coxbalance", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--horizon", type=float)
    s.add_argument("--warmup", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--batches", type=int)
    s.add_argument("--out", required=True, help="SimReport JSON path")
    s.add_argument("--per-server", action="store_true", help="use the server-level simulator")
    s.add_argument("--trace", help="CSV path for a (time, total_s) trace")
    s.add_argument("--trace-interval", type=float)
    s.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("exact", help="solve the stationary distribution")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--method", choices=("auto", "dense", "power"), default="auto")
    e.set_defaults(func=cmd_exact)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=H.SUITES)
    v.add_argument("--config", help="add a user instance to the built-in grid")
    v.add_argument("--policy", help="replace the grid's policies with this one")
    v.add_argument("--d", type=int)
    v.add_argument("--pod-sampling", default="without_replacement")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="heavy-traffic sweep over N with scaling fits")
    w.add_argument("--config")
    w.add_argument("--n-grid", type=int, nargs="+", default=[250, 1000, 4000, 16000, 64000])
    w.add_argument("--alpha", type=float)
    w.add_argument("--beta", type=float)
    w.add_argument("--policies", nargs="+", help="jsq, jiq, i1f or pod<d>")
    w.add_argument("--b", type=int)
    w.add_argument("--mu1", type=float)
    w.add_argument("--mu2", type=float)
    w.add_argument("--p", type=float)
    w.add_argument("--horizon", type=float)
    w.add_argument("--batches", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--initial-state", default="empty", choices=("empty", "equilibrium"))
    w.add_argument("--out", required=True, help="CSV path")
    w.add_argument("--fit-out", help="fit summary JSON (default: next to the CSV)")
    w.add_argument("--timing", action="store_true", help="add a wall_clock column")
    w.add_argument("--verbose", action="store_true")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="markdown table from a sweep CSV")
    r.add_argument("--input", required=True)
    r.add_argument("--fit")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StateCapExceeded as exc:
        _err(str(exc))
        return EXIT_CAP
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
