"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 a check failed (feasibility
violation, certificate below threshold, soft ratio threshold missed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, bench, dualcheck, gainfn, lpcore
from .instance import InstanceError, gen_random, gen_upper_triangular, read_instance, sample_draw, write_instance
from .instance import instance_to_dict
from .simul import SimulationError, ledger_fractional, run_algorithm, run_balance_fractional

log = logging.getLogger("stochmatch")

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2

# reference values for the constants table
TABLE1 = [
    ("ranking_vs_opt", 0.572),
    ("balance_equal_vs_sopt", 0.613),
    ("balance_general_vs_sopt", 0.611),
    ("ranking_vs_sopt", 0.632),
]

# soft thresholds for the empirical ratio experiment
SOFT_BALANCE_VS_SOPT = 0.59
SOFT_RANKING_VS_OPT = 0.55


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for failed checks here
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def round12(obj):
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.12g}")
    if isinstance(obj, dict):
        return {k: round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round12(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_text(obj) -> str:
    return json.dumps(round12(obj), indent=2) + "\n"


def _table_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: fmt(v) if not isinstance(v, (list, dict)) else json.dumps(round12(v)) for k, v in r.items()})
    return buf.getvalue()


# -- argument plumbing -------------------------------------------------------------


def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    if seed:
        p.add_argument("--seed", type=int, help="u64 seed (required by stochastic commands)")
    p.add_argument("--out", type=Path, help="output path (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def _instance_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", type=Path, help="instance JSON file")
    p.add_argument("--gen", choices=["upper-triangular", "random"], help="generate the instance instead")
    p.add_argument("--k", type=int, help="upper-triangular size")
    p.add_argument("--p", type=float, help="edge probability (upper-triangular, or random with equal p)")
    p.add_argument("--m", type=int, help="offline vertices (random)")
    p.add_argument("--n", type=int, help="online vertices (random)")
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--p-low", type=float)
    p.add_argument("--p-high", type=float)
    p.add_argument("--gen-seed", type=int, help="seed of the random generator (default: --seed)")


def _trials(p: argparse.ArgumentParser, default: int) -> None:
    p.add_argument("--trials", type=int, default=default)


GAIN_CHOICES = ["auto", "ranking", "ranking-stochastic", "balance-equal"]


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="stochmatch", description="Online matching with stochastic rewards: simulation and verification.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="generate an instance file")
    _instance_source(p)
    _common(p)

    p = sub.add_parser("run", help="run one algorithm on one draw and export the trace")
    _instance_source(p)
    p.add_argument("--alg", required=True, choices=["ranking", "balance_equal", "greedy", "balance_fractional"])
    p.add_argument("--gain", default="auto", help=f"one of {GAIN_CHOICES} or a certificate JSON path")
    p.add_argument("--delta", type=float, default=1e-3, help="chunk size of the fractional algorithm")
    _common(p)

    p = sub.add_parser("bench", help="benchmarks and algorithm values")
    _instance_source(p)
    p.add_argument("--alg", action="append", choices=["ranking", "balance_equal", "greedy"])
    p.add_argument("--mc", action="store_true", help="force Monte Carlo algorithm values")
    _trials(p, 10_000)
    _common(p)

    p = sub.add_parser("duals", help="estimate duals and sweep the dual constraints")
    _instance_source(p)
    p.add_argument("--alg", required=True, choices=["ranking", "balance_equal", "balance_fractional"])
    p.add_argument("--gain", default="auto", help=f"one of {GAIN_CHOICES} or a certificate JSON path")
    p.add_argument("--benchmark", choices=["config", "reduced"], default="config")
    p.add_argument("--gamma", type=float, required=True)
    _trials(p, 10_000)
    _common(p)

    p = sub.add_parser("gain", help="gain functions and competitive-ratio constants")
    gsub = p.add_subparsers(dest="gain_command", parser_class=_Parser)
    gsub.required = True
    q = gsub.add_parser("solve-ranking")
    _common(q, seed=False)
    q = gsub.add_parser("balance-equal")
    q.add_argument("--grid", type=int, default=1000)
    _common(q, seed=False)
    q = gsub.add_parser("balance-general")
    q.add_argument("--step", type=float, default=0.005)
    q.add_argument("--lmax", type=float, default=8.0)
    q.add_argument("--rounds", type=int, default=3)
    q.add_argument("--tail-points", type=int, default=20)
    q.add_argument("--min-gamma", type=float, default=None, help="fail (exit 2) below this certified value")
    q.add_argument("--slack-out", type=Path, help="CSV of per-point slacks")
    _common(q, seed=False)
    q = gsub.add_parser("verify")
    q.add_argument("--cert", type=Path, help="re-check a (g, h) certificate instead of the built-in constants")
    _common(q, seed=False)

    p = sub.add_parser("reproduce", help="reproduce summary experiments")
    rsub = p.add_subparsers(dest="target", parser_class=_Parser)
    rsub.required = True
    q = rsub.add_parser("table1-constants")
    q.add_argument("--step", type=float, default=0.005)
    q.add_argument("--lmax", type=float, default=8.0)
    q.add_argument("--rounds", type=int, default=3)
    _common(q, seed=False)
    q = rsub.add_parser("empirical-ratios")
    q.add_argument("--k", type=int, default=12)
    q.add_argument("--p", type=float, default=0.05)
    _trials(q, 10_000)
    _common(q)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path)
    return ap


# -- helpers ---------------------------------------------------------------------------


def _need_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"{args.command} is stochastic and needs an explicit --seed")
    if args.seed < 0 or args.seed >= 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return args.seed


def load_instance(args):
    if args.instance is not None and args.gen is not None:
        raise UsageError("give either --instance or --gen, not both")
    if args.instance is not None:
        return read_instance(args.instance)
    if args.gen == "upper-triangular":
        if args.k is None or args.p is None:
            raise UsageError("upper-triangular needs --k and --p")
        return gen_upper_triangular(args.k, args.p)
    if args.gen == "random":
        if args.m is None or args.n is None:
            raise UsageError("random needs --m and --n")
        lo = args.p_low if args.p_low is not None else args.p
        hi = args.p_high if args.p_high is not None else args.p
        if lo is None or hi is None:
            raise UsageError("random needs --p or --p-low/--p-high")
        seed = args.gen_seed if args.gen_seed is not None else args.seed
        if seed is None:
            raise UsageError("random instances need --gen-seed or --seed")
        return gen_random(args.m, args.n, args.density, lo, hi, seed)
    raise UsageError("need --instance or --gen")


def load_gain(name: str, alg: str):
    if name == "auto":
        name = {"ranking": "ranking", "balance_equal": "balance-equal", "balance_fractional": "balance-equal"}[alg]
    if name == "ranking":
        return gainfn.RankingGain(gainfn.solve_ranking_constant().c)
    if name == "ranking-stochastic":
        return gainfn.ExpGain()
    if name == "balance-equal":
        return gainfn.BalanceEqualGain()
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown gain {name!r} (not a known name or an existing file)")
    return gainfn.read_certificate(path).g


def emit(args, text: str) -> None:
    if getattr(args, "out", None) is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def write_manifest(args, argv: list[str]) -> Optional[Path]:
    out = getattr(args, "out", None)
    if out is None:
        return None
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if not k.startswith("_")}
    doc = {"tool": "stochmatch", "version": __version__, "argv": argv, "config": cfg, "seed": cfg.get("seed")}
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _render(args, doc: dict, rows: Optional[list[dict]] = None) -> str:
    if args.format == "csv":
        return _table_csv(rows if rows is not None else [doc])
    return _json_text(doc)


# -- commands ----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.format == "csv":
        raise UsageError("instances are JSON only")
    inst = load_instance(args)
    if args.out is None:
        sys.stdout.write(json.dumps(instance_to_dict(inst)) + "\n")
    else:
        write_instance(inst, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    seed = _need_seed(args)
    inst = load_instance(args)
    if args.alg == "balance_fractional":
        g = load_gain(args.gain, args.alg)
        draw = sample_draw(inst, seed, "budgets")
        trace = run_balance_fractional(inst, draw.budgets, g, args.delta)
        ledger = ledger_fractional(trace, inst, g)
    else:
        g = None if args.alg == "greedy" else load_gain(args.gain, args.alg)
        draw = sample_draw(inst, seed, "coins")
        trace, ledger = run_algorithm(args.alg, inst, draw, g)
    if args.format == "csv":
        if args.out is None:
            buf = io.StringIO()
            _trace_rows(trace, buf)
            sys.stdout.write(buf.getvalue())
        else:
            trace.write_csv(args.out)
        return EXIT_OK
    doc = {
        "alg": args.alg,
        "value": trace.value,
        "match": [[[u, x] for u, x in allocs] for allocs in trace.match],
        "load": trace.load.tolist(),
        "success_at": trace.success_at,
    }
    if ledger is not None:
        doc["alpha"] = ledger.alpha.tolist()
        doc["beta"] = ledger.beta.tolist()
    emit(args, _json_text(doc))
    return EXIT_OK


def _trace_rows(trace, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "matched_u", "fraction", "success_flag"])
    for v, allocs in enumerate(trace.match):
        if not allocs:
            w.writerow([v, -1, 0, 0])
        for u, x in allocs:
            w.writerow([v, u, fmt(float(x)), int(trace.success_at[u] == v)])
    w.writerow(["value", "", fmt(trace.value), ""])


def cmd_bench(args) -> int:
    inst = load_instance(args)
    algs = tuple(args.alg) if args.alg else bench.ALGORITHMS
    can_exact = inst.m <= bench.MAX_EXACT_M and inst.num_edges <= bench.MAX_EXACT_EDGES
    use_mc = args.mc or not can_exact
    seed = _need_seed(args) if use_mc else 0
    rep = bench.bench_report(inst, algs, args.trials, seed, args.jobs, exact=not use_mc)
    emit(args, rep.to_csv() if args.format == "csv" else rep.to_json() + "\n")
    return EXIT_OK


def cmd_duals(args) -> int:
    seed = _need_seed(args)
    inst = load_instance(args)
    g = load_gain(args.gain, args.alg)
    est = dualcheck.estimate_duals(inst, args.alg, g, args.trials, seed)
    check = dualcheck.check_reduced_feasibility if args.benchmark == "reduced" else dualcheck.check_config_feasibility
    rep = check(inst, est, args.gamma)
    emit(args, rep.to_csv() if args.format == "csv" else rep.to_json() + "\n")
    gap, se = est.conservation_gap()
    log.info("conservation gap %s (stderr %s)", fmt(gap), fmt(se))
    if rep.violations:
        w = rep.worst
        raise CheckFailed(f"{len(rep.violations)} dual constraint(s) violated beyond 3 stderr; worst u={w.u} S={list(w.S)}")
    return EXIT_OK


def cmd_gain(args) -> int:
    gc = args.gain_command
    if gc == "solve-ranking":
        rc = gainfn.solve_ranking_constant()
        doc = {"c": rc.c, "gamma": rc.gamma, "mu_low": rc.mu_low, "residual": rc.residual}
        emit(args, _render(args, doc))
        return EXIT_OK
    if gc == "balance-equal":
        doc = {"gamma": gainfn.balance_equal_gamma(), "ode_residual": gainfn.verify_balance_equal_ode(args.grid)}
        emit(args, _render(args, doc))
        return EXIT_OK
    if gc == "balance-general":
        state = gainfn.alternate_optimize(args.step, args.lmax, args.rounds, args.tail_points)
        min_slack = float(state.slacks().min())
        if args.out is not None:
            if args.format == "csv":
                state.write_slack_csv(args.out)
            else:
                state.write_json(args.out)
        if args.slack_out is not None:
            state.write_slack_csv(args.slack_out)
        summary = {"gamma": state.gamma, "lp_gamma": state.lp_gamma, "history": state.history, "min_slack": min_slack}
        sys.stdout.write(_json_text(summary) if args.format == "json" or args.out is not None else _table_csv([summary]))
        if args.min_gamma is not None and state.gamma < args.min_gamma:
            raise CheckFailed(f"certified gamma {fmt(state.gamma)} below {fmt(args.min_gamma)}")
        return EXIT_OK
    # verify
    if args.cert is not None:
        state = gainfn.read_certificate(args.cert)
        worst = gainfn.verify_certificate(state)
        doc = {"gamma": state.gamma, "min_slack": worst, "ok": worst >= -1e-8}
        emit(args, _render(args, doc))
        if not doc["ok"]:
            raise CheckFailed(f"certificate fails: min slack {fmt(worst)}")
        return EXIT_OK
    rows = builtin_checks()
    emit(args, _render(args, {"checks": rows}, rows))
    failed = [r["name"] for r in rows if not r["ok"]]
    if failed:
        raise CheckFailed("failed: " + ", ".join(failed))
    return EXIT_OK


def builtin_checks() -> list[dict]:
    rc = gainfn.solve_ranking_constant()
    rows = []
    ode = gainfn.verify_balance_equal_ode(1000)
    rows.append({"name": "balance_equal_ode_residual", "value": ode, "ok": ode <= 1e-6})
    rng = np.random.default_rng(0)
    star = max(abs(gainfn.star_constant(float(m)) - (1 - 1 / math.e)) for m in rng.random(100))
    rows.append({"name": "star_constant_error", "value": star, "ok": star <= 1e-12})
    fin = gainfn.ranking_final_inequality_min(rc.c)[0]
    rows.append({"name": "ranking_final_inequality_min", "value": fin, "ok": fin >= rc.gamma - 1e-9})
    for n in (1, 2, 3):
        for mu0 in (0.0, 0.2):
            res = gainfn.brute_min_f(n, 21, mu0)
            slack = gainfn.f_gradient_bound(n, mu0) * 0.5 / 20
            ok = res.all_equal and res.value >= 0.572 - slack
            rows.append({"name": f"brute_min_f_n{n}_mu0_{mu0}", "value": res.value, "ok": ok})
    return rows


def cmd_reproduce(args) -> int:
    if args.target == "table1-constants":
        rc = gainfn.solve_ranking_constant()
        state = gainfn.alternate_optimize(args.step, args.lmax, args.rounds)
        got = [rc.gamma, gainfn.balance_equal_gamma(), state.gamma, gainfn.star_constant(0.5)]
        rows = [
            {"result": name, "reference": ref, "computed": val, "ok": val >= ref - 1e-3 if ref == 0.611 else val >= ref}
            for (name, ref), val in zip(TABLE1, got)
        ]
        emit(args, _render(args, {"rows": rows}, rows))
        if not all(r["ok"] for r in rows):
            raise CheckFailed("a computed constant falls below its reference value")
        return EXIT_OK
    seed = _need_seed(args)
    inst = gen_upper_triangular(args.k, args.p)
    sopt = bench.s_opt_value(inst)
    mlp = bench.matching_lp_value(inst)
    bal, bal_se = bench.mc_alg_value(inst, "balance_equal", args.trials, seed, args.jobs)
    rnk, rnk_se = bench.mc_alg_value(inst, "ranking", args.trials, seed, args.jobs)
    rows = [
        {"ratio": "balance_equal/s_opt", "value": bal / sopt, "stderr": bal_se / sopt, "threshold": SOFT_BALANCE_VS_SOPT},
        {"ratio": "ranking/matching_lp", "value": rnk / mlp, "stderr": rnk_se / mlp, "threshold": SOFT_RANKING_VS_OPT},
    ]
    for r in rows:
        r["ok"] = r["value"] >= r["threshold"]
    emit(args, _render(args, {"k": args.k, "p": args.p, "rows": rows}, rows))
    bad = [r for r in rows if not r["ok"]]
    if bad:
        msg = "; ".join(f"{r['ratio']} = {fmt(r['value'])} < {r['threshold']}" for r in bad)
        raise CheckFailed(f"soft threshold missed ({msg}); finite p deviates from the infinitesimal-regime guarantees")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "bench": cmd_bench, "duals": cmd_duals, "gain": cmd_gain,
            "reproduce": cmd_reproduce}


def _setup_logging() -> None:
    level = os.environ.get("STOCHMATCH_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "warn"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run_command(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if args.command == "replay":
            doc = json.loads(Path(args.manifest).read_text())
            return run_command(doc["argv"])
        code = COMMANDS[args.command](args)
        manifest = write_manifest(args, argv)
        if manifest is not None:
            log.info("manifest written to %s", manifest)
        return code
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        manifest = write_manifest(args, argv)
        return EXIT_CHECK
    except (UsageError, InstanceError, SimulationError, bench.BenchError, dualcheck.DualCheckError,
            lpcore.LpError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
