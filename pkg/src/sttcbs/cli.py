"""Command-line front end: gen, solve, validate, bench.

Exit codes: 0 success, 1 validation FAIL, 2 usage or invalid input,
3 node budget exhausted.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .conflicts import detect_conflicts
from .instance import InstanceError, generate_grid, load_instance, save_instance
from .prob import DEFAULT_QUADRATURE
from .search import BudgetExhausted, Mode, SolverConfig, load_solution, save_solution, solve
from .sim import estimate_global_prob, estimate_pairwise_prob, estimate_record

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3

BENCH_HEADER = [
    "instance", "seed", "rows", "cols", "agents", "epsilon", "dt", "mode",
    "exp_cost", "nom_cost", "ms", "ct_nodes", "mc_global_p", "mc_se", "status",
]


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(
            epsilon=args.epsilon,
            dt=args.dt,
            use_binary_search=args.binary_search,
            bs_time_tol=args.bs_tol,
            node_budget=args.budget,
            mode=Mode(args.mode),
            bypass=not args.no_bypass,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# gen -------------------------------------------------------------------------------


def cmd_gen(args) -> int:
    inst = generate_grid(args.rows, args.cols, args.agents, args.seed, args.edge_time, args.shape, args.lam)
    save_instance(inst, args.out)
    print(f"wrote {args.out}: {args.rows}x{args.cols} grid, {args.agents} agents")
    return EXIT_OK


# solve -----------------------------------------------------------------------------


def cmd_solve(args) -> int:
    config = _config(args)
    inst = load_instance(args.instance)
    try:
        sol = solve(inst, config)
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc} (best open cost {exc.best_cost})", file=sys.stderr)
        return EXIT_BUDGET
    if args.out:
        save_solution(sol, args.out)
    print(f"cost={sol.cost!r} max_p={sol.max_pair_prob!r} nodes={sol.stats['expanded']} ms={round(sol.stats['wall_ms'])}")
    return EXIT_OK


# validate --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    data, paths = load_solution(inst, args.solution)
    eps = args.epsilon if args.epsilon is not None else data.get("stats", {}).get("epsilon")
    if eps is None:
        raise UsageError("no --epsilon given and the solution does not record one")
    cfg = DEFAULT_QUADRATURE
    found = detect_conflicts(inst, paths, cfg, floor=cfg.abs_tol)
    worst = found[0] if found else None
    p_max = worst.probability if worst else 0.0
    verdict = "PASS" if p_max <= eps + args.tol else "FAIL"
    print(f"max_p={p_max!r} epsilon={eps!r} {verdict}")
    for c in found:
        if c.probability <= eps + args.tol:
            break
        print(f"  agents {c.a1},{c.a2} {c.kind} at {c.element}: p={c.probability!r}")
    if args.mc:
        if worst is None:
            print("mc: no element with probability above quadrature tolerance")
        else:
            est = estimate_pairwise_prob(inst, paths, (worst.a1, worst.a2), worst.element, args.mc, args.seed)
            ok = est.agrees_with(p_max)
            print(json.dumps(estimate_record((worst.a1, worst.a2), worst.element, est)))
            print(f"mc: analytic={p_max!r} mc={est.p!r} se={est.se!r} {'AGREE' if ok else 'DISAGREE'}")
        glob = estimate_global_prob(inst, paths, args.mc, args.seed)
        print(f"mc: global_p={glob.p!r} se={glob.se!r}")
    return EXIT_OK if verdict == "PASS" else EXIT_FAIL


# bench -----------------------------------------------------------------------------


def _parse_list(text: str, conv, what: str) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError(f"empty {what} list")
    try:
        return [conv(t) for t in items]
    except ValueError:
        raise UsageError(f"bad {what} list: {text!r}") from None


def _grid(text: str) -> tuple[int, int]:
    r, _, c = text.lower().partition("x")
    return int(r), int(c)


def _seeds(text: str) -> list[int]:
    out = []
    for part in _parse_list(text, str, "seed"):
        lo, dash, hi = part.partition("-")
        out.extend(range(int(lo), int(hi) + 1) if dash else [int(lo)])
    return out


def _bench_row(job) -> list[str]:
    rows, cols, agents, seed, eps, mode, args = job
    name = f"{rows}x{cols}-a{agents}-s{seed}"
    rec = {"instance": name, "seed": seed, "rows": rows, "cols": cols, "agents": agents,
           "epsilon": repr(eps) if mode == "stt" else "", "dt": repr(args["dt"]), "mode": mode}
    rec.update(exp_cost="", nom_cost="", ms="", ct_nodes="", mc_global_p="", mc_se="")
    try:
        inst = generate_grid(rows, cols, agents, seed)
        config = SolverConfig(
            epsilon=eps, dt=args["dt"], use_binary_search=args["binary_search"], node_budget=args["budget"], mode=Mode(mode),
            bypass=args["bypass"],
        )
        sol = solve(inst, config)
    except BudgetExhausted as exc:
        rec.update(ct_nodes=exc.stats["expanded"], status="budget")
        if args["timing"]:
            rec["ms"] = round(exc.stats["wall_ms"])
        return [str(rec[k]) for k in BENCH_HEADER]
    except (InstanceError, ValueError) as exc:
        rec["status"] = "error: " + str(exc).replace(",", ";")
        return [str(rec[k]) for k in BENCH_HEADER]
    rec.update(exp_cost=repr(sol.cost), nom_cost=repr(sol.nominal_cost), ct_nodes=sol.stats["expanded"], status="ok")
    if args["timing"]:
        rec["ms"] = round(sol.stats["wall_ms"])
    if args["mc"]:
        est = estimate_global_prob(inst, sol.paths, args["mc"], seed)
        rec.update(mc_global_p=repr(est.p), mc_se=repr(est.se))
    return [str(rec[k]) for k in BENCH_HEADER]


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get("STTCBS_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"STTCBS_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def cmd_bench(args) -> int:
    grids = _parse_list(args.grids, _grid, "grid")
    agents = _parse_list(args.agents, int, "agent count")
    epsilons = _parse_list(args.epsilons, float, "epsilon")
    modes = _parse_list(args.modes, str, "mode")
    seeds = _seeds(args.seeds)
    for m in modes:
        if m not in ("stt", "cbs"):
            raise UsageError(f"unknown mode {m!r}")
    for e in epsilons:
        if not 0.0 < e < 1.0:
            raise UsageError(f"epsilon out of range (0, 1): {e}")
    shared = {"dt": args.dt, "binary_search": args.binary_search, "bypass": not args.no_bypass, "budget": args.budget,
              "mc": args.mc, "timing": not args.no_timing}
    jobs = []
    for (r, c) in grids:
        for a in agents:
            for s in seeds:
                for m in modes:
                    # The baseline ignores epsilon, so it runs once per instance with the column blank.
                    for e in (epsilons if m == "stt" else epsilons[:1]):
                        jobs.append((r, c, a, s, e, m, shared))
    workers = min(workers_from_env(), len(jobs))
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        out.flush()
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                rows = ex.map(_bench_row, jobs)  # yields in job order
                for row in rows:
                    w.writerow(row)
                    out.flush()
        else:
            for job in jobs:
                w.writerow(_bench_row(job))
                out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# parser ----------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _solver_flags(p: argparse.ArgumentParser, epsilon_default: float | None = 0.01) -> None:
    p.add_argument("--epsilon", type=float, default=epsilon_default, help="pairwise conflict probability threshold")
    p.add_argument("--dt", type=float, default=0.1, help="release-time step (seconds)")
    p.add_argument("--binary-search", action="store_true", help="bisect release times instead of stepping")
    p.add_argument("--bs-tol", type=float, default=1e-3, help="bisection time tolerance (seconds)")
    p.add_argument("--budget", type=_positive_int, default=5000, help="maximum constraint-tree expansions")
    p.add_argument("--no-bypass", action="store_true", help="always split on a conflict, even when a child is as cheap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sttcbs", description="Multi-agent path finding with gamma-distributed delays.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random grid instance")
    g.add_argument("--rows", type=_positive_int, required=True)
    g.add_argument("--cols", type=_positive_int, required=True)
    g.add_argument("--agents", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--lam", type=float, default=5.0, help="delay rate (default 5)")
    g.add_argument("--shape", type=float, default=1.0, help="delay shape at every node (default 1)")
    g.add_argument("--edge-time", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("instance")
    _solver_flags(s)
    s.add_argument("--mode", choices=["stt", "cbs"], default="stt")
    s.add_argument("--out", help="solution JSON path")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check a solution against a probability threshold")
    v.add_argument("instance")
    v.add_argument("solution")
    v.add_argument("--epsilon", type=float, default=None, help="threshold (default: the one recorded in the solution)")
    v.add_argument("--tol", type=float, default=2e-6, help="slack on the threshold for quadrature error")
    v.add_argument("--mc", type=int, default=0, metavar="N", help="add a Monte Carlo cross-check with N rollouts")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="sweep grids, agent counts, thresholds and seeds; write CSV")
    b.add_argument("--grids", default="10x10", help="comma list like 10x10,10x20")
    b.add_argument("--agents", default="10", help="comma list of agent counts")
    b.add_argument("--epsilons", default="0.1,0.001,1e-05", help="comma list of thresholds")
    b.add_argument("--seeds", default="0-4", help="comma list of seeds or ranges like 0-4")
    b.add_argument("--modes", default="stt", help="comma list of stt, cbs")
    b.add_argument("--dt", type=float, default=0.1)
    b.add_argument("--binary-search", action="store_true")
    b.add_argument("--budget", type=_positive_int, default=5000)
    b.add_argument("--no-bypass", action="store_true")
    b.add_argument("--mc", type=int, default=0, metavar="N", help="rollouts for the global conflict estimate")
    b.add_argument("--no-timing", action="store_true", help="leave the ms column empty so reruns are byte-identical")
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except InstanceError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except KeyError as exc:
        _err(f"malformed solution: missing {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
