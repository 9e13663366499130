"""Command-line entry point: ``hexdrop <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .harness import (GapRecorder, EpisodeStats, aggregate, compare, dithering_curve, evaluate,
                      gap_grid, load_runs, rule_policy, run_episode, write_gap_csv)
from .hexgrid import HexGrid
from .laplace import LaplacianRepresentation, compare_exact, graph_training_pairs
from .policy import LEARNED_KINDS, RULE_KINDS, DropRelocator
from .terg import LaplacianView, RelocationGraph, dump_embedding_csv, exact_embedding, node_local_features


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _load_config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_plain) + "\n")


def cmd_simulate(args):
    cfg = _load_config(args)
    model = args.model or "random"
    if model not in RULE_KINDS:
        raise CliError(f"simulate runs rule policies {list(RULE_KINDS)}; use train/evaluate for {model!r}")
    scenario = cfg.scenario()
    out = _out(args)
    ticks = [int(t) for t in args.gap_ticks.split(",")] if args.gap_ticks else []
    recorder = GapRecorder(ticks)
    world = run_episode(rule_policy(model, args.seed), scenario, args.seed, record_log=True,
                        observer=recorder)
    world.write_log(out / "events.jsonl")
    stats = EpisodeStats.from_world(world)
    stats.check_identity()
    metrics = aggregate([stats]).to_dict()
    metrics.update(model=model, seed=args.seed, log_sha256=world.log_hash())
    _write_json(out / "metrics.json", metrics)
    if ticks:
        write_gap_csv(out / "gap.csv", gap_grid(recorder.snapshots, ticks), world.grid)
    return {"out": str(out), "served_rate": metrics["served_rate"]}


def cmd_train(args):
    cfg = _load_config(args)
    model = args.model or cfg.model
    if model not in LEARNED_KINDS:
        raise CliError(f"train expects a learned model {list(LEARNED_KINDS)}, got {model!r}")
    scenario = cfg.scenario()
    out = _out(args)
    est = cfg.estimator(model, args.seed).fit(scenario)
    est.save(out / "checkpoint")
    est.terg_.dump_csv(out / "terg.csv")
    est.log_.to_csv(out / "train_log.csv")
    metrics = evaluate(est, scenario, cfg.eval_days, cfg.eval_seeds).to_dict()
    metrics.update(model=model, seed=args.seed)
    _write_json(out / "metrics.json", metrics)
    return {"out": str(out), "options": len(est.drops_), "served_rate": metrics["served_rate"]}


def cmd_evaluate(args):
    cfg = _load_config(args)
    scenario = cfg.scenario()
    if args.checkpoint:
        policy = DropRelocator.load(args.checkpoint)
        model = policy.model
    else:
        model = args.model or cfg.model
        if model not in RULE_KINDS:
            raise CliError(f"evaluating {model!r} needs --checkpoint")
        policy = rule_policy(model, args.seed)
    seeds = [args.seed] if args.seed_given else cfg.eval_seeds
    metrics = evaluate(policy, scenario, cfg.eval_days, seeds).to_dict()
    metrics.update(model=model)
    out = _out(args)
    _write_json(out / "metrics.json", metrics)
    return {"out": str(out), "served_rate": metrics["served_rate"]}


def cmd_embed(args):
    cfg = _load_config(args)
    sim = cfg.sim_config()
    graph = RelocationGraph.load_csv(args.terg, bucket_width=sim.hour_ticks)
    if graph.n_nodes < 3:
        raise CliError(f"TERG has only {graph.n_nodes} nodes")
    grid = HexGrid(sim.grid)
    out = _out(args)
    A = graph.adjacency()
    X_nodes = node_local_features(graph, grid, sim.episode_ticks)
    D = min(args.components, graph.n_nodes - 1)
    rng = np.random.default_rng(args.seed)
    X, Xn, marg = graph_training_pairs(A, X_nodes, args.samples, rng, rho=args.rho)
    phi = LaplacianRepresentation(D, tuple(args.hidden), steps=args.steps,
                                  batch_size=args.batch_size, random_state=args.seed)
    phi.fit(X, Xn, marg)
    F = phi.transform(X_nodes)
    dump_embedding_csv(out / "embedding.csv", graph, F)
    lap = LaplacianView.from_adjacency(A)
    exact = exact_embedding(lap, D)
    dump_embedding_csv(out / "exact_embedding.csv", graph, exact.embedding)
    res = compare_exact(F, lap, n_components=D)
    summary = {"nodes": graph.n_nodes, "graph_components": len(exact.components), "n_components": D,
               "rank_correlation": res.correlation, "degenerate": res.degenerate,
               "final_loss": phi.loss_history_[-1]}
    _write_json(out / "embed.json", summary)
    return summary


def cmd_diag_dithering(args):
    policy = "random" if args.policy == "random" else int(args.policy)
    origin = tuple(int(v) for v in args.origin.split(","))
    curve = dithering_curve(policy, origin, args.max_ring, args.trials, args.seed)
    out = _out(args)
    with open(out / "dithering.csv", "w") as fh:
        fh.write("ring,probability\n")
        for n, p in enumerate(curve, 1):
            fh.write(f"{n},{p}\n")
    return {"curve": curve}


def cmd_report_compare(args):
    runs = {}
    for src in args.runs:
        p = Path(src)
        if p.is_dir() and (p / "metrics.json").exists():
            d = json.loads((p / "metrics.json").read_text())
            runs[d.get("model", p.name)] = d
        elif p.is_dir():
            runs.update(load_runs(p))
        elif p.exists():
            d = json.loads(p.read_text())
            runs[d.get("model", p.stem)] = d
        else:
            raise CliError(f"run not found: {src}")
    expected = args.expect.split(",") if args.expect else None
    report = compare(runs, expected, reference=args.reference)
    out = _out(args)
    report.to_csv(out / "compare.csv")
    (out / "compare.json").write_text(report.to_json() + "\n")
    (out / "compare.md").write_text(report.to_markdown())
    return {"rows": len(report.rows), "missing": report.missing}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--model", help="policy kind")

    p = _Parser(prog="hexdrop", description="Ride-hailing fleet relocation lab")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run a rule policy for one day")
    s.add_argument("--gap-ticks", help="comma-separated ticks for the demand-supply gap CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train a learned policy")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint or rule policy")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("embed", parents=[common], help="fit the neural embedding on a recorded TERG")
    s.add_argument("--terg", required=True, help="TERG edge CSV")
    s.add_argument("--components", type=int, default=8)
    s.add_argument("--hidden", type=int, nargs="+", default=[64, 32])
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--samples", type=int, default=20000)
    s.add_argument("--rho", choices=["buffer", "uniform"], default="uniform")
    s.set_defaults(func=cmd_embed)

    diag = sub.add_parser("diag", help="diagnostics")
    dsub = diag.add_subparsers(dest="diag_command", required=True, parser_class=_Parser)
    s = dsub.add_parser("dithering", parents=[common], help="ring-reach probabilities")
    s.add_argument("--policy", default="random", help="'random' or a constant action code 0-6")
    s.add_argument("--origin", default="0,0")
    s.add_argument("--max-ring", type=int, default=5)
    s.add_argument("--trials", type=int, default=100_000)
    s.set_defaults(func=cmd_diag_dithering)

    rep = sub.add_parser("report", help="reports")
    rsub = rep.add_subparsers(dest="report_command", required=True, parser_class=_Parser)
    s = rsub.add_parser("compare", parents=[common], help="Table-style model comparison")
    s.add_argument("runs", nargs="+", help="run directories or metrics JSON files")
    s.add_argument("--reference", default="dqn")
    s.add_argument("--expect", help="comma-separated models that must be present")
    s.set_defaults(func=cmd_report_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = 0
        result = args.func(args)
    except (CliError, ConfigError, ValueError, KeyError, OSError) as e:
        err = {"error": type(e).__name__, "message": str(e).strip("'\"")}
        print(json.dumps(err), file=sys.stderr)
        return 2 if isinstance(e, CliError) else 1
    print(json.dumps({"status": "ok", **result}, default=_plain))
    return 0


if __name__ == "__main__":
    sys.exit(main())
