import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from replanvlm import bench
from replanvlm.errors import ConfigError, ReplanError
from replanvlm.gateway import BackendConfig
from replanvlm.world import WorldFaultSpec

logger = logging.getLogger("replanvlm")

# dash-free spellings of the variant names
VARIANT_ALIASES = {"no-internal": "-internal", "no-external": "-external", "no-both": "-both"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", default=None, help="task id 1-7, a comma list, or 'all'")
    p.add_argument("--rounds", type=int, default=None, help="episodes per task (default 10)")
    p.add_argument("--backend", choices=("oracle", "scripted", "remote"), default=None)
    p.add_argument("--replay-table", default=None, help="digest -> response JSON for the scripted backend")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--config", default=None, help="suite config JSON")
    p.add_argument("--out", default=None, help="directory for episode logs and metric tables")
    p.add_argument(
        "--variant", choices=tuple(bench.VARIANTS) + tuple(VARIANT_ALIASES), default=None,
        help="engine variant: full, no-internal, no-external or no-both (also --variant=-internal)",
    )
    p.add_argument("--variant-instruction", type=int, default=None, help="use the scenario's Nth alternative instruction")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--format", choices=bench.FORMATS, default="text", help="table printed to stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="replanvlm", description="Closed-loop planning benchmark over a simulated tabletop")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run the task suite"))
    _add_common(sub.add_parser("ablate", help="run the four engine variants and the single-shot baseline"))
    _add_common(sub.add_parser("baseline", help="one round, no checks"))
    inject = sub.add_parser("inject", help="inject one world fault per episode")
    _add_common(inject)
    inject.add_argument("--fault", choices=tuple(bench.FAULT_NAMES), default="grip-slip")
    inject.add_argument("--at-step", default="first", help="'first' or a step index of the canonical trace")
    rp = sub.add_parser("replay", help="re-run a logged episode from its transcript")
    rp.add_argument("--log", required=True)
    rp.add_argument("--episode", type=int, default=0)
    rp.add_argument("--config", default=None)
    crit = sub.add_parser("criteria", help="print the task catalog")
    _add_common(crit)
    crit.add_argument("--measure", action="store_true", help="run the suite and add the measured mean MS")
    return ap


def suite_config(args) -> bench.SuiteConfig:
    cfg = bench.SuiteConfig.load(args.config) if args.config else bench.SuiteConfig()
    engine = cfg.engine
    if args.backend or args.replay_table:
        kind = args.backend or engine.backend.kind
        backend = BackendConfig(kind=kind, replay_path=args.replay_table or engine.backend.replay_path,
                                faults=engine.backend.faults if kind == "oracle" else BackendConfig().faults)
        engine = replace(engine, backend=backend)
    if args.variant:
        engine = engine.with_variant(VARIANT_ALIASES.get(args.variant, args.variant))
    changes = {"engine": engine}
    if args.task is not None:
        changes["tasks"] = bench.parse_tasks(args.task)
    for name in ("rounds", "seed", "out", "workers"):
        if getattr(args, name) is not None:
            changes[name] = getattr(args, name)
    if args.variant_instruction is not None:
        changes["instruction_variant"] = args.variant_instruction
    return replace(cfg, **changes)


def _complete(tables) -> bool:
    return all(t.backend_failures == 0 for t in tables)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "criteria":
            cfg = suite_config(args)
            tasks = [bench.load_task(t, cfg.instruction_variant) for t in cfg.tasks]
            measured = bench.run_suite(tasks, cfg) if args.measure else None
            if cfg.out:
                for fmt, ext in (("text", "txt"), ("csv", "csv"), ("json", "json")):
                    bench.export_criteria(tasks, Path(cfg.out) / f"criteria.{ext}", fmt, measured)
            sys.stdout.write(bench.render_criteria(tasks, args.format, measured))
            return 0 if measured is None or _complete([measured]) else 1
        if args.command == "replay":
            cfg = bench.SuiteConfig.load(args.config) if args.config else None
            rec, same = bench.replay(args.log, args.episode, cfg)
            print(json.dumps({"episode": args.episode, "task": rec.task_id, "outcome": rec.outcome,
                              "success": rec.success, "identical": same}, indent=2))
            return 0 if same else 1
        cfg = suite_config(args)
        if args.command == "run":
            tables = [bench.run_suite(None, cfg)]
        elif args.command == "baseline":
            tables = [bench.run_baseline(None, cfg)]
        elif args.command == "inject":
            kind = bench.FAULT_NAMES[args.fault]
            at = None if args.at_step == "first" else args.at_step
            try:
                at = None if at is None else int(at)
            except ValueError:
                raise ConfigError(f"--at-step must be 'first' or an integer, got {args.at_step!r}")
            spec = WorldFaultSpec(kind, at_step=at, probability=None if at is not None else 0.0)
            tables = [bench.run_error_correction(None, spec, cfg)]
        else:
            results = bench.run_ablation(None, cfg, baseline=True)
            tables = list(results.values())
            if args.format == "text":
                sys.stdout.write(bench.comparison_text(results))
                return 0 if _complete(tables) else 1
        for t in tables:
            sys.stdout.write(bench.render(t, args.format))
        return 0 if _complete(tables) else 1
    except ReplanError as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
