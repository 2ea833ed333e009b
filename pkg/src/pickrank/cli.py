"""``pickrank`` command line: scenes, data collection, training, A/B runs and reports."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .errors import PickrankError

log = logging.getLogger("pickrank")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args) -> RunConfig:
    return load_config(args.config)


def cmd_scenes_gen(args) -> int:
    from .harness import scene_seed
    from .render import render_svg
    from .scene import generate_scene, segment_scene

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = scene_seed(cfg.seed, i)
        s = generate_scene(seed, cfg.scene)
        s.save(out / f"scene_{i:04d}.jsonl")
        if args.svg:
            segments, _ = segment_scene(s)
            (out / f"scene_{i:04d}.svg").write_text(render_svg(s, segments), encoding="utf-8")
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def cmd_collect(args) -> int:
    from .harness import ExperimentArm, collect_training_data

    cfg = _config(args)
    arm = ExperimentArm.parse(args.arm or cfg.collect_arm)
    n = args.inducts or cfg.collect_inducts
    t0 = time.perf_counter()
    count = collect_training_data(n, arm, cfg.context, cfg.seed, args.out, jobs=args.jobs)
    log.info("collected in %.1f s", time.perf_counter() - t0)
    print(f"wrote {count} records from {n} {arm.name} inducts to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .features import FEATURE_NAMES
    from .gbdt import feature_importance, train_ensemble
    from .harness import load_dataset

    cfg = _config(args)
    X, y = load_dataset(args.data)
    t0 = time.perf_counter()
    ens = train_ensemble(X, y, cfg.gbdt.params, cfg.gbdt.tree_counts, cfg.gbdt.seeds)
    log.info("trained in %.1f s", time.perf_counter() - t0)
    out = Path(args.out)
    ens.save(out)
    imp = np.mean([list(feature_importance(m).values()) for m in ens.members], axis=0)
    lines = ["feature\timportance"] + [f"{name}\t{v:.6f}" for name, v in zip(FEATURE_NAMES, imp)]
    (out / "feature_importance.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"trained {len(ens.members)} members on {len(y)} records ({y.mean():.4f} success); wrote {out}")
    return EXIT_OK


def cmd_ab(args) -> int:
    from .gbdt import GbdtEnsemble
    from .harness import run_ab

    cfg = _config(args)
    arms = cfg.experiment_arms
    model = GbdtEnsemble.load(args.model) if args.model else None
    n = args.inducts or cfg.inducts_per_arm
    echo = cfg.to_dict()
    echo["inducts_per_arm"] = n
    t0 = time.perf_counter()
    report = run_ab(arms, n, model, cfg.context, cfg.seed, jobs=args.jobs, config_echo=echo)
    log.info("A/B run in %.1f s", time.perf_counter() - t0)
    report.save(args.out)
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import AbReport

    report = AbReport.load(args.input)
    if args.json:
        sys.stdout.write(report.to_json())
        return EXIT_OK
    sys.stdout.write(report.table())
    if args.tests:
        print()
        for (a, b), (z, p) in report.pairwise.items():
            print(f"{a} vs {b}: z = {z:+.3f}, p = {p:.3g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    return EXIT_OK if selftest.run(args.seed) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pickrank", description="Pick ranking simulator, trainer and A/B harness.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    scenes = sub.add_parser("scenes", help="scene utilities")
    ssub = scenes.add_subparsers(dest="scenes_command", parser_class=_Parser, metavar="ACTION")
    ssub.required = True
    gen = ssub.add_parser("gen", help="generate seeded scenes")
    gen.add_argument("--config", help="run config (JSON); default: packaged config")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--count", type=int, default=10, help="number of scenes (default 10)")
    gen.add_argument("--svg", action="store_true", help="also write an SVG render per scene")
    gen.set_defaults(func=cmd_scenes_gen)

    col = sub.add_parser("collect", help="run inducts under one arm and log every attempt")
    col.add_argument("--config", help="run config (JSON); default: packaged config")
    col.add_argument("--arm", help="arm name, e.g. TopoZ-Random (default: config collect.arm)")
    col.add_argument("--out", required=True, help="dataset file (NDJSON)")
    col.add_argument("--inducts", type=int, help="override collect.n_inducts")
    col.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical for any value)")
    col.set_defaults(func=cmd_collect)

    tr = sub.add_parser("train", help="train the boosted-tree ensemble")
    tr.add_argument("--data", required=True, help="dataset file written by collect")
    tr.add_argument("--config", help="run config (JSON); default: packaged config")
    tr.add_argument("--out", required=True, help="model directory")
    tr.set_defaults(func=cmd_train)

    ab = sub.add_parser("ab", help="paired A/B run of every configured arm")
    ab.add_argument("--config", help="run config (JSON); default: packaged config")
    ab.add_argument("--model", help="model directory (required by learned arms)")
    ab.add_argument("--out", required=True, help="report directory")
    ab.add_argument("--inducts", type=int, help="override inducts_per_arm")
    ab.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical for any value)")
    ab.set_defaults(func=cmd_ab)

    rep = sub.add_parser("report", help="print a stored A/B report")
    rep.add_argument("--in", dest="input", required=True, help="report directory")
    rep.add_argument("--json", action="store_true", help="print the machine-readable report")
    rep.add_argument("--tests", action="store_true", help="also print pairwise z tests")
    rep.set_defaults(func=cmd_report)

    st = sub.add_parser("selftest", help="check production routines against slow oracles")
    st.add_argument("--seed", type=int, default=0, help="seed of the oracle cases (default 0)")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("PICKRANK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    for flag in ("jobs", "count", "inducts"):
        v = getattr(args, flag, None)
        if v is not None and v < 1:
            parser.print_usage(sys.stderr)
            print(f"pickrank: error: --{flag} must be >= 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, PickrankError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"pickrank: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
