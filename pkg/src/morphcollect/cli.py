"""Operator command line: imports, exports, training, simulation, serving.

Machine-readable output goes to stdout, diagnostics to stderr. Exit codes:
0 success, 2 usage error, 1 anything else. Seeds are mandatory for simulate
and train so runs are reproducible.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .domain import clone_variety
from .errors import MorphError, UsageError
from .ioformats import (
    MATERIAL_KINDS,
    export_materials,
    export_unimorph,
    import_materials,
    material_filename,
)
from .storage import Repository


def _repo_from(args) -> Repository:
    config = load_config(args.config) if args.config else AppConfig()
    database = args.database or config.database
    return Repository(database)


def _variety_id(repo: Repository, name: str, create: bool = False) -> int:
    for v in repo.list_varieties():
        if v.name == name:
            return v.id
    if create:
        return repo.add_variety(name)
    raise UsageError(f"no variety named {name!r}")


def cmd_import(args) -> int:
    repo = _repo_from(args)
    vid = _variety_id(repo, args.variety, create=True)
    document = Path(args.file).read_bytes()
    results = import_materials(repo, vid, {args.kind: document})
    count, errors = results[args.kind]
    print(f"{args.kind}\t{count}")
    for e in errors:
        print(f"line {e.line}: {e.reason}", file=sys.stderr)
    return 0 if not errors else 1


def cmd_export(args) -> int:
    repo = _repo_from(args)
    vid = _variety_id(repo, args.variety)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.format == "unimorph":
        path = out_dir / f"{args.variety}.unimorph.tsv"
        path.write_text(export_unimorph(repo, vid), encoding="utf-8")
        print(path)
    else:
        for kind, doc in export_materials(repo, vid).items():
            path = out_dir / material_filename(args.variety, kind)
            path.write_text(doc, encoding="utf-8")
            print(path)
    return 0


def cmd_blank_tables(args) -> int:
    from .patterns import blank_table

    repo = _repo_from(args)
    vid = _variety_id(repo, args.variety)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    structures = repo.list_structures(vid)
    if args.structure:
        structures = [s for s in structures if s.name == args.structure]
        if not structures:
            raise UsageError(f"no structure named {args.structure!r}")
    layers = repo.list_layers(vid)
    for structure in structures:
        lemmas = [
            l for l in repo.list_lemmas(vid)
            if l.inflection_class == structure.inflection_class
        ]
        path = out_dir / f"{args.variety}.blank-{structure.name}.tsv"
        path.write_text(blank_table(structure, layers, lemmas), encoding="utf-8")
        print(path)
    return 0


def cmd_clone_variety(args) -> int:
    repo = _repo_from(args)
    vid = _variety_id(repo, args.source)
    new_id = clone_variety(repo, vid, args.name)
    print(new_id)
    return 0


def cmd_train(args) -> int:
    from .api import build_workflow

    config = load_config(args.config) if args.config else AppConfig()
    if args.database:
        config.database = args.database
    config.train_seed = args.seed
    repo = Repository(config.database)
    flow = build_workflow(repo, config)
    vid = _variety_id(repo, args.variety)
    examples = flow.training_examples(vid)
    if len(examples) < 2:
        print(f"not enough verified data ({len(examples)} examples)", file=sys.stderr)
        return 1
    job = flow.force_retrain(vid)
    if job is None:
        print("a training job is already running", file=sys.stderr)
        return 1
    print(f"examples\t{job.example_count}")
    print(f"final_loss\t{job.loss_curve[-1]:.6f}")
    if args.model_out:
        from .neural import save_model

        model = flow.models.get(vid)
        with open(args.model_out, "wb") as fp:
            save_model(model, fp)
        print(f"model\t{args.model_out}")
    return 0


def cmd_simulate(args) -> int:
    from .neural import TrainConfig
    from .simulate import SimulationRun, load_gold_cells, simulate

    gold = Path(args.gold).read_bytes()
    cells = load_gold_cells(gold)
    patterns = {}
    rewrites = []
    if args.patterns:
        for line in Path(args.patterns).read_text(encoding="utf-8").splitlines()[1:]:
            if line:
                features, template = line.split("\t")[:2]
                patterns[features] = template
    if args.rewrites:
        for line in Path(args.rewrites).read_text(encoding="utf-8").splitlines()[1:]:
            if line:
                pattern, replacement = line.split("\t")[:2]
                rewrites.append((pattern, replacement))
    run = SimulationRun(
        cells=cells,
        policy=args.policy,
        seed=args.seed,
        round_size=args.round_size,
        budget=args.budget,
        patterns=patterns,
        rewrites=tuple(rewrites),
        use_rules=bool(patterns),
        use_neural=not args.no_neural,
        n_train=args.n_train,
        delta_n=args.delta_n,
        train=TrainConfig(hidden_size=args.hidden, embed_size=args.hidden),
    )
    result = simulate(run)
    table = result.to_tsv()
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(table)
    return 0


def cmd_serve(args) -> int:
    from .api import serve

    config = load_config(args.config) if args.config else AppConfig()
    if args.database:
        config.database = args.database
    if args.port:
        config.port = args.port
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphcollect",
        description="Collaborative inflectional morphology collection",
    )
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--database", help="sqlite database path (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import", help="import a materials TSV")
    p.add_argument("--variety", required=True)
    p.add_argument("--kind", required=True, choices=MATERIAL_KINDS)
    p.add_argument("--file", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("export", help="export materials or UniMorph data")
    p.add_argument("--variety", required=True)
    p.add_argument("--format", choices=["unimorph", "materials"], default="materials")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("blank-tables", help="write printable empty paradigm tables")
    p.add_argument("--variety", required=True)
    p.add_argument("--structure", help="only this structure")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_blank_tables)

    p = sub.add_parser("clone-variety", help="deep-copy a variety's materials")
    p.add_argument("--source", required=True)
    p.add_argument("--name", required=True)
    p.set_defaults(func=cmd_clone_variety)

    p = sub.add_parser("train", help="force retraining of the neural inflector")
    p.add_argument("--variety", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model-out", help="also write the model file (CMNN)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="offline elicitation simulation on gold data")
    p.add_argument("--gold", required=True, help="UniMorph TSV gold dataset")
    p.add_argument("--policy", choices=["uncertainty", "random", "priority"], required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--round-size", type=int, default=100)
    p.add_argument("--patterns", help="TSV features<TAB>template")
    p.add_argument("--rewrites", help="TSV pattern<TAB>replacement, ordered")
    p.add_argument("--no-neural", action="store_true")
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--delta-n", type=int, default=100)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--out", help="write the round table here instead of stdout")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MorphError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
