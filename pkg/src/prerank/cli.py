"""Command-line surface.

Subcommands: gen-data, train, eval, export-embeddings, score, gradcheck,
losscheck. All randomness flows from --seed; every resolved setting is
echoed into the output directory so runs are diffable and reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .cascade import attach_teacher_probs, generate_synthetic_world, split_dataset, train_teacher
from .checkpoint import CheckpointError
from .configio import apply_overrides, config_echo, load_config, resolve_configs
from .features import ConfigurationError, FeatureSchema, SchemaError, read_rows, write_rows
from .model import PreRankingModel, fit_bucketizers
from .serving import NotFoundError, OnlineScorer, StoreError, export_embeddings, load_store
from .trainer import Trainer, TrainingDiverged, evaluate_serving, load_model
from .verification import format_results, gradient_suite, loss_pins

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_BAD_DATA = 5
EXIT_NOT_FOUND = 6
EXIT_CHECK_FAILED = 7


def nonneg_int(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prerank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (flat key-value with sections)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value")
        p.add_argument("--seed", type=nonneg_int, default=0, help="seed for all randomness")

    p = sub.add_parser("gen-data", help="generate a synthetic funnel dataset")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-teacher", action="store_true", help="skip teacher training / soft labels")

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint via the serving path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("export-embeddings", help="batch-export tower embeddings to a store")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--side", choices=("user", "item"), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score items for a user from embedding stores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user-store", required=True)
    p.add_argument("--item-store", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--items", required=True, help="comma-separated item ids")
    p.add_argument("--out", help="write JSON lines here instead of stdout")

    p = sub.add_parser("gradcheck", help="finite-difference check every op, loss, and block")
    p.add_argument("--seeds", type=int, default=20)

    sub.add_parser("losscheck", help="evaluate losses on pinned hand-computed instances")

    return parser


def _load_configs(args):
    raw = load_config(args.config) if getattr(args, "config", None) else {}
    raw = apply_overrides(raw, getattr(args, "overrides", []))
    return resolve_configs(raw)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def read_entities(path: Path, id_key: str) -> list[tuple[int, dict]]:
    entities = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            entities.append((int(obj[id_key]), obj["features"]))
    return entities


def cmd_gen_data(args) -> int:
    resolved = _load_configs(args)
    world_cfg = resolved["world"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    world = generate_synthetic_world(world_cfg, args.seed)
    splits = split_dataset(world, args.seed)
    if not args.no_teacher:
        teacher = train_teacher(
            [r for r in splits["train"] if r.stage == "impression"], args.seed, resolved["teacher"]
        )
        splits["train"] = attach_teacher_probs(splits["train"], teacher)
        splits["val"] = attach_teacher_probs(splits["val"], teacher)

    (out / "world.json").write_text(world.to_json(), encoding="utf-8")
    world.schema().save(out / "schema.txt")
    with open(out / "users.jsonl", "w", encoding="utf-8") as fh:
        for uid in range(world_cfg.n_users):
            fh.write(json.dumps({"user_id": uid, "features": world.user_features(uid)}, sort_keys=True) + "\n")
    with open(out / "items.jsonl", "w", encoding="utf-8") as fh:
        for iid in range(world_cfg.n_items):
            fh.write(json.dumps({"item_id": iid, "features": world.item_features(iid)}, sort_keys=True) + "\n")
    for split, rows in splits.items():
        write_rows(out / f"{split}.jsonl", rows)

    manifest = config_echo(
        resolved,
        extra={
            "command": "gen-data",
            "seed": args.seed,
            "teacher": not args.no_teacher,
            "rows": {k: len(v) for k, v in splits.items()},
        },
    )
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    print(f"wrote dataset to {out} (train/val/test rows: "
          f"{len(splits['train'])}/{len(splits['val'])}/{len(splits['test'])})")
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = _load_configs(args)
    data = Path(args.data_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    schema = FeatureSchema.load(_require(data / "schema.txt", "schema"))
    train_rows = read_rows(_require(data / "train.jsonl", "training rows"))
    val_rows = read_rows(_require(data / "val.jsonl", "validation rows"))
    catalog = read_entities(_require(data / "items.jsonl", "item catalog"), "item_id")

    train_cfg = dataclasses.replace(resolved["train"], seed=args.seed)
    bucketizers = fit_bucketizers(schema, train_rows)
    model = PreRankingModel.build(schema, bucketizers, resolved["model"], args.seed)
    trainer = Trainer(
        model,
        train_rows,
        train_cfg,
        resolved["sampling"],
        resolved["loss"],
        val_rows,
        catalog,
    )
    summary = trainer.run()
    trainer.save(out / "checkpoint.bin")
    (out / "history.json").write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    echo = config_echo(resolved, extra={"command": "train", "seed": args.seed})
    (out / "config-echo.json").write_text(json.dumps(echo, sort_keys=True, indent=2), encoding="utf-8")
    best = summary["best_ndcg"]
    print(f"trained {summary['steps']} steps; best validation ndcg "
          f"{best if best is None else round(best, 4)} at step {summary['best_step']}")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = Path(args.data_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, meta = load_model(_require(Path(args.checkpoint), "checkpoint"))
    rows = read_rows(_require(data / f"{args.split}.jsonl", f"{args.split} rows"))
    users = read_entities(_require(data / "users.jsonl", "user catalog"), "user_id")
    items = read_entities(_require(data / "items.jsonl", "item catalog"), "item_id")

    eval_uids = {r.user_id for r in rows}
    user_store_path = out / "users.emb"
    item_store_path = out / "items.emb"
    export_embeddings(model, [(u, f) for u, f in users if u in eval_uids], "user", user_store_path)
    export_embeddings(model, items, "item", item_store_path)
    scorer = OnlineScorer(model.cross, model.head, load_store(user_store_path), load_store(item_store_path))
    report = evaluate_serving(scorer, rows, [i for i, _ in items], args.k)

    (out / f"report-{args.split}.json").write_text(report.to_json(), encoding="utf-8")
    print(report.to_table())
    print(f"report: {out / f'report-{args.split}.json'}")
    return EXIT_OK


def cmd_export(args) -> int:
    data = Path(args.data_dir)
    model, _ = load_model(_require(Path(args.checkpoint), "checkpoint"))
    key = "user_id" if args.side == "user" else "item_id"
    entities = read_entities(_require(data / f"{args.side}s.jsonl", f"{args.side} catalog"), key)
    export_embeddings(model, entities, args.side, args.out)
    print(f"exported {len(entities)} {args.side} embeddings to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    model, _ = load_model(_require(Path(args.checkpoint), "checkpoint"))
    scorer = OnlineScorer(
        model.cross,
        model.head,
        load_store(_require(Path(args.user_store), "user store")),
        load_store(_require(Path(args.item_store), "item store")),
    )
    item_ids = [int(tok) for tok in args.items.split(",") if tok.strip()]
    logits = scorer.score(args.user, item_ids)
    lines = [
        json.dumps({"user_id": args.user, "item_id": iid, "logit": float(z)}, sort_keys=True)
        for iid, z in zip(item_ids, logits)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rows = gradient_suite(seeds=args.seeds)
    print(format_results(rows, ("target", "max rel err", "status")))
    if all(r.ok for r in rows):
        print(f"all {len(rows)} targets pass at {rows[0].bound:g} over {args.seeds} seeds")
        return EXIT_OK
    return EXIT_CHECK_FAILED


def cmd_losscheck(_args) -> int:
    pins = loss_pins()
    print(format_results(pins, ("pinned instance", "abs err", "status")))
    if all(p.ok for p in pins):
        print(f"all {len(pins)} pinned instances reproduce within tolerance")
        return EXIT_OK
    return EXIT_CHECK_FAILED


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-embeddings": cmd_export,
    "score": cmd_score,
    "gradcheck": cmd_gradcheck,
    "losscheck": cmd_losscheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (SchemaError, CheckpointError, StoreError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_BAD_DATA
    except NotFoundError as e:
        print(f"lookup error: {e}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except TrainingDiverged as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
