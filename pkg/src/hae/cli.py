"""Command-line pipeline: generate, commute, train, eval, embed.

Every command writes a run manifest (tool version, seed, input hashes,
output paths) into its output directory before computing, and exits with
0 on success, 1 on usage/config errors, 2 on data errors, 3 on numeric
failures. Timestamps and timing live only in the manifest so all other
outputs are byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import RngStream, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .hin import SyntheticConfig, generate_synthetic_hin, load_hetero_graph, save_hetero_graph, split_labels
from .layers import ModelConfig, build_graph_inputs, build_stack
from .semantics import SemanticCache, binary_adjacency, parse_structure
from .train_eval import TrainConfig, evaluate_embeddings, extract_embeddings, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _info(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out_dir(args, out_dir: Path) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out_dir} is not empty (use --force to override)"
        )
    out_dir.mkdir(parents=True, exist_ok=True)


class Manifest:
    """Provenance record; written before computation, finalized after."""

    def __init__(self, command: str, seed: int | None, out_dir: Path, config: dict):
        self.path = out_dir / "manifest.json"
        self.data = {
            "tool": "hae",
            "version": __version__,
            "command": command,
            "seed": seed,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "config": config,
            "inputs": {},
            "outputs": [],
        }

    def add_inputs(self, *paths: Path) -> None:
        for p in paths:
            if p is not None and Path(p).is_file():
                self.data["inputs"][str(p)] = _sha256(Path(p))

    def write(self) -> None:
        _dump_json(self.data, self.path)

    def finish(self, outputs: list[Path], timing: dict) -> None:
        self.data["outputs"] = sorted(str(p) for p in outputs)
        self.data["timing"] = timing
        self.write()


def _load_dataset(dataset_dir: str | Path):
    d = Path(dataset_dir)
    nodes, edges, feats = d / "nodes.tsv", d / "edges.tsv", d / "features.tsv"
    for p in (nodes, edges):
        if not p.is_file():
            raise DataError(f"dataset file missing: {p}")
    return load_hetero_graph(nodes, edges, feats if feats.is_file() else None)


def _dataset_files(dataset_dir: str | Path) -> list[Path]:
    d = Path(dataset_dir)
    return [p for p in (d / "nodes.tsv", d / "edges.tsv", d / "features.tsv") if p.is_file()]


def cmd_generate(args) -> int:
    cfg_dict = _load_json(args.config)
    try:
        cfg = SyntheticConfig(**cfg_dict)
    except TypeError as e:
        raise ConfigError(f"invalid synthetic config: {e}") from e
    if args.seed is not None:
        cfg = SyntheticConfig(**{**cfg_dict, "seed": args.seed})
    cfg.validate()
    out_dir = Path(args.out)
    _prepare_out_dir(args, out_dir)
    manifest = Manifest("generate", cfg.seed, out_dir, cfg.__dict__)
    manifest.add_inputs(Path(args.config))
    manifest.write()
    started = time.perf_counter()
    g = generate_synthetic_hin(cfg)
    paths = save_hetero_graph(g, out_dir)
    manifest.data["output_hashes"] = {str(p): _sha256(p) for p in paths.values()}
    manifest.finish(list(paths.values()), {"wall_clock_seconds": time.perf_counter() - started})
    _info(args, f"wrote {len(paths)} dataset files to {out_dir}")
    return 0


def _write_triplets(mat: np.ndarray, path: Path) -> None:
    lines = ["i\tj\tvalue"]
    rows, cols = np.nonzero(mat)
    for r, c in zip(rows, cols):
        v = mat[r, c]
        text = str(int(v)) if float(v).is_integer() else f"{float(v):.17g}"
        lines.append(f"{r}\t{c}\t{text}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_commute(args) -> int:
    g = _load_dataset(args.dataset)
    if not args.structure:
        raise ConfigError("need at least one --structure")
    structures = [parse_structure(s, g.node_types) for s in args.structure]
    out_dir = Path(args.out)
    _prepare_out_dir(args, out_dir)
    manifest = Manifest(
        "commute", args.seed, out_dir, {"structures": [s.canonical() for s in structures]}
    )
    manifest.add_inputs(*_dataset_files(args.dataset))
    manifest.write()
    started = time.perf_counter()
    cache = SemanticCache(g)
    outputs = []
    target = structures[0].source_type
    counts_list = []
    for i, s in enumerate(structures):
        cm = cache.commuting(s)
        counts_list.append(cm)
        sim = cache.similarity(s)
        for kind, mat in (("counts", cm.counts), ("similarity", sim.values)):
            path = out_dir / f"{kind}_{i}.tsv"
            _write_triplets(mat, path)
            outputs.append(path)
    mask = binary_adjacency(counts_list).mask
    mask_path = out_dir / "mask.tsv"
    _write_triplets(mask, mask_path)
    outputs.append(mask_path)
    idmap_path = out_dir / "id_map.json"
    _dump_json(
        {
            "target_type": target,
            "ids": g.ids[target],
            "structures": [s.canonical() for s in structures],
        },
        idmap_path,
    )
    outputs.append(idmap_path)
    manifest.finish(outputs, {"wall_clock_seconds": time.perf_counter() - started})
    _info(args, f"wrote commuting matrices for {len(structures)} structures to {out_dir}")
    return 0


def _resolve_model_config(args, g) -> ModelConfig:
    cfg = ModelConfig.from_dict(_load_json(args.model_config)) if args.model_config else ModelConfig()
    if getattr(args, "structure", None):
        cfg.structures = list(args.structure)  # flags win over the config file
    for s in cfg.structures:
        parse_structure(s, g.node_types)
    return cfg


def cmd_train(args) -> int:
    g = _load_dataset(args.dataset)
    if g.labels is None:
        raise DataError("dataset has no labels; training needs a labeled target type")
    model_cfg = _resolve_model_config(args, g)
    train_cfg = TrainConfig.from_dict(_load_json(args.train_config)) if args.train_config else TrainConfig()
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_cfg.validate()
    out_dir = Path(args.out)
    _prepare_out_dir(args, out_dir)
    manifest = Manifest(
        "train",
        train_cfg.seed,
        out_dir,
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
    )
    manifest.add_inputs(*_dataset_files(args.dataset))
    if args.model_config:
        manifest.add_inputs(Path(args.model_config))
    if args.train_config:
        manifest.add_inputs(Path(args.train_config))
    manifest.write()
    started = time.perf_counter()

    inputs = build_graph_inputs(g, model_cfg.structures)
    split = split_labels(g, train_cfg.train_ratio, train_cfg.val_ratio, train_cfg.seed)
    stack = build_stack(
        model_cfg,
        feature_dim=inputs.features.shape[1],
        n_classes=g.n_classes(),
        n_structures=len(model_cfg.structures),
        rng=RngStream(train_cfg.seed),
    )
    _info(args, f"training {model_cfg.variant or model_cfg.layers} on {inputs.n_nodes} nodes")
    stack, report = train(stack, inputs, g.labels, split, train_cfg)

    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(stack.named_parameters(), ckpt_path)
    report_path = out_dir / "report.json"
    _dump_json(report.to_json_dict(), report_path)
    model_cfg_path = out_dir / "model_config.json"
    _dump_json(model_cfg.to_dict(), model_cfg_path)
    manifest.finish(
        [ckpt_path, report_path, model_cfg_path],
        {
            "wall_clock_seconds": report.wall_clock_seconds,
            "total_seconds": time.perf_counter() - started,
            "peak_rss_bytes": report.peak_rss_bytes,
        },
    )
    _info(args, f"best epoch {report.best_epoch}, wrote checkpoint to {ckpt_path}")
    return 0


def _load_model_config(args) -> ModelConfig:
    cfg_path = args.model_config or Path(args.checkpoint).with_name("model_config.json")
    if not Path(cfg_path).is_file():
        raise ConfigError(
            f"no model config at {cfg_path}; pass --model-config explicitly"
        )
    return ModelConfig.from_dict(_load_json(cfg_path))


def _restore_stack(args, g, inputs, model_cfg: ModelConfig):
    stack = build_stack(
        model_cfg,
        feature_dim=inputs.features.shape[1],
        n_classes=g.n_classes(),
        n_structures=len(model_cfg.structures),
        rng=RngStream(0),
    )
    stack.load_values(load_checkpoint(args.checkpoint))
    return stack


def _fanout_workers(n_tasks: int) -> int:
    cap = os.environ.get("HAE_THREADS")
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError as e:
            raise ConfigError(f"HAE_THREADS must be an integer: {cap!r}") from e
        if cap < 1:
            raise ConfigError("HAE_THREADS must be >= 1")
        return min(cap, n_tasks)
    return min(os.cpu_count() or 1, n_tasks)


def cmd_eval(args) -> int:
    if not (0.0 < args.train_ratio < 1.0):
        raise ConfigError(f"train ratio {args.train_ratio} outside (0, 1)")
    if args.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    g = _load_dataset(args.dataset)
    if g.labels is None:
        raise DataError("dataset has no labels to evaluate against")
    model_cfg = _load_model_config(args)
    inputs = build_graph_inputs(g, model_cfg.structures)
    stack = _restore_stack(args, g, inputs, model_cfg)
    emb = extract_embeddings(stack, inputs)
    base_seed = args.seed if args.seed is not None else 0

    def one(i: int) -> dict[str, float]:
        seed = base_seed + i
        split = split_labels(g, args.train_ratio, 0.0, seed)
        return evaluate_embeddings(emb, g.labels, split, seed)

    with ThreadPoolExecutor(max_workers=_fanout_workers(args.repeats)) as pool:
        results = list(pool.map(one, range(args.repeats)))
    out = {"repeats": args.repeats, "train_ratio": args.train_ratio}
    for key in ("macro_f1", "micro_f1", "nmi", "ari", "fmi"):
        vals = np.array([r[key] for r in results])
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_embed(args) -> int:
    g = _load_dataset(args.dataset)
    model_cfg = _load_model_config(args)
    inputs = build_graph_inputs(g, model_cfg.structures)
    stack = _restore_stack(args, g, inputs, model_cfg)
    emb = extract_embeddings(stack, inputs)
    ids = g.ids[g.target_type]
    lines = ["\t".join(["id"] + [f"v{k}" for k in range(emb.shape[1])])]
    for ext, row in zip(ids, emb):
        lines.append(ext + "\t" + "\t".join(f"{v:.17g}" for v in row))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _info(args, f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")

    parser = _Parser(prog="hae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--config", required=True, help="SyntheticConfig JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("commute", parents=[common], help="dump commuting/similarity matrices")
    p.add_argument("--dataset", required=True)
    p.add_argument("--structure", action="append", default=[], help="structure spec (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_commute)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-config", default=None, help="ModelConfig JSON")
    p.add_argument("--train-config", default=None, help="TrainConfig JSON")
    p.add_argument("--structure", action="append", default=[], help="override config structures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="probe + clustering metrics over seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--train-ratio", type=float, default=0.8)
    p.add_argument("--repeats", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="export embeddings as TSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
