"""Command-line entry point.

Exit status is 0 on success, 1 on usage errors and 2 on data errors. Every
error is reported on one stderr line starting with ``superpart: usage error:``
or ``superpart: data error:``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

USAGE_EXIT, DATA_EXIT = 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for bit-reproducible outputs")
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="superpart", description="Learned point cloud oversegmentation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="generate labeled synthetic rooms")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--density", type=float, default=None, help="points per square meter")
    s.add_argument("--format", default="ply_binary_le", choices=("ply_binary_le", "ply_ascii"))

    s = sub.add_parser("prep", parents=[common], help="load, prune, build neighborhoods and graph")
    s.add_argument("input", help="PLY cloud")
    s.add_argument("--out", required=True, help="cache file")

    s = sub.add_parser("train", parents=[common], help="train the embedder")
    s.add_argument("caches", nargs="+", help="prepared clouds with object ids")
    s.add_argument("--out", required=True, help="weight file")
    s.add_argument("--log", help="CSV training log")
    s.add_argument("--checkpoints", help="directory for per-epoch checkpoints")

    s = sub.add_parser("embed", parents=[common], help="embed a prepared cloud")
    s.add_argument("cache")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help="embeddings as .npy")

    s = sub.add_parser("partition", parents=[common], help="compute superpoints")
    s.add_argument("cache")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True, help="PLY with superpoint ids and embedding colors")
    s.add_argument("--summary", help="JSON summary (default: OUT with .json suffix)")
    s.add_argument("--lambda", dest="lambda_tilde", type=float, default=None)

    s = sub.add_parser("eval", parents=[common], help="score a partition")
    s.add_argument("cache", help="prepared cloud with class labels and object ids")
    s.add_argument("--partition", required=True, help="PLY carrying a superpoint property")
    s.add_argument("--out", required=True, help="metrics JSON")

    s = sub.add_parser("sweep", parents=[common], help="metrics along a regularization path")
    s.add_argument("cache")
    s.add_argument("--model", required=True)
    s.add_argument("--lambdas", type=_float_list, required=True)
    s.add_argument("--out", required=True, help="CSV")

    s = sub.add_parser("baseline", parents=[common], help="partition without learning")
    s.add_argument("cache")
    s.add_argument("--mode", required=True, choices=("raw_features", "handcrafted_geometry"))
    s.add_argument("--out", required=True, help="PLY with superpoint ids")
    s.add_argument("--summary", help="JSON summary (default: OUT with .json suffix)")
    s.add_argument("--lambda", dest="lambda_tilde", type=float, default=None)
    return p


def _set_deterministic():
    # only effective when numpy has not been imported yet (the console entry point)
    for var in _THREAD_VARS:
        os.environ[var] = "1"


def _load_config(args):
    from .config import ConfigError, PipelineConfig, parse_pairs

    try:
        cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
        if args.set:
            cfg = cfg.with_overrides([(0, k, v) for _, k, v in parse_pairs(args.set)])
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
    except ConfigError as exc:
        raise UsageError(f"config: {exc}") from None
    return cfg


def _summary_path(args):
    return args.summary or os.path.splitext(args.out)[0] + ".json"


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_prep(path):
    from .prep import load_prepared

    return load_prepared(path)


def _load_model(path, d):
    from .embed import load_params

    params = load_params(path)
    if params.config.d != d:
        raise DataError(f"model expects {params.config.d} radiometry channels, cloud has {d}")
    return params


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    from .cloud import save_cloud
    from .harness import SceneSpec, generate_synthetic_scene

    os.makedirs(args.out, exist_ok=True)
    extra = {} if args.density is None else {"density": args.density}
    for i in range(args.count):
        try:
            spec = SceneSpec(seed=cfg.seed + i, **extra)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cloud = generate_synthetic_scene(spec)
        save_cloud(cloud, os.path.join(args.out, f"scene_{i:03d}.ply"), format=args.format)


def cmd_prep(args, cfg):
    from .cloud import load_cloud
    from .prep import prepare, save_prepared

    cloud = load_cloud(args.input)
    save_prepared(prepare(cloud, cfg.k, cfg.k_adj, cfg.voxel_size, cfg.adjacency_radius), args.out)


def cmd_train(args, cfg):
    from .embed import save_params
    from .train import TrainItem, train

    items = []
    for path in args.caches:
        p = _load_prep(path)
        if p.cloud.object_ids is None:
            raise DataError(f"{path}: training clouds need object ids")
        items.append(TrainItem(p.cloud, p.table, p.graph))
    d = items[0].cloud.d
    if any(it.cloud.d != d for it in items):
        raise DataError("training clouds disagree on radiometry channels")
    if args.checkpoints:
        os.makedirs(args.checkpoints, exist_ok=True)
    result = train(items, cfg.train_config(), cfg.embedder_config(d), log_path=args.log,
                   checkpoint_dir=args.checkpoints)
    save_params(result.params, args.out)


def cmd_embed(args, cfg):
    import numpy as np

    from .embed import embed_cloud

    p = _load_prep(args.cache)
    params = _load_model(args.model, p.cloud.d)
    with open(args.out, "wb") as fh:
        np.save(fh, embed_cloud(p.cloud, p.table, params))


def _export_partition(args, cloud, solution, n_min, lambda_tilde, colors=None):
    from .cloud import save_cloud

    save_cloud(cloud, args.out, superpoint=solution.partition.assignment, emb_rgb=colors)
    _write_json(_summary_path(args), {
        "num_superpoints": int(solution.partition.num_superpoints),
        "energy": float(solution.energy),
        "lambda_tilde": float(lambda_tilde),
        "n_min": int(n_min),
        "warning": solution.warning,
    })


def cmd_partition(args, cfg):
    from .embed import embed_cloud
    from .harness import partition_from_descriptors, project_embeddings_rgb

    p = _load_prep(args.cache)
    params = _load_model(args.model, p.cloud.d)
    lam = cfg.lambda_tilde if args.lambda_tilde is None else args.lambda_tilde
    if not lam > 0:
        raise UsageError("--lambda must be positive")
    e = embed_cloud(p.cloud, p.table, params)
    sol, n_min = partition_from_descriptors(e, p.cloud.positions, p.graph, lam, cfg.gmp_config())
    _export_partition(args, p.cloud, sol, n_min, lam, project_embeddings_rgb(e))


def cmd_baseline(args, cfg):
    from .harness import baseline_descriptors, partition_from_descriptors

    p = _load_prep(args.cache)
    lam = cfg.lambda_tilde if args.lambda_tilde is None else args.lambda_tilde
    if not lam > 0:
        raise UsageError("--lambda must be positive")
    desc = baseline_descriptors(p.cloud, args.mode, cfg.k, p.table)
    sol, n_min = partition_from_descriptors(desc, p.cloud.positions, p.graph, lam, cfg.gmp_config())
    _export_partition(args, p.cloud, sol, n_min, lam)


def cmd_eval(args, cfg):
    import numpy as np

    from .graph import Partition, classify_edges
    from .metrics import evaluate_partition, write_report_json
    from .ply import read_ply

    p = _load_prep(args.cache)
    if p.cloud.class_labels is None or p.cloud.object_ids is None:
        raise DataError(f"{args.cache}: evaluation needs class labels and object ids")
    cols, _ = read_ply(args.partition)
    if "superpoint" not in cols:
        raise DataError(f"{args.partition}: no superpoint property")
    sp = np.asarray(cols["superpoint"], dtype=np.int64)
    if len(sp) != p.cloud.n:
        raise DataError(f"{args.partition}: {len(sp)} points, cache has {p.cloud.n}")
    part = Partition.from_labels(sp)
    report = evaluate_partition(part, p.graph, p.cloud.class_labels, classify_edges(p.graph, p.cloud.object_ids))
    write_report_json(report, args.out)


def cmd_sweep(args, cfg):
    from .harness import sweep_regularization
    from .metrics import write_reports_csv

    p = _load_prep(args.cache)
    if p.cloud.class_labels is None or p.cloud.object_ids is None:
        raise DataError(f"{args.cache}: sweeps need class labels and object ids")
    if any(not lam > 0 for lam in args.lambdas):
        raise UsageError("every lambda must be positive")
    params = _load_model(args.model, p.cloud.d)
    reports = sweep_regularization(params, p.cloud, p.table, p.graph, args.lambdas, cfg.gmp_config())
    write_reports_csv(reports, args.out)


COMMANDS = {"synth": cmd_synth, "prep": cmd_prep, "train": cmd_train, "embed": cmd_embed,
            "partition": cmd_partition, "eval": cmd_eval, "sweep": cmd_sweep, "baseline": cmd_baseline}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"superpart: usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    if args.deterministic:
        _set_deterministic()
    import logging

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="superpart: %(levelname)s: %(message)s")
    from .cloud import PlyError
    from .embed import WeightFileError
    from .prep import CacheError
    from .train import TrainingError

    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"superpart: usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, PlyError, WeightFileError, CacheError, TrainingError) as exc:
        print(f"superpart: data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"superpart: data error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return DATA_EXIT
    except ValueError as exc:
        # remaining value errors come from inconsistent inputs
        print(f"superpart: data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
