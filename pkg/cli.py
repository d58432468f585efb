"""Command-line entry point of TagASC.

    python cli.py synth --out data/synth
    python cli.py train --data data/synth --fusion attention --heads 4 --layers 2
    python cli.py extract --checkpoint out/train/model.ckpt --data data/synth --split train
    python cli.py fit-svm --codes out/extract/codes_train.csv
    python cli.py eval --checkpoint out/train/model.ckpt --svm out/fit-svm/svm.txt --data data/synth
    python cli.py grid --mirror table3 --data data/synth --plot
    python cli.py gradcheck --scope ops
    python cli.py inspect --scale full --events 527

Outputs go to ``--out`` or, by default, ``$TAGASC_OUT/<command>`` (``out/<command>``
when the variable is unset). Every output directory holds one ``manifest.json``
listing the runs that wrote to it.
"""
import argparse
import json
import os
import sys
import time
import numpy as np

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional

from backends.svm import load_svm, save_svm, train_ovr
from core import __version__
from core.checkpoint import load_checkpoint, save_checkpoint
from core.backbone import BackboneConfig
from core.dataset import SynthSpec, generate_synthetic, load_dataset, write_dataset
from core.errors import CheckFailure, ConfigurationError, DataError, TagASCError, UsageError
from core.fusion import FUSION_MODES, TagVector
from core.gradcheck import GRAD_TOLERANCE, SUITES, run_suite
from core.model import TagASCModel
from core.trainer import (TrainConfig, TrainLogger, evaluate, extract_codes, load_codes,
                          load_config, resolve_config, train, write_codes)
from eval.grid import MIRRORS, GridAxes, run_grid
from zoo import build_tagger

DEFAULT_SYNTH_SPEC = Path(__file__).parent / "eval" / "benchmarks" / "synth" / "default" / \
    "config.json"
VIS_CONFIG = Path(__file__).parent / "core" / "vis" / "configs" / "vis_config_grid.json"
MANIFEST = "manifest.json"

# flag dest -> TrainConfig key
CONFIG_FLAGS = ("fusion", "heads", "layers", "layers_concat", "layers_att", "hidden_dim", "scale",
                "filters", "res_blocks", "code_dim", "front_len", "optimizer", "lr", "epochs",
                "batch_size", "seed", "mixup", "mixup_alpha", "pre_emphasis",
                "pre_emphasis_beta", "kernel", "gamma", "coef0", "C", "tol", "max_iter",
                "tensorboard_dir")
KERNEL_FLAGS = ("kernel", "gamma", "coef0", "C", "tol", "max_iter")


def out_root() -> Path:
    return Path(os.environ.get("TAGASC_OUT", "out"))


def out_dir(args) -> Path:
    path = Path(args.out) if args.out else out_root() / args.command
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigurationError("out", f"cannot create {path}: {err.strerror}")
    return path


def append_manifest(directory: Path, command: str, config: Dict, seed: Optional[int],
                    inputs: List, outputs: List, started: float):
    """Append one run to ``directory/manifest.json``; earlier runs are kept as written."""
    path = directory / MANIFEST
    runs = []
    if path.exists():
        with open(path, "r") as fr:
            runs = json.load(fr)
    runs.append(OrderedDict([
        ("command", command),
        ("config", config),
        ("seed", seed),
        ("inputs", [str(p) for p in inputs]),
        ("outputs", [str(p) for p in outputs]),
        ("version", __version__),
        ("started", time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started))),
        ("finished", time.strftime("%Y-%m-%dT%H:%M:%S")),
    ]))
    with open(path, "w") as fw:
        json.dump(runs, fw, indent=4)


def overrides(args, keys=CONFIG_FLAGS) -> Dict:
    """Flags that were given explicitly."""
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def check_flags(args, cfg: TrainConfig):
    """Reject fusion flags the effective fusion mode would silently ignore."""
    given = overrides(args)
    mode = cfg.fusion
    if "heads" in given and not cfg.fusion_config().uses_attention:
        raise UsageError("--heads", f"fusion '{mode}' has no attention map")
    for flag in ("layers_concat", "layers_att"):
        if flag in given and mode != "combined_separate":
            raise UsageError(f"--{flag.replace('_', '-')}",
                             f"only applies to combined_separate, fusion is '{mode}'")
    if "layers" in given and mode in ("none", "codecat", "combined_separate"):
        hint = ", use --layers-concat/--layers-att" if mode == "combined_separate" else ""
        raise UsageError("--layers", f"fusion '{mode}' has no shared tag transform{hint}")


def train_config(args) -> TrainConfig:
    cfg = resolve_config(args.config, overrides(args))
    check_flags(args, cfg)
    return cfg


def logger_for(args, cfg: Optional[TrainConfig] = None) -> TrainLogger:
    return TrainLogger(is_open=not args.quiet,
                       tensorboard_dir=cfg.tensorboard_dir if cfg is not None else None)


def dataset_for(args):
    dataset = load_dataset(args.data, getattr(args, "tags", None))
    if not dataset.train:
        raise DataError("dataset", f"{args.data}: empty training split")
    return dataset


def cmd_synth(args) -> int:
    started = time.time()
    spec_file = Path(args.spec) if args.spec else DEFAULT_SYNTH_SPEC
    if not spec_file.exists():
        raise ConfigurationError("synth", f"spec file not found: {spec_file}")
    values = load_config(spec_file)
    if args.seed is not None:
        values["seed"] = args.seed
    spec = SynthSpec.from_dict(values)
    directory = out_dir(args)
    logger = logger_for(args)
    logger.log(f"synthesize {spec.num_scenes} scenes, {spec.num_events} events, seed {spec.seed}")
    dataset = generate_synthetic(spec)
    if args.tagger != "file":
        # replace the generated tags by a degraded tagger of the same ground truth
        tagger = build_tagger(args.tagger, dataset.tags, spec.seed, blur=args.tag_noise,
                              flip_prob=args.tag_noise)
        dataset.tags = tagger.table(dataset.train + dataset.test)
        logger.log(f"tags from {args.tagger} tagger, noise {args.tag_noise}")
    written = write_dataset(dataset, directory)
    logger.log(f"{dataset} -> {directory}")
    config = {**spec.to_dict(), "tagger": args.tagger, "tag_noise": args.tag_noise}
    append_manifest(directory, "synth", config, spec.seed, [spec_file], written, started)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = train_config(args)
    dataset = dataset_for(args)
    directory = out_dir(args)
    logger = logger_for(args, cfg)
    logger.log(f"seed {cfg.seed}, config {cfg.config_hash()[:10]}")
    result = train(dataset.train, dataset.tags, cfg, dataset.num_classes, logger)

    checkpoint = directory / "model.ckpt"
    save_checkpoint(result.model, checkpoint)
    losses = directory / "losses.json"
    with open(losses, "w") as fw:
        json.dump({"config_hash": cfg.config_hash(), "losses": result.losses}, fw, indent=4)
    logger.log(f"final loss {result.losses[-1]:.6f} -> {checkpoint}")
    logger.close()
    append_manifest(directory, "train", cfg.to_dict(), cfg.seed, [args.data], [checkpoint, losses],
                    started)
    return 0


def _split(dataset, split: str):
    return dataset.train if split == "train" else dataset.test


def cmd_extract(args) -> int:
    started = time.time()
    model = load_checkpoint(args.checkpoint)
    dataset = dataset_for(args)
    directory = out_dir(args)
    recordings = _split(dataset, args.split)
    codes = extract_codes(model, recordings, dataset.tags)
    path = directory / f"codes_{args.split}.csv"
    write_codes(path, codes, [r.scene_label for r in recordings])
    logger_for(args).log(f"{len(codes)} codes of dim {model.code_dim} -> {path}")
    append_manifest(directory, "extract", {"split": args.split}, model.seed,
                    [args.checkpoint, args.data], [path], started)
    return 0


def cmd_fit_svm(args) -> int:
    started = time.time()
    cfg = resolve_config(args.config, overrides(args, KERNEL_FLAGS))
    ids, labels, codes = load_codes(args.codes)
    if (labels < 0).any():
        raise DataError("fit-svm", f"{args.codes}: unlabeled codes")
    directory = out_dir(args)
    logger = logger_for(args)
    svm = train_ovr(codes, labels, cfg.kernel_spec(), args.classes, args.n_jobs)
    if not svm.converged:
        logger.log(f"SVM hit max_iter {cfg.max_iter} before converging")
    path = directory / "svm.txt"
    save_svm(svm, path)
    logger.log(f"{svm} on {len(ids)} codes -> {path}")
    append_manifest(directory, "fit-svm", cfg.kernel_spec().to_dict(), None, [args.codes], [path],
                    started)
    return 0


def format_report(report, classes: List[str]) -> str:
    width = max(len(c) for c in classes)
    lines = ["per-class accuracy:"]
    for name, acc in zip(classes, report.per_class):
        lines.append(f"  {name.ljust(width)}  {'-' if np.isnan(acc) else f'{acc:6.2f}'}")
    lines.append("confusion (rows: true, columns: predicted):")
    lines += ["  " + " ".join(f"{v:4d}" for v in row) for row in report.confusion]
    return "\n".join(lines)


def cmd_eval(args) -> int:
    started = time.time()
    model = load_checkpoint(args.checkpoint)
    svm = load_svm(args.svm)
    dataset = dataset_for(args)
    directory = out_dir(args)
    report = evaluate(model, svm, dataset.test, dataset.tags)

    path = directory / "predictions.csv"
    with open(path, "w") as fw:
        fw.write("id,true,predicted\n")
        for rec_id, (true, pred) in report.predictions.items():
            fw.write(f"{rec_id},{true},{pred}\n")
    append_manifest(directory, "eval", {"accuracy": report.accuracy}, model.seed,
                    [args.checkpoint, args.svm, args.data], [path], started)
    print(format_report(report, dataset.classes))
    print(f"accuracy: {report.accuracy:.2f}")
    return 0


def cmd_grid(args) -> int:
    started = time.time()
    if (args.mirror is None) == (args.grid is None):
        raise UsageError("grid", "give exactly one of --mirror and --grid")
    axes = GridAxes.mirror(args.mirror) if args.mirror else GridAxes.load(args.grid)
    # the grid file's base sits between the config file and the flags
    values = load_config(args.config) if args.config else {}
    base = resolve_config(None, {**values, **axes.base, **overrides(args)})
    axes.base = {}
    dataset = dataset_for(args)
    directory = out_dir(args)
    logger = logger_for(args, base)
    logger.log(f"seed {base.seed}, base config {base.config_hash()[:10]}")
    result = run_grid(base, axes, dataset, logger, args.n_jobs)
    logger.close()

    outputs = [directory / f"{axes.name}.jsonl", directory / f"{axes.name}.csv"]
    result.write_jsonl(outputs[0])
    result.table().to_csv(outputs[1], float_format="%.2f")
    if args.plot:
        from core.vis import plot_grid
        outputs.append(directory / f"{axes.name}.png")
        plot_grid(result.table(), VIS_CONFIG, outputs[-1], axes.title or axes.name)
    append_manifest(directory, "grid", {"grid": axes.name, **base.to_dict()}, base.seed,
                    [args.mirror or args.grid, args.data], outputs, started)
    print(result.render())
    return 0


def cmd_gradcheck(args) -> int:
    scopes = sorted(SUITES) if args.scope == "all" else [args.scope]
    failed = []
    for scope in scopes:
        results = run_suite(scope, args.eps, args.seed)
        for res in results:
            status = "ok" if res.passed else "FAIL"
            print(f"{scope:8s} {res.name:40s} {res.error:.3e} {status}")
        worst = max(results, key=lambda r: r.error)
        print(f"{scope:8s} worst: {worst.name} ({worst.error:.3e})")
        failed += [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure("gradcheck", f"relative error >= {GRAD_TOLERANCE:g} in "
                                        f"{', '.join(failed)}")
    return 0


def cmd_inspect(args) -> int:
    cfg = train_config(args)
    num_events = args.events if cfg.fusion_config().uses_tags else 0
    if cfg.fusion_config().uses_tags and num_events < 1:
        raise UsageError("--events", f"fusion '{cfg.fusion}' needs --events >= 1")
    preset = BackboneConfig.full_scale() if cfg.scale == "full" else BackboneConfig.desk_scale()
    backbone_cfg = cfg.backbone_config(args.samples or preset.input_samples,
                                       args.channels or preset.input_channels,
                                       args.classes or preset.num_classes)
    model = TagASCModel(backbone_cfg, cfg.fusion_config(), num_events, cfg.seed,
                        cfg.pre_emphasis_beta if cfg.pre_emphasis else None)

    print(f"input ({backbone_cfg.input_samples}, {backbone_cfg.input_channels})")
    table = backbone_cfg.shape_table()
    for name, shape in table:
        print(f"  {name:16s} {shape}")
    groups = OrderedDict()
    for name, p in model.parameters():
        layer = name.rsplit(".", 1)[0]
        groups[layer] = groups.get(layer, 0) + p.size
    print("parameters:")
    for layer, count in groups.items():
        print(f"  {layer:32s} {count:>10d}")
    print(f"  {'total':32s} {model.num_parameters():>10d}")

    if args.replay:
        shapes = dict(table)
        tag = TagVector(np.zeros(num_events)) if num_events else None
        waveform = np.zeros((backbone_cfg.input_samples, backbone_cfg.input_channels))
        out = model(waveform, tag, "infer")
        replayed = {"res-blocks": out.feature_map.shape, "code": out.code.shape,
                    "output": out.logits.shape}
        expected = {**shapes, "code": (model.code_dim,)}
        mismatch = [f"{k}: {v} != {expected[k]}" for k, v in replayed.items() if v != expected[k]]
        if mismatch:
            raise CheckFailure("inspect", "replayed shapes differ: " + "; ".join(mismatch))
        print("replay: ok")
    return 0


def _config_flags(p: argparse.ArgumentParser, kernel_only: bool = False):
    g = p.add_argument_group("config (flags > --config file > built-in defaults)")
    g.add_argument("--config", default=None, help="flat JSON config file")
    if not kernel_only:
        g.add_argument("--fusion", choices=FUSION_MODES, default=None)
        g.add_argument("--heads", type=int, default=None, help="attention heads h, must divide f")
        g.add_argument("--layers", type=int, default=None, help="tag transform depth")
        g.add_argument("--layers-concat", type=int, default=None,
                       help="concatenation-branch depth (combined_separate)")
        g.add_argument("--layers-att", type=int, default=None,
                       help="attention-branch depth (combined_separate)")
        g.add_argument("--hidden-dim", type=int, default=None)
        g.add_argument("--scale", choices=("desk", "full"), default=None)
        g.add_argument("--filters", type=int, default=None, help="f, overrides the scale preset")
        g.add_argument("--res-blocks", type=int, default=None)
        g.add_argument("--code-dim", type=int, default=None)
        g.add_argument("--front-len", type=int, default=None, help="strided-conv length = stride")
        g.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
        g.add_argument("--lr", type=float, default=None)
        g.add_argument("--epochs", type=int, default=None)
        g.add_argument("--batch-size", type=int, default=None)
        g.add_argument("--seed", type=int, default=None)
        g.add_argument("--mixup", action=argparse.BooleanOptionalAction, default=None)
        g.add_argument("--mixup-alpha", type=float, default=None)
        g.add_argument("--pre-emphasis", action=argparse.BooleanOptionalAction, default=None)
        g.add_argument("--pre-emphasis-beta", type=float, default=None)
        g.add_argument("--tensorboard-dir", default=None)
    g.add_argument("--kernel", choices=("rbf", "sigmoid"), default=None)
    g.add_argument("--gamma", type=float, default=None, help="default 1 / code dim")
    g.add_argument("--coef0", type=float, default=None)
    g.add_argument("--C", type=float, default=None, dest="C")
    g.add_argument("--tol", type=float, default=None)
    g.add_argument("--max-iter", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagasc", description="Tag-informed acoustic scene "
                                                                "classification pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help, out=True, quiet=True):
        p = sub.add_parser(name, help=help)
        if out:
            p.add_argument("--out", default=None, help="output dir, default $TAGASC_OUT/" + name)
        if quiet:
            p.add_argument("--quiet", action="store_true", help="no progress output")
        return p

    p = command("synth", "generate the synthetic tagged dataset")
    p.add_argument("--spec", default=None, help="SynthSpec JSON, default: the frozen spec")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tagger", choices=("file", "oracle", "noisy"), default="file",
                   help="file: the generated tags; oracle/noisy: degrade the ground truth")
    p.add_argument("--tag-noise", type=float, default=0.1, help="oracle blur or noisy flip prob")
    p.set_defaults(func=cmd_synth)

    p = command("train", "train backbone and fusion, write a checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--tags", default=None, help="tag file, default <data>/tags.txt")
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = command("extract", "write codes of one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tags", default=None)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_extract)

    p = command("fit-svm", "fit the one-vs-rest SVM on a codes file")
    p.add_argument("--codes", required=True)
    p.add_argument("--classes", type=int, default=None, help="K, default max label + 1")
    p.add_argument("--n-jobs", type=int, default=1)
    _config_flags(p, kernel_only=True)
    p.set_defaults(func=cmd_fit_svm)

    p = command("eval", "accuracy of checkpoint + SVM on the test split", quiet=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--svm", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tags", default=None)
    p.set_defaults(func=cmd_eval)

    p = command("grid", "train and evaluate every cell of a grid")
    p.add_argument("--mirror", choices=MIRRORS, default=None)
    p.add_argument("--grid", default=None, help="grid description JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--tags", default=None)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--plot", action="store_true", help="also write a heat map PNG")
    _config_flags(p)
    p.set_defaults(func=cmd_grid)

    p = command("gradcheck", "compare analytic and numeric gradients", out=False, quiet=False)
    p.add_argument("--scope", choices=sorted(SUITES) + ["all"], default="all")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = command("inspect", "print stage shapes and parameter counts", out=False, quiet=False)
    p.add_argument("--samples", type=int, default=None, help="input samples, default per scale")
    p.add_argument("--channels", type=int, default=None, help="default per scale")
    p.add_argument("--classes", type=int, default=None, help="K, default per scale")
    p.add_argument("--events", type=int, default=0, help="tag-vector length c")
    p.add_argument("--replay", action=argparse.BooleanOptionalAction, default=True,
                   help="forward a zero waveform and compare shapes")
    _config_flags(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except TagASCError as err:
        print(err.log_info(), file=sys.stderr)
        return err.exit_code
    except FileNotFoundError as err:
        print(f"**DataError: {err.filename}** file not found", file=sys.stderr)
        return DataError.exit_code


if __name__ == '__main__':
    sys.exit(main())
