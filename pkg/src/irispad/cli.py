"""Command-line front end for the whole pipeline.

Subcommands: gen-data, train, eval, gradcam, tsne, freq-sweep,
robustness.  Options resolve in three layers: built-in defaults, then a
plain key=value config file (--config), then explicit flags.  The
effective configuration of every run is echoed to run_config.txt in the
output directory, and the output directory falls back to the
DNETPAD_OUT environment variable when --out is absent.

Exit codes: 0 success, 2 usage errors (bad flags, missing inputs),
1 runtime failures.  Errors print one machine-parsable line:
``error: <kind>: <message>``.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import explain, freq, metrics, synthdata, train as train_mod
from .images import to_u8, write_pgm, write_ppm
from .model import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    build_model,
    load_checkpoint,
)

ENV_OUT = "DNETPAD_OUT"


class UsageError(Exception):
    pass


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(int(v) for v in s)
    parts = [p for p in str(s).split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


@dataclass(frozen=True)
class Opt:
    name: str
    conv: object
    default: object
    help: str
    is_flag: bool = False


def _o(name, conv, default, help):
    return Opt(name, conv, default, help)


def _f(name, help):
    return Opt(name, _parse_bool, False, help, is_flag=True)


_COMMON = [
    _o("out", str, "", f"output directory (fallback: ${ENV_OUT})"),
    _o("config", str, "", "key=value config file; flags override file values"),
]

_MODEL_OPTS = [
    _o("input-size", int, 64, "network input size in pixels"),
    _o("stem-filters", int, 16, "stem conv filter count"),
    _o("growth-rate", int, 8, "channels added per dense layer"),
    _o("block-layers", _parse_int_list, (2, 2, 2, 2), "dense layers per block, comma-separated"),
    _o("compression", float, 0.5, "transition channel compression in (0,1]"),
]

OPTIONS = {
    "gen-data": _COMMON + [
        _o("train", int, 1200, "training image count"),
        _o("test", int, 400, "test image count"),
        _o("seed", int, 42, "base generator seed"),
        _o("gen-size", int, 96, "generation canvas size in pixels"),
        _f("force", "overwrite an existing dataset tree"),
    ],
    "train": _COMMON + _MODEL_OPTS + [
        _o("data", str, "", "training split directory (class subdirs of PGMs)"),
        _o("lr", float, 0.005, "learning rate"),
        _o("momentum", float, 0.9, "SGD momentum"),
        _o("batch-size", int, 20, "mini-batch size"),
        _o("epochs", int, 50, "training epochs"),
        _o("seed", int, 0, "seed for init and shuffling"),
        _o("checkpoint-every", int, 0, "periodic checkpoint interval in epochs (0 = final only)"),
    ],
    "eval": _COMMON + [
        _o("checkpoint", str, "", "trained model checkpoint"),
        _o("data", str, "", "evaluation split directory"),
        _o("fdr", float, 0.002, "target false detection rate"),
        _o("bins", int, 20, "histogram bin count"),
        _o("jobs", int, 1, "worker threads for scoring"),
    ],
    "gradcam": _COMMON + [
        _o("checkpoint", str, "", "trained model checkpoint"),
        _o("data", str, "", "image split directory"),
        _o("class", str, "all", "restrict to one class name, or 'all'"),
        _o("block", int, -1, "dense block to tap (-1 = last)"),
        _o("target", int, 1, "logit whose saliency is mapped (1 = attack)"),
        _o("max-images", int, 16, "per-class cap for per-image heatmaps"),
        _o("jobs", int, 1, "worker threads for heatmap computation"),
        _f("average", "emit only the per-class average heatmaps"),
    ],
    "tsne": _COMMON + [
        _o("checkpoint", str, "", "trained model checkpoint"),
        _o("data", str, "", "image split directory"),
        _o("blocks", str, "all", "comma-separated block indices, or 'all'"),
        _o("perplexity", float, 30.0, "t-SNE perplexity"),
        _o("iters", int, 1000, "gradient descent iterations"),
        _o("seed", int, 0, "embedding init seed"),
        _o("max-samples", int, 0, "subsample cap (0 = use every image)"),
    ],
    "freq-sweep": _COMMON + [
        _o("checkpoint", str, "", "trained model checkpoint"),
        _o("data", str, "", "evaluation split directory"),
        _o("cutoffs", _parse_int_list, (), "low-pass cutoffs in bins (default: scaled 20/30/50 + identity)"),
        _o("fdr", float, 0.002, "target false detection rate"),
        _o("jobs", int, 1, "worker threads for filtering"),
    ],
    "robustness": _COMMON + [
        _o("checkpoint", str, "", "trained model checkpoint"),
        _o("data", str, "", "evaluation split directory"),
        _o("fdr", float, 0.002, "target false detection rate"),
        _o("sp-density", float, 0.02, "salt and pepper density"),
        _o("g-sigma", float, 0.1, "gaussian noise sigma"),
        _o("noise-seed", int, 0, "base seed for the noise rows"),
        _o("jobs", int, 1, "worker threads for filtering"),
    ],
}

_DESCRIPTIONS = {
    "gen-data": "generate a labeled synthetic train/test dataset tree",
    "train": "train the mini dense network on a dataset directory",
    "eval": "score a split and write the biometric evaluation report",
    "gradcam": "write saliency heatmaps (PGM + PPM overlays)",
    "tsne": "embed per-block features to 2-D CSVs",
    "freq-sweep": "TDR across low-pass cutoff frequencies",
    "robustness": "TDR under fixed image manipulations",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="irispad",
        description="desk-scale iris presentation-attack detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, help=_DESCRIPTIONS[cmd], description=_DESCRIPTIONS[cmd])
        for o in opts:
            flag = f"--{o.name}"
            if o.is_flag:
                p.add_argument(flag, action="store_true", default=argparse.SUPPRESS, help=o.help)
            else:
                p.add_argument(
                    flag, type=str, default=argparse.SUPPRESS, metavar="V",
                    help=f"{o.help} (default: {_format_value(o.default)})",
                )
    return parser


def _format_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def parse_config_file(path):
    values = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {line!r}")
        k, v = s.split("=", 1)
        values[k.strip().replace("_", "-")] = v.strip()
    return values


def resolve_options(cmd, namespace):
    """defaults < config file < explicit flags, all run through the
    same per-option converters."""
    opts = {o.name: o for o in OPTIONS[cmd]}
    eff = {o.name: o.default for o in opts.values()}
    explicit = {k.replace("_", "-"): v for k, v in vars(namespace).items() if k != "command"}

    cfg_path = explicit.get("config") or ""
    if cfg_path:
        for k, v in parse_config_file(cfg_path).items():
            if k not in opts:
                raise UsageError(f"unknown config key {k!r} for {cmd}")
            try:
                eff[k] = opts[k].conv(v)
            except ValueError as e:
                raise UsageError(f"bad config value for {k}: {e}")
    for k, v in explicit.items():
        if k not in opts:
            continue
        try:
            eff[k] = v if isinstance(v, bool) else opts[k].conv(v)
        except ValueError as e:
            raise UsageError(f"bad value for --{k}: {e}")
    return eff


def resolve_out_dir(eff):
    out = eff.get("out") or os.environ.get(ENV_OUT, "")
    if not out:
        raise UsageError(f"no output directory: pass --out or set ${ENV_OUT}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_config(out_dir, cmd, eff):
    lines = [f"command = {cmd}"]
    for k in sorted(eff):
        lines.append(f"{k} = {_format_value(eff[k])}")
    (Path(out_dir) / "run_config.txt").write_text("\n".join(lines) + "\n")


def _load_model(eff):
    path = eff.get("checkpoint") or ""
    if not path:
        raise UsageError("missing --checkpoint")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _load_split(eff):
    path = eff.get("data") or ""
    if not path:
        raise UsageError("missing --data")
    if not Path(path).is_dir():
        raise UsageError(f"data directory not found: {path}")
    result = synthdata.load_dir(path)
    for f, msg in result.errors:
        print(f"warning: skipping {f}: {msg}", file=sys.stderr)
    if not result.images:
        raise UsageError(f"no images under {path}")
    return result.images


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(eff):
    out = resolve_out_dir(eff)
    existing = [p for p in (out / "train", out / "test") if p.exists()]
    if existing and not eff["force"]:
        raise UsageError(
            f"dataset tree already exists under {out} (rerun with --force to overwrite)"
        )
    for p in existing:
        import shutil

        shutil.rmtree(p)
    write_run_config(out, "gen-data", eff)

    rows = []
    for split, count, base in (
        ("train", eff["train"], eff["seed"]),
        ("test", eff["test"], eff["seed"] + eff["train"]),
    ):
        images = synthdata.make_split(count, base, eff["gen-size"])
        for im in images:
            path = synthdata.save_labeled(im, out / split / im.label)
            rows.append(synthdata.manifest_row(im, path.relative_to(out), split))
    synthdata.write_manifest(out / "manifest.csv", rows)
    print(f"wrote {len(rows)} images under {out}")


def cmd_train(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "train", eff)
    dataset = _load_split(eff)
    try:
        mconfig = ModelConfig(
            input_size=eff["input-size"],
            stem_filters=eff["stem-filters"],
            growth_rate=eff["growth-rate"],
            block_layers=eff["block-layers"],
            compression=eff["compression"],
        )
        tconfig = train_mod.TrainConfig(
            learning_rate=eff["lr"],
            momentum=eff["momentum"],
            batch_size=eff["batch-size"],
            epochs=eff["epochs"],
            seed=eff["seed"],
            checkpoint_every=eff["checkpoint-every"],
        )
    except ConfigError as e:
        raise UsageError(str(e))
    model = build_model(mconfig, seed=eff["seed"])
    _, log = train_mod.train(model, dataset, tconfig, out_dir=out)
    last = log.records[-1]
    print(
        f"trained {tconfig.epochs} epochs: final loss {last.mean_loss:.4f}, "
        f"train accuracy {last.accuracy:.4f}; checkpoint at {out / 'model.ckpt'}"
    )


def cmd_eval(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "eval", eff)
    model = _load_model(eff)
    dataset = _load_split(eff)
    rows = train_mod.evaluate_scores(model, dataset, csv_path=out / "scores.csv", jobs=eff["jobs"])
    report = metrics.build_report(rows, eff["fdr"], bins=eff["bins"])
    metrics.write_report(report, out)
    bona = [r.score for r in rows if r.label == 0]
    atk = [r.score for r in rows if r.label == 1]
    with open(out / "roc.csv", "w", newline="") as f:
        import csv

        w = csv.writer(f)
        w.writerow(["threshold", "fdr", "tdr"])
        for t, fdr, tdr in metrics.roc_points(bona, atk):
            w.writerow([repr(t), repr(fdr), repr(tdr)])
    print(
        f"eval: threshold {report.threshold:.4f}, TDR {report.tdr:.4f} at "
        f"FDR {report.realized_fdr:.4f} (target {report.target_fdr:g}), d' {report.d_prime:.3f}"
    )


def cmd_gradcam(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "gradcam", eff)
    model = _load_model(eff)
    dataset = _load_split(eff)
    wanted = eff["class"]
    if wanted != "all" and wanted not in synthdata.CLASSES:
        raise UsageError(f"unknown class {wanted!r}")
    classes = synthdata.CLASSES if wanted == "all" else (wanted,)
    block = eff["block"] if eff["block"] >= 0 else model.num_blocks - 1
    size = model.config.input_size

    for cls in classes:
        members = [im for im in dataset if im.label == cls]
        if not members:
            continue
        if not eff["average"]:
            members = members[: eff["max-images"]]
        crops = [synthdata.crop_and_resize(im, size)[0, 0] for im in members]

        def one(args):
            idx, crop = args
            hm = explain.grad_cam(model, crop, target_class=eff["target"], block_index=block)
            hm.source_class = cls
            return idx, hm

        if eff["jobs"] > 1:
            with ThreadPoolExecutor(max_workers=eff["jobs"]) as pool:
                results = sorted(pool.map(one, enumerate(crops)))
        else:
            results = [one(p) for p in enumerate(crops)]
        heatmaps = [hm for _, hm in results]

        if eff["average"]:
            avg = explain.average_heatmap(heatmaps)
            base = to_u8(np.mean(crops, axis=0))
            write_pgm(out / f"gradcam_avg_{cls}.pgm", explain.heatmap_to_u8(avg))
            write_ppm(out / f"gradcam_avg_{cls}.ppm", explain.heatmap_overlay(base, avg))
        else:
            for im, crop, hm in zip(members, crops, heatmaps):
                ident = Path(im.source_path).stem if im.source_path else str(im.seed)
                write_pgm(out / f"gradcam_{cls}_{ident}.pgm", explain.heatmap_to_u8(hm))
                write_ppm(
                    out / f"gradcam_{cls}_{ident}.ppm",
                    explain.heatmap_overlay(to_u8(crop), hm),
                )
    print(f"gradcam artifacts written under {out}")


def cmd_tsne(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "tsne", eff)
    model = _load_model(eff)
    dataset = _load_split(eff)
    if eff["max-samples"] > 0:
        dataset = dataset[: eff["max-samples"]]
    if eff["blocks"] == "all":
        blocks = list(range(model.num_blocks))
    else:
        blocks = list(_parse_int_list(eff["blocks"]))
    labels = [im.label for im in dataset]
    for b in blocks:
        feats = explain.extract_block_features(model, dataset, b)
        emb = explain.tsne(feats, perplexity=eff["perplexity"], iters=eff["iters"], seed=eff["seed"])
        emb.block_index = b
        emb.labels = labels
        explain.write_embedding_csv(out / f"tsne_block{b}.csv", emb)
    params = dict(explain.TSNE_DEFAULTS)
    params.update({"perplexity": eff["perplexity"], "iters": eff["iters"], "seed": eff["seed"]})
    (out / "tsne_params.txt").write_text(
        "\n".join(f"{k} = {_format_value(v)}" for k, v in sorted(params.items())) + "\n"
    )
    print(f"embeddings for blocks {blocks} written under {out}")


def cmd_freq_sweep(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "freq-sweep", eff)
    model = _load_model(eff)
    dataset = _load_split(eff)
    size = model.config.input_size
    cutoffs = list(eff["cutoffs"])
    if not cutoffs:
        cutoffs = freq.default_cutoffs(size)
        cutoffs.append(int(np.ceil(freq.max_bin_radius((size, size)))))
    result = freq.cutoff_sweep(
        model, dataset, cutoffs, eff["fdr"],
        model_id=Path(eff["checkpoint"]).name, jobs=eff["jobs"],
    )
    result.to_csv(out / "sweep.csv")
    sample = next((im for im in dataset if im.label == "bonafide"), dataset[0])
    crop = synthdata.crop_and_resize(sample, size)[0, 0]
    freq.write_frequency_panel(crop, cutoffs[0], max(1, cutoffs[0] // 2), out / "panel.pgm")
    pts = ", ".join(f"{c}:{t:.3f}" for c, t in result.points)
    print(f"sweep baseline TDR {result.baseline_tdr:.4f}; {pts}")


def cmd_robustness(eff):
    out = resolve_out_dir(eff)
    write_run_config(out, "robustness", eff)
    model = _load_model(eff)
    dataset = _load_split(eff)
    manips = freq.default_manipulations(
        model.config.input_size,
        sp_density=eff["sp-density"],
        g_sigma=eff["g-sigma"],
        noise_seed=eff["noise-seed"],
    )
    rows = freq.robustness_table(model, dataset, manips, eff["fdr"], jobs=eff["jobs"])
    freq.write_table_csv(out / "robustness.csv", rows)
    for name, tdr, dec in rows:
        print(f"{name}: TDR {tdr:.4f} (decrease {dec:.2f}%)")


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcam": cmd_gradcam,
    "tsne": cmd_tsne,
    "freq-sweep": cmd_freq_sweep,
    "robustness": cmd_robustness,
}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if not ns.command:
        parser.print_help()
        return 2
    try:
        eff = resolve_options(ns.command, ns)
        _HANDLERS[ns.command](eff)
        return 0
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, train_mod.TrainAbort, ValueError, OSError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
