"""Command-line interface: gen-data, train, eval, report, compare, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from framestack import config as cfgmod
from framestack.checkpoint import load_tensors
from framestack.core import (
    ClassStats,
    DataError,
    GroupThresholds,
    NumericError,
    read_manifest,
    validate_manifest,
)
from framestack.datagen import SynthConfig, generate_dataset
from framestack.fseq import MAGIC as FSEQ_MAGIC
from framestack.fseq import read_fseq
from framestack.metrics import SUMMARY_KEYS, read_report_summary
from framestack.model import head_from_params
from framestack.trainer import FeatureSet, evaluate, fit, load_checkpoint

log = logging.getLogger("framestack")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MISSING = "—"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# ------------------------------------------------------------------ gen-data

DATA_FLAGS = {
    "seed": int, "num_classes": int, "dim": int, "length": int, "signal_frac": float,
    "noise": float, "n_background": int, "head_min": int, "medium_min": int,
}


def cmd_gen_data(args) -> int:
    doc = cfgmod.load_yaml(args.config) if args.config else {}
    data = dict(doc.get("data") or {})
    for name in DATA_FLAGS:
        value = getattr(args, name, None)
        if value is None:
            continue
        if name in ("head_min", "medium_min"):
            data.setdefault("thresholds", {})[name] = value
        else:
            data[name] = value
    if args.counts:
        data["counts"] = _parse_counts(args.counts)
    if "counts" not in data:
        raise UsageError("no class counts: give --counts or a 'data.counts' config entry")
    config = SynthConfig.from_dict(data)
    splits = generate_dataset(config, args.out, workers=args.workers)
    print(f"wrote {len(splits['all'])} videos ({len(splits['train'])} train, "
          f"{len(splits['val'])} val, {len(splits['test'])} test) to {args.out}")
    return 0


def _parse_counts(text: str):
    """``200,100,50`` | ``zipf:n_max,n_min,alpha`` | ``bands:5x200,25x40``."""
    try:
        if text.startswith("zipf:"):
            n_max, n_min, alpha = text[5:].split(",")
            return {"zipf": {"n_max": int(n_max), "n_min": int(n_min), "alpha": float(alpha)}}
        if text.startswith("bands:"):
            return {"bands": [[int(a), int(b)] for a, b in (p.split("x") for p in text[6:].split(","))]}
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse --counts {text!r}") from None


# --------------------------------------------------------------------- train


def _load_split(data_dir: Path, split: str, required=True):
    path = data_dir / f"{split}.tsv"
    if not path.exists():
        if required:
            raise DataError(f"{path} not found")
        return None
    return read_manifest(path)


def _train_config(args):
    doc = cfgmod.load_yaml(args.config) if args.config else {}
    flat = dict(doc.get("train") or {})
    flat.update(cfgmod.overrides_from_args(args))
    return cfgmod.train_config(flat)


def cmd_train(args) -> int:
    config = _train_config(args)
    data_dir = Path(args.data)
    manifests = {s: _load_split(data_dir, s, s == "train") for s in ("train", "val", "test")}
    validate_manifest(manifests["train"], config.thresholds)
    sets = {s: None if m is None else FeatureSet.load(m) for s, m in manifests.items()}
    result = fit(config, sets["train"], sets["val"], sets["test"], out_dir=args.out,
                 resume=args.resume, stop_after=args.stop_after)
    for name, rep in result.reports.items():
        print(f"test[{name}]\t" + "\t".join(f"{k}={rep.summary.get(k, float('nan')):.4f}"
                                            for k in SUMMARY_KEYS))
    print(f"wrote {args.out}/history.tsv and {args.out}/last.ckpt")
    return 0


# ---------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    state, config, counts = load_checkpoint(args.checkpoint)
    head, epoch = state.head, state.epoch - 1
    if args.which == "best":
        if state.best_params is None:
            raise DataError(f"{args.checkpoint} holds no best-validation parameters")
        head = head_from_params(head.arch, head.dims(), state.best_params)
        epoch = state.best_epoch
    manifest = read_manifest(args.manifest)
    validate_manifest(manifest, config.thresholds)
    if manifest.num_classes != len(counts):
        raise DataError(f"manifest has {manifest.num_classes} classes, checkpoint {len(counts)}")
    stats = ClassStats.from_counts(counts, config.thresholds)
    report = evaluate(head, FeatureSet.load(manifest), stats, config,
                      epoch=epoch, split=manifest.split)
    text = report.to_tsv()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


# -------------------------------------------------------------------- report


def read_run_summary(path) -> dict[str, float]:
    """Summary metrics from a report TSV or the last validated row of a history TSV."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if lines and lines[0].startswith("epoch\t"):
        cols = lines[0].split("\t")
        for line in reversed(lines[1:]):
            row = dict(zip(cols, line.split("\t")))
            if row.get("val_overall"):
                return {k: float(row[f"val_{k}"]) for k in SUMMARY_KEYS if row.get(f"val_{k}")}
        return {}
    if lines and lines[0].startswith("class\t"):
        return read_report_summary(path)
    raise DataError(f"{path}: neither a history nor a report TSV")


def run_labels(paths) -> list[str]:
    """Short, unique labels: each path relative to the files' common directory, minus suffix."""
    paths = [Path(p).resolve() for p in paths]
    common = Path(os.path.commonpath([p.parent for p in paths]))
    if len(paths) == 1:
        common = common.parent
    return [p.relative_to(common).with_suffix("").as_posix() for p in paths]


def comparison_rows(runs: dict[str, dict[str, float]], sort="overall"):
    def key(item):
        name, summary = item
        if sort == "name":
            return (0, name)
        val = summary.get("overall")
        return (1, 0.0, name) if val is None else (0, -val, name)
    return sorted(runs.items(), key=key)


def render_table(rows, fmt="text") -> str:
    header = ["run", *SUMMARY_KEYS]
    cells = [[name, *(f"{s[k]:.4f}" if k in s else MISSING for k in SUMMARY_KEYS)] for name, s in rows]
    if fmt == "tsv":
        return "\n".join("\t".join(r) for r in [header, *cells]) + "\n"
    titles = ["run", "Overall", "Head", "Medium", "Tail", "Acc@1", "Acc@5"]
    widths = [max(len(r[i]) for r in [titles, *cells]) for i in range(len(titles))]
    out = []
    for r in [titles, *cells]:
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    out.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def cmd_report(args) -> int:
    runs = {}
    for path, label in zip(args.files, run_labels(args.files)):
        summary = read_run_summary(path)
        missing = [k for k in SUMMARY_KEYS if k not in summary]
        if missing:
            log.warning("%s: missing %s", path, ", ".join(missing))
        runs[label] = summary
    sys.stdout.write(render_table(comparison_rows(runs, args.sort), args.format))
    return 0


# ------------------------------------------------------------------- compare


def grid_cells(doc: dict) -> dict[str, dict]:
    """Named cells from explicit ``cells`` and/or the cartesian product of ``axes``."""
    cells = {name: dict(v or {}) for name, v in (doc.get("cells") or {}).items()}
    axes = doc.get("axes") or {}
    if axes:
        names = sorted(axes)
        for combo in itertools.product(*(axes[n] for n in names)):
            label = ",".join(f"{n}={v}" for n, v in zip(names, combo))
            cells[label] = dict(zip(names, combo))
    if not cells:
        raise DataError("grid defines neither 'cells' nor 'axes'")
    return cells


def _run_cell(job):
    label, flat, data_dir, out_dir = job
    config = cfgmod.train_config(flat)
    data_dir = Path(data_dir)
    manifests = {s: _load_split(data_dir, s, s == "train") for s in ("train", "val", "test")}
    sets = {s: None if m is None else FeatureSet.load(m) for s, m in manifests.items()}
    result = fit(config, sets["train"], sets["val"], sets["test"], out_dir=out_dir)
    rep = result.reports.get("last")
    return label, flat["seed"], dict(rep.summary) if rep else {}


def cmd_compare(args) -> int:
    doc = cfgmod.load_yaml(args.grid)
    base = dict(doc.get("train") or {})
    base.update(cfgmod.overrides_from_args(args))
    seeds = list(doc.get("seeds") or [base.get("seed", 0)])
    cells = grid_cells(doc)
    out = Path(args.out)
    jobs = []
    for label, overrides in cells.items():
        for seed in seeds:
            flat = {**base, **overrides, "seed": seed}
            cfgmod.train_config(flat)  # fail fast on bad cells
            safe = label.replace("/", "_").replace(",", "__").replace(":", "-")
            jobs.append((label, flat, str(args.data), str(out / safe / f"seed{seed}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]

    header = ["cell", "seed", *SUMMARY_KEYS]
    lines = ["\t".join(header)]
    for label in cells:
        per_seed = [(s, r) for lab, s, r in results if lab == label]
        for seed, summary in per_seed:
            lines.append("\t".join([label, str(seed), *(f"{summary[k]:.6f}" if k in summary else MISSING
                                                        for k in SUMMARY_KEYS)]))
        means = [np.mean([r[k] for _, r in per_seed if k in r]) if any(k in r for _, r in per_seed) else None
                 for k in SUMMARY_KEYS]
        lines.append("\t".join([label, "mean", *(MISSING if m is None else f"{m:.6f}" for m in means)]))
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(lines) + "\n"
    (out / "compare.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------- inspect


def cmd_inspect(args) -> int:
    path = Path(args.path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FSEQ_MAGIC:
        seq = read_fseq(path)
        print(f"FSEQ {path}\nframes\t{seq.shape[0]}\ndim\t{seq.shape[1]}")
        print(f"mean\t{seq.mean():.6g}\nstd\t{seq.std():.6g}\nmin\t{seq.min():.6g}\nmax\t{seq.max():.6g}")
        return 0
    if head == b"FSCK":
        meta, tensors = load_tensors(path)
        print(f"checkpoint {path}\narch\t{meta['arch']}")
        for k, v in meta["dims"].items():
            print(f"{k}\t{v}")
        print(f"epoch\t{meta['epoch']}\nadam_steps\t{meta['adam']['t']}")
        rap = tensors["rap"]
        print(f"rap_mean\t{rap.mean():.6f}\nbest_val_overall\t{meta['best_score']}")
        n_params = sum(v.size for k, v in tensors.items() if k.startswith("param/"))
        print(f"parameters\t{n_params}")
        return 0
    manifest = read_manifest(path)
    thresholds = GroupThresholds(args.head_min, args.medium_min)
    stats = validate_manifest(manifest, thresholds)
    print(f"manifest {path}\nsplit\t{manifest.split or ''}\nvideos\t{len(manifest)}\nclasses\t{manifest.num_classes}")
    for g in ("head", "medium", "tail"):
        print(f"{g}_classes\t{sum(1 for x in stats.groups if x.value == g)}")
    print(f"max_count\t{int(stats.counts.max())}\nmin_count\t{int(stats.counts.min())}")
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="framestack", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic long-tailed dataset")
    p.add_argument("--config", help="YAML file with a 'data' section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="generation threads (default 1)")
    p.add_argument("--counts", help="per-class counts: '200,100,50', 'zipf:n_max,n_min,alpha' or 'bands:5x200,25x40'")
    p.add_argument("--seed", type=int, help="dataset seed (default 0)")
    p.add_argument("--num-classes", type=int, help="class count (default: from counts)")
    p.add_argument("--dim", type=int, help="feature dimension (default 64; reference features are 2048-d)")
    p.add_argument("--length", type=int, help="frames per video (default 150; paper value)")
    p.add_argument("--signal-frac", type=float, help="probability a frame shows its class (default 0.4; assumption)")
    p.add_argument("--noise", type=float, help="per-dimension frame noise std (default 1.0; assumption)")
    p.add_argument("--n-background", type=int, help="shared background prototypes (default 32; assumption)")
    p.add_argument("--head-min", type=int, help="head classes have more training videos than this (default 500; paper)")
    p.add_argument("--medium-min", type=int, help="medium classes have more training videos than this (default 100; paper)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a head on a dataset directory")
    p.add_argument("--config", help="YAML file with a 'train' section")
    p.add_argument("--data", required=True, help="directory with train.tsv (and optional val.tsv, test.tsv)")
    p.add_argument("--out", required=True, help="run directory for history, checkpoints and reports")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stop-after", type=int, help="stop once this many epochs are complete")
    cfgmod.add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", choices=("last", "best"), default="last",
                   help="last-epoch or best-validation parameters (default last)")
    p.add_argument("--out", help="also write the report TSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate history or report TSVs side by side")
    p.add_argument("files", nargs="+")
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    p.add_argument("--sort", choices=("overall", "name"), default="overall",
                   help="row order (default: overall mAP, descending)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="run a grid of configurations and consolidate results")
    p.add_argument("--grid", required=True, help="YAML with 'train' base keys, 'seeds', and 'cells' and/or 'axes'")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel processes (default 1)")
    cfgmod.add_train_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="summarise an FSEQ file, checkpoint or manifest")
    p.add_argument("path")
    p.add_argument("--head-min", type=int, default=500)
    p.add_argument("--medium-min", type=int, default=100)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"framestack: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"framestack: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"framestack: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
