"""Command line entry point: ``gpgraph {synth,train,eval,group,plot}``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .errors import ConfigurationError, GPGraphError, UsageError
from .estimator import GPGraph, window_seed
from .model import GRAPHS
from .predictor import SamplingMode, sample
from .synth import SynthSpec, corpus, scenario_split_merge
from .trajectories import (
    load_dataset,
    make_windows,
    parse_group_labels,
    window_labels,
    write_dataset,
    write_group_labels,
)
from .training import load_checkpoint, save_checkpoint

logger = logging.getLogger("gpgraph")

LABEL_SUFFIX = ".groups.txt"

EVAL_SCHEMA = """\
eval writes into --out:
  metrics.csv   header "window_id,metric,value"; one row per window and metric
                (ade, fde, col, tcc), windows in input order. ade/fde/tcc use the
                best of --samples draws; col averages all draws (percent).
  summary.json  {"windows": int, "mode": str, "samples": int,
                 "col_threshold": float, "mean": {metric: float}}
window_id is "<scene file stem>:<first frame of the window>"."""

GROUP_SCHEMA = """\
group writes into --out:
  groups.txt    for every window a line "# <window_id>" then one group per line
                as space-separated pedestrian ids (singletons included)
  scores.csv    only with --labels: "window_id,metric,value" rows for
                pw_precision, pw_recall, gm_precision, gm_recall
  summary.json  only with --labels: mean of each score over windows"""

TRAIN_SCHEMA = """\
train writes --out (binary checkpoint), <out>.json (configuration and loss
trace) and <out>.loss.csv with header "epoch,loss"."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- data loading --------------------------------------------------------------------


def _require(path: Path, what="file"):
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _scene_files(data) -> list:
    files = []
    for raw in data:
        path = _require(Path(raw), "data path")
        if path.is_dir():
            files.extend(sorted(p for p in path.glob("*.txt") if not p.name.endswith(LABEL_SUFFIX)))
        else:
            files.append(path)
    if not files:
        raise FileNotFoundError(f"no trajectory files under {', '.join(map(str, data))}")
    return files


def _label_file(labels: Path, scene_file: Path, many: bool) -> Path:
    if labels.is_dir():
        return _require(labels / (scene_file.stem + LABEL_SUFFIX), "label file")
    if many:
        raise UsageError("--labels must be a directory when --data names several scenes")
    return labels


def load_windows_from(data, labels=None, stride=1, t_obs=8, t_pred=12):
    """Return (window ids, windows, partitions or None) in file then start-frame order."""
    files = _scene_files(data)
    label_root = _require(Path(labels), "labels path") if labels else None
    ids, windows, parts = [], [], [] if labels else None
    for f in files:
        scene = load_dataset(f)
        groups = None
        if label_root is not None:
            groups = parse_group_labels(_label_file(label_root, f, len(files) > 1).read_text())
        for w in make_windows(scene, t_obs, t_pred, stride):
            ids.append(f"{f.stem}:{w.start_frame}")
            windows.append(w)
            if groups is not None:
                parts.append(window_labels(groups, w))
    if not windows:
        raise GPGraphError("no window has a pedestrian present over the full observation and prediction span")
    return ids, windows, parts


def _estimator(checkpoint, **params):
    model, sidecar = load_checkpoint(_require(Path(checkpoint), "checkpoint"))
    return GPGraph.from_model(model, sidecar["model"], **params), sidecar


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["window_id", "metric", "value"])
    for wid, name, value in rows:
        writer.writerow([wid, name, _fmt(value)])
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- synth ---------------------------------------------------------------------------


def cmd_synth(args):
    if args.min_groups > args.max_groups:
        raise UsageError("--min-groups must not exceed --max-groups")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec(
        group_count=args.max_groups,
        min_size=args.min_size,
        max_size=args.max_size,
        spacing=args.spacing,
        noise=args.noise,
        frames=args.frames,
        seed=args.seed,
    )
    if args.split_width:
        scenes = [scenario_split_merge(replace(spec, seed=args.seed + i), args.split_width) for i in range(args.scenes)]
    else:
        scenes = corpus(spec, args.scenes, group_range=(args.min_groups, args.max_groups))
    for i, (scene, groups) in enumerate(scenes):
        (out / f"scene_{i:03d}.txt").write_text(write_dataset(scene))
        (out / f"scene_{i:03d}{LABEL_SUFFIX}").write_text(write_group_labels(groups))
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


# -- train ---------------------------------------------------------------------------


def cmd_train(args):
    if args.supervised and not args.labels:
        raise UsageError("--supervised needs --labels")
    graphs = tuple(g.strip() for g in args.graphs.split(","))
    if any(g not in GRAPHS for g in graphs):
        raise UsageError(f"--graphs takes a comma list from {','.join(GRAPHS)}")
    _, windows, parts = load_windows_from(args.data, args.labels if args.supervised else None, args.stride)
    est = GPGraph(
        hidden=args.hidden,
        graphs=graphs,
        fixed_ratio=args.fixed_ratio,
        epochs=args.epochs,
        lr=args.lr,
        optimizer=args.optimizer,
        schedule=args.schedule,
        batch=args.batch,
        group_loss_weight=1.0 if args.supervised else 0.0,
        seed=args.seed,
    )

    def report(epoch, loss):
        logger.info("epoch %d loss %.6f", epoch, loss)

    est.fit(windows, parts, callback=report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, est.model_, est.model_config(), est.train_config(), est.loss_trace_)
    lines = ["epoch,loss"] + [f"{i},{_fmt(v)}" for i, v in enumerate(est.loss_trace_)]
    Path(str(out) + ".loss.csv").write_text("\n".join(lines) + "\n")
    print(f"trained on {len(windows)} windows; final loss {est.loss_trace_[-1]:.6f}; checkpoint {out}")
    return 0


# -- eval ----------------------------------------------------------------------------

_WORKER = {}


def _init_worker(checkpoint):
    _WORKER["est"], _ = _estimator(checkpoint)


def _eval_one(task):
    index, window, mode, count, seed, threshold = task
    est = _WORKER["est"]
    r = est.model_.forward(window)
    samples = sample(r.field, mode, r.partition, seed=window_seed(seed, index), count=count, origin=window.obs[:, -1])
    return metrics.trajectory_scores(samples, window.fut, threshold).as_dict()


def cmd_eval(args):
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    ids, windows, _ = load_windows_from(args.data, None, args.stride)
    tasks = [(i, w, args.mode, args.samples, args.seed, args.col_threshold) for i, w in enumerate(windows)]
    if args.jobs == 1:
        _init_worker(args.checkpoint)
        scores = [_eval_one(t) for t in tasks]
    else:
        _require(Path(args.checkpoint), "checkpoint")
        with ProcessPoolExecutor(args.jobs, initializer=_init_worker, initargs=(args.checkpoint,)) as pool:
            scores = list(pool.map(_eval_one, tasks))
    names = ("ade", "fde", "col", "tcc")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "metrics.csv", [(wid, k, s[k]) for wid, s in zip(ids, scores) for k in names])
    mean = {k: float(np.mean([s[k] for s in scores])) for k in names}
    summary = {
        "windows": len(windows),
        "mode": args.mode,
        "samples": args.samples,
        "col_threshold": args.col_threshold,
        "mean": mean,
    }
    _write_json(out / "summary.json", summary)
    print(" ".join(f"{k}={v:.4f}" for k, v in mean.items()))
    return 0


# -- group ---------------------------------------------------------------------------


def cmd_group(args):
    ids, windows, parts = load_windows_from(args.data, args.labels, args.stride)
    est, _ = _estimator(args.checkpoint, fixed_ratio=args.fixed_ratio)
    est.model_.fixed_ratio = args.fixed_ratio or est.model_.fixed_ratio
    predicted = est.predict_groups(windows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for wid, w, part in zip(ids, windows, predicted):
        lines.append(f"# {wid}")
        lines.extend(" ".join(str(int(w.ped_ids[i])) for i in g) for g in part.groups)
    (out / "groups.txt").write_text("\n".join(lines) + "\n")
    if parts is not None:
        rows, totals = [], {}
        for wid, pred, gt in zip(ids, predicted, parts):
            for k, v in metrics.group_scores(pred, gt).as_dict().items():
                rows.append((wid, k, v))
                totals.setdefault(k, []).append(v)
        _write_rows(out / "scores.csv", rows)
        mean = {k: float(np.mean(v)) for k, v in totals.items()}
        _write_json(out / "summary.json", {"windows": len(windows), "mean": mean})
        print(" ".join(f"{k}={v:.4f}" for k, v in mean.items()))
    else:
        print(f"grouped {len(windows)} windows")
    return 0


# -- plot ----------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22")


def convex_hull(points) -> list:
    """Counter-clockwise hull of 2-D points (monotone chain)."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def render_svg(window, samples, part, size=600, margin=20) -> str:
    """Observed tracks (solid), ground truth (dashed), samples (faint) and group hulls."""
    layers = [window.obs.reshape(-1, 2), samples.reshape(-1, 2)]
    if window.fut is not None:
        layers.append(window.fut.reshape(-1, 2))
    pts = np.concatenate(layers)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = (size - 2 * margin) / max(float((hi - lo).max()), 1e-9)

    def xy(p):
        # flip y so that north is up
        return f"{margin + (p[0] - lo[0]) * scale:.2f},{size - margin - (p[1] - lo[1]) * scale:.2f}"

    def polyline(track, color, extra=""):
        return f'<polyline points="{" ".join(xy(p) for p in track)}" fill="none" stroke="{color}"{extra}/>'

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for k, g in enumerate(part.groups):
        color = PALETTE[k % len(PALETTE)]
        hull = convex_hull(window.obs[list(g)].reshape(-1, 2))
        if len(hull) >= 3:
            out.append(f'<polygon points="{" ".join(xy(p) for p in hull)}" fill="{color}" fill-opacity="0.12" stroke="none"/>')
        for i in g:
            last = window.obs[i, -1:]
            for s in samples[:, i]:
                out.append(polyline(np.concatenate([last, s]), color, ' stroke-opacity="0.25" stroke-width="1"'))
            out.append(polyline(window.obs[i], color, ' stroke-width="2.5"'))
            if window.fut is not None:
                out.append(polyline(np.concatenate([last, window.fut[i]]), "black", ' stroke-width="1.5" stroke-dasharray="4 3"'))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args):
    ids, windows, _ = load_windows_from(args.data, None, args.stride)
    if not 0 <= args.window < len(windows):
        raise UsageError(f"--window must be in [0, {len(windows) - 1}]")
    est, _ = _estimator(args.checkpoint, mode=args.mode, n_samples=args.samples, seed=args.seed)
    w = windows[args.window]
    samples = est.sample([w], offset=args.window)[0]
    part = est.predict_groups([w])[0]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(w, samples, part))
    print(f"plotted window {ids[args.window]} to {out}")
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpgraph", description="Group-aware pedestrian trajectory forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, data=True, checkpoint=False):
        if data:
            p.add_argument("--data", nargs="+", required=True, help="trajectory text files or directories of them")
            p.add_argument("--stride", type=int, default=1, help="window start stride in frames (default 1)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
        p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")

    p = sub.add_parser("synth", help="write synthetic scenes with group labels")
    common(p, data=False)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--min-groups", type=int, default=2)
    p.add_argument("--max-groups", type=int, default=4)
    p.add_argument("--min-size", type=int, default=1)
    p.add_argument("--max-size", type=int, default=3)
    p.add_argument("--spacing", type=float, default=0.7, help="meters between group members")
    p.add_argument("--noise", type=float, default=0.0, help="positional noise sigma in meters")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--split-width", type=float, default=0.0, help="make group 0 split and rejoin by this many meters")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model", epilog=TRAIN_SCHEMA, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--labels", help="group label file, or directory of <scene>.groups.txt files")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--supervised", action="store_true", help="add the pairwise group loss (weight 1); needs --labels")
    p.add_argument("--fixed-ratio", action="store_true", help="replace the learned threshold by a 50%% node-reduction threshold")
    p.add_argument("--graphs", default=",".join(GRAPHS), help="interaction graphs to use (default all)")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--batch", type=int, default=1, help="windows per step")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score sampled forecasts", epilog=EVAL_SCHEMA, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, checkpoint=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--col-threshold", type=float, default=metrics.COLLISION_THRESHOLD, help="collision distance in meters")
    p.add_argument("--mode", choices=[m.value for m in SamplingMode], default="group", help="noise sharing")
    p.add_argument("--jobs", type=int, default=1, help="worker processes; output does not depend on it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("group", help="print predicted groups", epilog=GROUP_SCHEMA, formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, checkpoint=True)
    p.add_argument("--labels", help="ground-truth labels; enables PW/GM scores")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fixed-ratio", action="store_true", help="use the 50%% node-reduction threshold")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("plot", help="draw one window as SVG")
    common(p, checkpoint=True)
    p.add_argument("--out", required=True, help="SVG path")
    p.add_argument("--window", type=int, default=0, help="window index in input order")
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--mode", choices=[m.value for m in SamplingMode], default="group")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("gpgraph: a command is required (synth, train, eval, group, plot)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, GPGraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
