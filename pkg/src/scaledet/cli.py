"""Command-line interface.

Subcommands: gen, pool, gradcheck, compare, pipeline, eval. Flags may also
be supplied through ``--config FILE`` holding ``key=value`` lines (keys are
the long flag names); explicit flags win. Report-producing commands write
a PNG figure next to the CSV unless ``--no-figures`` is given. Every
command is deterministic given its seed flags.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Callable, Sequence, TypeVar

from . import io as sio
from .errors import EmptyRoiError, FileFormatError, GenerationError, UndefinedScoreError
from .evaluation import evaluate_by_scale
from .figures import save_compare_figure, save_eval_figure, save_gradcheck_figure
from .harness import (
    ALL_CASES,
    CompareConfig,
    GradcheckConfig,
    run_compare,
    run_gradcheck,
    run_pipeline,
)
from .pooling import CaseTag, caroi_pool_forward, roi_pool_forward
from .routing import load_scale_stats
from .tensor import load_tensor, save_tensor

T = TypeVar("T")


def _int_pair(text: str, sep: str) -> tuple[int, int]:
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two integers separated by {sep!r}: {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _scale_range(text: str) -> tuple[int, int]:
    return _int_pair(text, ",")


def _map_size(text: str) -> tuple[int, int]:
    return _int_pair(text, "x")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def _case_list(text: str) -> tuple[CaseTag, ...]:
    by_value = {c.value: c for c in ALL_CASES}
    cases = []
    for part in text.split(","):
        part = part.strip()
        if part not in by_value:
            raise argparse.ArgumentTypeError(
                f"unknown case {part!r}; choose from {sorted(by_value)}"
            )
        cases.append(by_value[part])
    if not cases:
        raise argparse.ArgumentTypeError("empty case list")
    return tuple(cases)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


class _Cfg:
    """Resolves option values: explicit flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict[str, str] = {}
        if getattr(args, "config", None):
            self.file = sio.parse_config(args.config)

    def get(self, key: str, cast: Callable[[str], T], default: T) -> T:
        value = getattr(self.args, key.replace("-", "_"))
        if value is not None:
            return value
        if key in self.file:
            return cast(self.file[key])
        return default


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--out", required=True, help="output path")


def _outpath(raw: str) -> Path:
    path = Path(raw)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header: list[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _cmd_gen(args: argparse.Namespace) -> int:
    from .synth import gen_scene

    cfg = _Cfg(args)
    size = cfg.get("size", _map_size, (160, 160))
    scene = gen_scene(
        cfg.get("seed", int, 0),
        cfg.get("patterns", int, 8),
        cfg.get("scale-range", _scale_range, (3, 48)),
        channels=cfg.get("channels", int, 1),
        height=size[0],
        width=size[1],
        stride=cfg.get("stride", int, 1),
    )
    out = _outpath(args.out)
    save_tensor(scene.feature_map, out)
    sio.write_proposals(_sibling(out, ".proposals.csv"), [(roi, 1.0) for roi, _ in scene.planted])
    _write_csv(
        _sibling(out, ".patterns.csv"),
        ["index", "pattern_id"],
        [(i, pid) for i, (_, pid) in enumerate(scene.planted)],
    )
    print(f"wrote {out} ({scene.feature_map.channels}x{scene.feature_map.height}"
          f"x{scene.feature_map.width}), {len(scene.planted)} patterns")
    return 0


# ---------------------------------------------------------------------------
# pool
# ---------------------------------------------------------------------------

def _cmd_pool(args: argparse.Namespace) -> int:
    cfg = _Cfg(args)
    method = cfg.get("method", str, "caroi")
    if method not in ("caroi", "roi"):
        raise ValueError(f"unknown pooling method {method!r} (expected 'caroi' or 'roi')")
    pooled_size = cfg.get("pooled-size", int, 6)
    stride = cfg.get("stride", int, 1)
    fm = load_tensor(args.fm)
    proposals = sio.read_proposals(args.proposals)
    forward = caroi_pool_forward if method == "caroi" else roi_pool_forward

    out = _outpath(args.out)
    rows = []
    for i, (roi, score) in enumerate(proposals):
        pooled = forward(fm, roi, pooled_size, stride)
        tensor_path = _sibling(out, f"_{i:04d}.spt")
        save_tensor(pooled.tensor, tensor_path)
        rec = pooled.record
        rows.append(
            [i, roi.batch_index, repr(roi.x1), repr(roi.y1), repr(roi.x2), repr(roi.y2),
             repr(score), rec.case.value, rec.factor_h, rec.factor_w, tensor_path.name]
        )
    _write_csv(
        out,
        ["index", "batch", "x1", "y1", "x2", "y2", "score", "case", "factor_h", "factor_w", "path"],
        rows,
    )
    print(f"pooled {len(rows)} proposals ({method}, P={pooled_size}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _Cfg(args)
    fm_size = cfg.get("fm-size", _map_size, (12, 12))
    config = GradcheckConfig(
        seed=cfg.get("seed", int, 0),
        pooled_size=cfg.get("pooled-size", int, 6),
        channels=cfg.get("channels", int, 2),
        fm_height=fm_size[0],
        fm_width=fm_size[1],
        stride=cfg.get("stride", int, 1),
        cases=cfg.get("cases", _case_list, ALL_CASES),
        configs_per_case=cfg.get("configs-per-case", int, 5),
    )
    report = run_gradcheck(config)
    out = _outpath(args.out)
    _write_csv(
        out,
        ["case", "n_configs", "max_rel_err", "tolerance", "pass"],
        [
            [row.case.value, row.n_configs, repr(row.max_rel_err), repr(report.tolerance),
             int(row.max_rel_err <= report.tolerance)]
            for row in report.rows
        ],
    )
    if not args.no_figures:
        save_gradcheck_figure(report, _sibling(out, ".png"))
    for row in report.rows:
        status = "pass" if row.max_rel_err <= report.tolerance else "FAIL"
        print(f"{row.case.value:16s} n={row.n_configs} max_rel_err={row.max_rel_err:.3e} {status}")
    print(f"cases covered: {', '.join(c.value for c in report.covered)}"
          + ("" if report.covers_all_cases else " (incomplete)"))
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _cmd_compare(args: argparse.Namespace) -> int:
    cfg = _Cfg(args)
    size = cfg.get("size", _map_size, (160, 160))
    lo, hi = cfg.get("scale-range", _scale_range, (3, 48))
    config = CompareConfig(
        seed=cfg.get("seed", int, 0),
        scenes=cfg.get("scenes", int, 20),
        patterns=cfg.get("patterns", int, 8),
        scale_lo=lo,
        scale_hi=hi,
        pooled_size=cfg.get("pooled-size", int, 6),
        channels=cfg.get("channels", int, 1),
        height=size[0],
        width=size[1],
        stride=cfg.get("stride", int, 1),
    )
    rows, summaries = run_compare(config)
    out = _outpath(args.out)
    _write_csv(
        out,
        ["scene_seed", "pattern_id", "grid_h", "grid_w", "case", "size_class", "scale_bin",
         "score_roi", "score_caroi"],
        [
            [r.scene_seed, r.pattern_id, r.grid_h, r.grid_w, r.case.value, r.size_class,
             r.scale_bin, repr(r.score_roi), repr(r.score_caroi)]
            for r in rows
        ],
    )
    _write_csv(
        _sibling(out, ".summary.csv"),
        ["size_class", "n", "mean_score_roi", "mean_score_caroi"],
        [
            [s.size_class, s.n, repr(s.mean_score_roi), repr(s.mean_score_caroi)]
            for s in summaries
        ],
    )
    if not args.no_figures:
        save_compare_figure(rows, summaries, _sibling(out, ".png"))
    for s in summaries:
        print(f"{s.size_class:6s} n={s.n:4d} mean RoI={s.mean_score_roi:+.4f} "
              f"mean CARoI={s.mean_score_caroi:+.4f}")
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _resolve_thresholds(cfg: _Cfg) -> list[float]:
    thresholds = cfg.get("thresholds", _float_list, None)
    if thresholds is not None:
        return thresholds
    branches = cfg.get("branches", int, 2)
    if branches == 1:
        return []
    stats_path = cfg.args.stats
    if stats_path is None:
        raise ValueError("provide --thresholds or --stats (scale statistics JSON)")
    stats = load_scale_stats(stats_path)
    if branches == 2:
        return [stats.median]
    raise ValueError("more than two branches require explicit --thresholds")


def _cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _Cfg(args)
    dets = sio.read_detections(args.dets)
    thresholds = _resolve_thresholds(cfg)
    refined = run_pipeline(
        dets,
        thresholds,
        method=cfg.get("method", str, "soft"),
        iou_threshold=cfg.get("iou", float, 0.5),
        rho=cfg.get("rho", float, 0.9),
    )
    sio.write_detections(_outpath(args.out), refined)
    print(f"{len(dets)} detections in, {len(refined)} out "
          f"(thresholds={','.join(repr(t) for t in thresholds) or 'none'})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _Cfg(args)
    dets = sio.read_image_detections(args.dets)
    gts = sio.read_ground_truth(args.gt)
    results = evaluate_by_scale(
        dets,
        gts,
        iou_threshold=cfg.get("iou", float, 0.7),
        interpolation=cfg.get("interp", str, "all"),
    )
    out = _outpath(args.out)
    _write_csv(
        out,
        ["class", "scale_bin", "ap", "n_gt", "n_tp", "n_fp"],
        [[r.class_id, r.bin.value, repr(r.ap), r.n_gt, r.n_tp, r.n_fp] for r in results],
    )
    if not args.no_figures:
        save_eval_figure(results, _sibling(out, ".png"))
    for r in results:
        print(f"{r.class_id:10s} {r.bin.value:7s} AP={r.ap:.4f} (gt={r.n_gt} tp={r.n_tp} fp={r.n_fp})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scaledet",
        description="Scale-insensitive detection operators: pooling, routing, "
                    "suppression, and scale-binned evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene (tensor + proposals)")
    _add_common(p)
    p.add_argument("--patterns", type=int, help="number of planted patterns (default 8)")
    p.add_argument("--scale-range", type=_scale_range, help="pattern size range in cells, LO,HI (default 3,48)")
    p.add_argument("--size", type=_map_size, help="feature map size HxW (default 160x160)")
    p.add_argument("--channels", type=int, help="feature map channels (default 1)")
    p.add_argument("--stride", type=int, help="cells-to-pixels stride (default 1)")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("pool", help="pool proposals from a feature map tensor")
    _add_common(p)
    p.add_argument("--fm", required=True, help="feature map tensor file")
    p.add_argument("--proposals", required=True, help="proposals CSV (batch,x1,y1,x2,y2,score)")
    p.add_argument("--pooled-size", type=int, help="output grid size P (default 6)")
    p.add_argument("--stride", type=int, help="cells-to-pixels stride (default 1)")
    p.add_argument("--method", choices=("caroi", "roi"), help="pooling variant (default caroi)")
    p.set_defaults(func=_cmd_pool)

    p = sub.add_parser("gradcheck", help="finite-difference check of the pooling backward")
    _add_common(p)
    p.add_argument("--pooled-size", type=int, help="output grid size P (default 6)")
    p.add_argument("--channels", type=int, help="feature map channels (default 2)")
    p.add_argument("--fm-size", type=_map_size, help="feature map size HxW (default 12x12)")
    p.add_argument("--stride", type=int, help="cells-to-pixels stride (default 1)")
    p.add_argument("--cases", type=_case_list,
                   help="comma-separated case subset (default all four)")
    p.add_argument("--configs-per-case", type=int, help="proposals checked per case (default 5)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("compare", help="structure-preservation study of both pooling paths")
    _add_common(p)
    p.add_argument("--scenes", type=int, help="number of scenes (default 20)")
    p.add_argument("--patterns", type=int, help="patterns per scene (default 8)")
    p.add_argument("--scale-range", type=_scale_range, help="pattern size range LO,HI (default 3,48)")
    p.add_argument("--size", type=_map_size, help="feature map size HxW (default 160x160)")
    p.add_argument("--channels", type=int, help="feature map channels (default 1)")
    p.add_argument("--stride", type=int, help="cells-to-pixels stride (default 1)")
    p.add_argument("--pooled-size", type=int, help="output grid size P (default 6)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("pipeline", help="route, fuse, and suppress a detections file")
    _add_common(p)
    p.add_argument("--dets", required=True, help="detections CSV (class,score,x1,y1,x2,y2)")
    p.add_argument("--stats", help="scale statistics JSON (for the default median threshold)")
    p.add_argument("--thresholds", type=_float_list, help="explicit branch thresholds, comma-separated")
    p.add_argument("--branches", type=int, help="number of branches (default 2)")
    p.add_argument("--method", choices=("soft", "nms"), help="suppression variant (default soft)")
    p.add_argument("--iou", type=float, help="suppression IoU threshold (default 0.5)")
    p.add_argument("--rho", type=float, help="confidence ratio for coordinate averaging (default 0.9)")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("eval", help="scale-binned average precision of detections")
    _add_common(p)
    p.add_argument("--dets", required=True, help="detections CSV with image column")
    p.add_argument("--gt", required=True, help="ground-truth CSV")
    p.add_argument("--iou", type=float, help="matching IoU threshold (default 0.7)")
    p.add_argument("--interp", choices=("all", "11point"), help="AP interpolation (default all)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, EmptyRoiError, GenerationError,
            UndefinedScoreError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
