"""Command-line pipeline: generate, train, refine, evaluate, and the two
analysis sweeps (refinement-iteration sweep, heading-angle energy scan).

Every command prints the fully resolved configuration, embeds it in a
comment line at the top of each CSV it writes, and is deterministic under
a fixed seed except for the two documented timing fields (the seconds
column of the training loss log and the scenes-per-second column of the
iteration sweep), which are genuine wall-clock measurements.

Failures exit nonzero with one machine-parsable line on stderr:
`error:<category>: <message>` where category is one of config, input,
numeric, generation, io.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, build_run_config, parse_config_file, resolved_line
from .energynet import EnergyNetDims, forward_batch, init_params, load_checkpoint, save_checkpoint
from .errors import BoxEbmError, ConfigError, GenerationError, InputError, NumericError
from .evalkit import GroundTruth, evaluate
from .kittiio import from_box3d, parse_label_file, to_box3d, write_result_file
from .nce import train
from .refine import Detection, RefineConfig, refine_all
from .synthscene import (
    FileScenes,
    gen_scene_by_index,
    read_manifest,
    save_scene,
    scene_filename,
    split_indices,
)
from .geometry import bev_iou, to_bev

ERROR_CATEGORIES = [
    (ConfigError, "config"),
    (NumericError, "numeric"),
    (GenerationError, "generation"),
    (InputError, "input"),
    (BoxEbmError, "input"),
    (OSError, "io"),
]


def _write_csv(path: Path, comment: str, header: list[str], rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# {comment}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def _net_dims(cfg: RunConfig, channels: int) -> EnergyNetDims:
    return EnergyNetDims(
        feat_len=cfg.pool.feature_len(channels),
        enc_dim=cfg.net.enc_dim,
        head_dims=(cfg.net.head1, cfg.net.head2),
    )


def _load_params_checked(checkpoint: Path, cfg: RunConfig, channels: int):
    params = load_checkpoint(checkpoint)
    expect = cfg.pool.feature_len(channels)
    if params.dims.feat_len != expect:
        raise ConfigError(
            f"checkpoint pooled-feature length {params.dims.feat_len} does not match "
            f"pool {cfg.pool.grid_w}x{cfg.pool.grid_l} x {channels} channels = {expect}"
        )
    return params


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise ConfigError(f"--{name} is required for this command")


def _dets_path(out_dir: Path) -> Path:
    return out_dir / "dets"


def cmd_synth_gen(cfg: RunConfig, args) -> int:
    _require(args, "out")
    if cfg.n_scenes < 1:
        raise ConfigError("empty dataset requested")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ids, _ = split_indices(cfg.n_scenes)
    n_train = len(train_ids)
    lines = []
    n_boxes = 0
    iou_sum = 0.0
    for i in range(cfg.n_scenes):
        scene = gen_scene_by_index(cfg.synth, i)
        fname = scene_filename(i)
        save_scene(scene, out / fname)
        split = "train" if i < n_train else "val"
        lines.append(f"{i:06d} {split} {fname}")
        n_boxes += len(scene.gts)
        iou_sum += sum(
            bev_iou(to_bev(d.box), to_bev(g.box))
            for d, g in zip(scene.initial_dets, scene.gts)
        )
    (out / "manifest.txt").write_text("".join(line + "\n" for line in lines))
    mean_iou = iou_sum / n_boxes if n_boxes else float("nan")
    print(f"scenes={cfg.n_scenes} boxes={n_boxes} mean_initial_bev_iou={mean_iou:.4f}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    _require(args, "dataset", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = FileScenes(args.dataset, split=args.split)
    if len(dataset) == 0:
        raise InputError(f"no {args.split!r} scenes under {args.dataset}")
    channels = dataset[0].grid.channels
    if args.resume:
        params = _load_params_checked(Path(args.resume), cfg, channels)
    else:
        params = init_params(cfg.seed, _net_dims(cfg, channels))
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(params, ckpt)  # a last-good checkpoint always exists
    trained, records = train(
        params, dataset, cfg.train, cfg.noise.build(), cfg.pool,
        on_epoch=lambda p, _epoch: save_checkpoint(p, ckpt),
    )
    save_checkpoint(trained, ckpt)
    _write_csv(out / "loss.csv", resolved_line(cfg),
               ["epoch", "step", "loss", "seconds"],
               [(r.epoch, r.step, r.loss, r.seconds) for r in records])
    print(f"steps={len(records)} final_loss={records[-1].loss:.6f} checkpoint={ckpt}")
    return 0


def _refine_scene(params, scene, cfg: RunConfig, rcfg: RefineConfig):
    refined, traces = refine_all(params, scene.grid, scene.initial_dets, cfg.pool, rcfg)
    return refined, traces


def cmd_refine(cfg: RunConfig, args) -> int:
    _require(args, "dataset", "checkpoint", "out")
    out = Path(args.out)
    dets_dir = _dets_path(out)
    dets_dir.mkdir(parents=True, exist_ok=True)
    scenes = FileScenes(args.dataset, split=args.split)
    if len(scenes) == 0:
        raise InputError(f"no {args.split!r} scenes under {args.dataset}")
    channels = scenes[0].grid.channels
    params = _load_params_checked(Path(args.checkpoint), cfg, channels)
    trace_rows = []
    f_gain = 0.0
    n_dets = 0
    for i in range(len(scenes)):
        scene = scenes[i]
        refined, traces = _refine_scene(params, scene, cfg, cfg.refine)
        labels = [from_box3d(d.box, score=d.score) for d in refined]
        (dets_dir / f"{scene.id:06d}.txt").write_text(write_result_file(labels))
        for di, trace in enumerate(traces):
            accepted = [row.proposal_value for row in trace if row.accepted]
            if trace:
                f_gain += (accepted[-1] if accepted else trace[0].current_value) - trace[0].current_value
            n_dets += 1
            if args.traces:
                trace_rows.extend(
                    (scene.id, di, r.iteration, r.current_value, r.proposal_value,
                     int(r.accepted), r.step_size)
                    for r in trace
                )
    if args.traces:
        _write_csv(out / "traces.csv", resolved_line(cfg),
                   ["scene_id", "det_index", "iteration", "current_value",
                    "proposal_value", "accepted", "step_size"],
                   trace_rows)
    mean_gain = f_gain / n_dets if n_dets else 0.0
    print(f"scenes={len(scenes)} detections={n_dets} mean_f_increase={mean_gain:.6f}")
    return 0


def _gts_and_initial_from_scenes(scenes: FileScenes):
    gts = {}
    initial = {}
    for i in range(len(scenes)):
        scene = scenes[i]
        gts[scene.id] = scene.gts
        initial[scene.id] = scene.initial_dets
    return gts, initial


def _gts_from_kitti(label_dir: Path):
    gts = {}
    for path in sorted(Path(label_dir).glob("*.txt")):
        labels = parse_label_file(path.read_text())
        entries = []
        for lab in labels:
            if not lab.is_evaluable:
                continue
            entries.append(GroundTruth(
                box=to_box3d(lab),
                bbox_height=lab.bbox_bottom - lab.bbox_top,
                occlusion=min(max(lab.occluded, 0), 3),
                truncation=min(max(lab.truncated, 0.0), 1.0),
            ))
        gts[int(path.stem)] = entries
    if not gts:
        raise InputError(f"no label files under {label_dir}")
    return gts


def _dets_from_kitti(dets_dir: Path, expected_ids):
    dets = {}
    for path in sorted(Path(dets_dir).glob("*.txt")):
        labels = parse_label_file(path.read_text())
        rows = []
        for lab in labels:
            if lab.score is None:
                raise InputError(f"{path} has a detection without a score")
            rows.append(Detection(box=to_box3d(lab), score=lab.score))
        dets[int(path.stem)] = rows
    missing = sorted(set(expected_ids) - set(dets))
    extra = sorted(set(dets) - set(expected_ids))
    if missing or extra:
        raise InputError(f"detection/GT scene sets differ; missing={missing} extra={extra}")
    return dets


def _rel_gain(initial: float, refined: float) -> float:
    if initial == 0.0:
        return float("inf") if refined > 0 else 0.0
    return (refined - initial) / initial


def cmd_eval(cfg: RunConfig, args) -> int:
    _require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset is None and args.kitti_gt is None:
        raise ConfigError("eval needs --dataset (scene files) or --kitti-gt (label files)")
    initial = None
    if args.dataset is not None:
        scenes = FileScenes(args.dataset, split=args.split)
        if len(scenes) == 0:
            raise InputError(f"no {args.split!r} scenes under {args.dataset}")
        gts, initial = _gts_and_initial_from_scenes(scenes)
    else:
        gts = _gts_from_kitti(Path(args.kitti_gt))
    refined = None
    if args.dets is not None:
        dets_root = Path(args.dets)
        if (dets_root / "dets").exists():  # accept a refine --out directory directly
            dets_root = dets_root / "dets"
        refined = _dets_from_kitti(dets_root, gts.keys())
    if initial is None and refined is None:
        raise ConfigError("nothing to evaluate: provide --dets and/or a scene --dataset")

    kw = dict(modes=cfg.eval.modes, thresholds=cfg.eval.thresholds,
              difficulties=cfg.eval.difficulties)
    res_initial = evaluate(initial, gts, **kw) if initial is not None else None
    res_refined = evaluate(refined, gts, **kw) if refined is not None else None

    ap_rows = []
    pr_rows = []
    recalls_header = [x for i in range(1, 41) for x in (f"recall_{i:02d}", f"precision_{i:02d}")]
    for mode in cfg.eval.modes:
        for thr in cfg.eval.thresholds:
            for diff in cfg.eval.difficulties:
                key = (mode, thr, diff)
                ap_i = res_initial[key].ap if res_initial else ""
                ap_r = res_refined[key].ap if res_refined else ""
                rel = _rel_gain(ap_i, ap_r) if res_initial and res_refined else ""
                ap_rows.append((mode, thr, diff, ap_i, ap_r, rel))
                for source, res in (("initial", res_initial), ("refined", res_refined)):
                    if res is None:
                        continue
                    flat = [x for r, p in res[key].pr_curve for x in (r, p)]
                    pr_rows.append((mode, thr, diff, source, res[key].ap, *flat))
    _write_csv(out / "ap.csv", resolved_line(cfg),
               ["mode", "threshold", "difficulty", "ap_initial", "ap_refined", "rel_improvement"],
               ap_rows)
    _write_csv(out / "pr.csv", resolved_line(cfg),
               ["mode", "threshold", "difficulty", "source", "ap", *recalls_header],
               pr_rows)
    print(f"wrote {out / 'ap.csv'} ({len(ap_rows)} rows)")
    return 0


def cmd_sweep_t(cfg: RunConfig, args) -> int:
    _require(args, "dataset", "checkpoint", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = FileScenes(args.dataset, split=args.split)
    if len(scenes) == 0:
        raise InputError(f"no {args.split!r} scenes under {args.dataset}")
    channels = scenes[0].grid.channels
    params = _load_params_checked(Path(args.checkpoint), cfg, channels)
    rows = []
    for t in cfg.sweep.t_values:
        rcfg = RefineConfig(steps=int(t), step_size=cfg.refine.step_size, decay=cfg.refine.decay)
        dets_by_scene = {}
        gts_by_scene = {}
        refine_seconds = 0.0
        for i in range(len(scenes)):
            scene = scenes[i]
            t0 = time.perf_counter()
            refined, _ = refine_all(params, scene.grid, scene.initial_dets, cfg.pool, rcfg)
            refine_seconds += time.perf_counter() - t0
            dets_by_scene[scene.id] = refined
            gts_by_scene[scene.id] = scene.gts
        res = evaluate(dets_by_scene, gts_by_scene, modes=("3d",),
                       thresholds=cfg.eval.thresholds, difficulties=("all",))
        mean_ap = float(np.mean([res[("3d", thr, "all")].ap for thr in cfg.eval.thresholds]))
        throughput = len(scenes) / refine_seconds if refine_seconds > 0 else float("inf")
        rows.append((int(t), mean_ap, throughput))
    comment = resolved_line(cfg) + " | mean_ap averages 3D AP over eval.thresholds; throughput times the refinement step only"
    _write_csv(out / "sweep_t.csv", comment, ["T", "mean_ap_3d", "scenes_per_sec"], rows)
    print(f"wrote {out / 'sweep_t.csv'} ({len(rows)} rows)")
    return 0


def cmd_angle_scan(cfg: RunConfig, args) -> int:
    _require(args, "dataset", "checkpoint", "out", "scene-id")
    out = Path(args.out)
    scenes = FileScenes(args.dataset)
    by_id = {scenes.entries[i].id: i for i in range(len(scenes))}
    if args.scene_id not in by_id:
        raise InputError(f"scene id {args.scene_id} not in dataset")
    scene = scenes[by_id[args.scene_id]]
    if not 0 <= args.det_index < len(scene.initial_dets):
        raise InputError(
            f"detection index {args.det_index} out of range "
            f"(scene has {len(scene.initial_dets)} detections)"
        )
    params = _load_params_checked(Path(args.checkpoint), cfg, scene.grid.channels)
    base = scene.initial_dets[args.det_index].box.as_array()
    deltas = np.linspace(0.0, 2.0 * np.pi, cfg.angle_points)
    boxes = np.tile(base, (len(deltas), 1))
    boxes[:, 6] += deltas
    values, _ = forward_batch(params, scene.grid, boxes, cfg.pool)
    _write_csv(out / "angle_scan.csv", resolved_line(cfg), ["delta_phi", "energy"],
               list(zip(deltas.tolist(), values.tolist())))
    print(f"wrote {out / 'angle_scan.csv'} ({len(deltas)} rows)")
    return 0


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "sweep-T": cmd_sweep_t,
    "angle-scan": cmd_angle_scan,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxebm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dataset", help="scene dataset directory")
        p.add_argument("--checkpoint", help="energy-net checkpoint file")
        p.add_argument("--split", default=None, help="dataset split to use")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue training from")
        if name == "refine":
            p.add_argument("--traces", action="store_true", help="dump per-detection traces")
        if name == "eval":
            p.add_argument("--dets", help="directory of KITTI result files to evaluate")
            p.add_argument("--kitti-gt", dest="kitti_gt", help="directory of KITTI label files as ground truth")
        if name == "angle-scan":
            p.add_argument("--scene-id", dest="scene_id", type=int)
            p.add_argument("--det-index", dest="det_index", type=int, default=0)
    return parser


_SPLIT_DEFAULTS = {"train": "train", "refine": "val", "eval": "val", "sweep-T": "val"}


def load_run_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return build_run_config(file_values, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.split is None:
        args.split = _SPLIT_DEFAULTS.get(args.command)
    try:
        cfg = load_run_config(args)
        print(f"# {resolved_line(cfg)}")
        return COMMANDS[args.command](cfg, args)
    except tuple(cls for cls, _ in ERROR_CATEGORIES) as exc:
        for cls, category in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                print(f"error:{category}: {exc}", file=sys.stderr)
                return 1
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
