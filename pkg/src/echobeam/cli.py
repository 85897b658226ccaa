"""``echobeam`` command line: simulate, train, evaluate, matrix, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from echobeam import fileio, metrics, phantom, training
from echobeam.checkpoint import load_checkpoint
from echobeam.errors import EchobeamError
from echobeam.report import render_report
from echobeam.rxpipeline import ApodizationWindow, das_reconstruct


def _cell(args) -> training.CellConfig:
    cell = training.CellConfig.load(args.config)
    if args.seed is not None:
        cell = replace(cell, dataset=replace(cell.dataset, seed=args.seed),
                       train=replace(cell.train, seed=args.seed))
    return cell


def _dataset(cell, out: Path):
    return training.build_dataset(cell.dataset, out / "dataset")


def _simulate_one(cfg: dict, out: Path, seed: int) -> None:
    geom, grid, pulse, speckle = phantom.simulation_setup(cfg)
    spec = cfg.get("phantom", {})
    kind = spec.get("kind", "speckle")
    seed = spec.get("seed", seed)
    if kind == "speckle":
        fld = phantom.make_speckle_phantom(speckle.density, speckle.depth_window,
                                           speckle.sector, seed)
    elif kind == "cyst":
        fld = phantom.make_cyst_phantom(speckle, tuple(spec["cyst_center"]), spec["cyst_radius"],
                                        spec.get("point_targets", ()), seed)
    elif kind == "cardiac":
        fld = phantom.make_cardiac_like_phantom(speckle, seed)
    else:
        raise EchobeamError(f"unknown phantom kind {kind!r}")
    data = phantom.simulate_channel_data(fld, geom, grid, pulse)
    name = cfg.get("name", f"{kind}-{seed}")
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_dataset(data, out / f"{name}.usiq")
    window = ApodizationWindow.make(cfg.get("apodization", "HANN"), geom.element_count)
    env = das_reconstruct(data, None, geom, grid, window).values
    fileio.write_pgm(metrics.display_image(env).T, out / f"{name}_sla.pgm")
    print(f"wrote {out / (name + '.usiq')} ({len(fld)} scatterers)")


def cmd_simulate(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    out = Path(args.out)
    if "dataset" in cfg:
        cell = _cell(args)
        split = _dataset(cell, out)
        print(f"dataset in {out / 'dataset'}: " + ", ".join(
            f"{k}={len(getattr(split, k))}" for k in ("train", "val", "test", "cyst")))
    else:
        _simulate_one(cfg, out, args.seed or 0)
    return 0


def cmd_train(args) -> int:
    cell = _cell(args)
    out = Path(args.out) / cell.name
    split = _dataset(cell, Path(args.out))
    tr = training.Trainer(cell, split)
    ckpt = out / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cell.to_dict(), indent=2, sort_keys=True))
    if args.stage is None:
        res = training.run_cell(cell, split, out)
        print(f"{cell.name}: done, outputs in {out}")
        for r in res.reports:
            print(f"  {r['family']:8s} {r['setting']:15s} PSNR {r['mean']['psnr']:.3f}")
        return 0
    if args.stage == 1:
        state = load_checkpoint(args.resume, cell.hash()) if args.resume else None
        res = tr.train_stage1(ckpt, state)
        curves = {"stage1": res.curve}
        if args.resume and (out / "curves.csv").exists():
            old = training.read_curves(out / "curves.csv").get("stage1", training.Curve())
            curves["stage1"] = old.merged(res.curve)
        training.write_curves(out / "curves.csv", curves)
        print(f"stage 1 finished at iteration {res.state.iteration}; best val L1 "
              f"{res.best.value:.6f} at {res.best.iteration}")
        return 0
    pre = load_checkpoint(ckpt / "stage1_pre.ckpt", cell.hash())
    curves = training.read_curves(out / "curves.csv") if (out / "curves.csv").exists() else {}
    s1 = None
    if "stage1" in curves and (ckpt / "stage1_final.ckpt").exists():
        final = load_checkpoint(ckpt / "stage1_final.ckpt", cell.hash())
        s1 = training.StageResult(final, curves["stage1"], training.Best())
    joint, control = tr.train_stage2_joint(pre, s1, ckpt)
    curves.update(joint=joint.curve, control=control.curve)
    training.write_curves(out / "curves.csv", curves)
    print(f"stage 2 finished: joint val L1 {joint.curve.final_val:.6f}, control "
          f"{control.curve.final_val:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent.parent / "config.json"
    args.config = cfg_path
    cell = _cell(args)
    state = load_checkpoint(ckpt, cell.hash())
    split = _dataset(cell, Path(args.out))
    frames = getattr(split, args.split)
    tr = training.Trainer(cell, split)
    models = {"DAS": (None, state.scheme.psi), "Network": (state.net, state.scheme.psi)}
    family = training.CYST if args.split == "cyst" else training.CARDIAC
    reports = tr.evaluate(frames, models, family)
    dest = Path(args.out) / f"eval_{ckpt.stem}_{args.split}.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps({"checkpoint": str(ckpt), "iteration": state.iteration,
                                "reports": reports}, indent=2, sort_keys=True) + "\n")
    for r in reports:
        print(f"{r['setting']:8s} PSNR {r['mean']['psnr']:.3f}  SSIM {r['mean']['ssim']:.4f}  "
              f"L1 {r['mean']['l1']:.5f}")
    print(f"wrote {dest}")
    return 0


def cmd_matrix(args) -> int:
    base = _cell(args)
    out = Path(args.out)
    split = _dataset(base, out)
    results = training.run_experiment_matrix(base, out, split=split)
    rep = render_report([out / name for name in results], out / "report")
    print((out / "report" / "report.txt").read_text())
    return 1 if any(r.status != "ok" for r in results.values()) or rep.violations else 0


def cmd_report(args) -> int:
    out = Path(args.out) if args.out != "out" else Path(args.run_dir) / "report"
    rep = render_report([args.run_dir], out)
    print((out / "report.txt").read_text())
    return 1 if rep.violations else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads (1 keeps runs bitwise reproducible)")
    common.add_argument("--out", default="out", help="output root directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="echobeam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate a phantom or a dataset")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("train", parents=[common], help="train one experiment cell")
    s.add_argument("--config", required=True)
    s.add_argument("--stage", type=int, choices=(1, 2))
    s.add_argument("--resume", help="stage-1 checkpoint to continue from")
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=("test", "val", "cyst", "train"), default="test")
    s.add_argument("--config", help="cell config (default: config.json beside the run)")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("matrix", parents=[common], help="run the full experiment matrix")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_matrix)
    s = sub.add_parser("report", parents=[common], help="tabulate finished cells")
    s.add_argument("--run-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (EchobeamError, OSError) as exc:
        print(f"echobeam: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
