"""``trajfields`` command line: prepare, train, eval, predict, benchmark, visualize."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import dataset, evaluation, io, pipeline, training
from .config import RunConfig, load_config

log = logging.getLogger("trajfields")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    if not args.config:
        cfg = RunConfig()
    else:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {e.filename}") from None
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"invalid config {args.config}:\n{e}") from None
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "variant", None):
        cfg.model.variant = args.variant
    if getattr(args, "output", None):
        cfg.output_dir = str(Path(args.output).resolve())
    return cfg


def _out_dir(cfg: RunConfig, sub: str) -> Path:
    d = (cfg.resolve(cfg.output_dir) or Path(cfg.output_dir)) / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_prepare(args):
    cfg = _config(args)
    scenes, hit = pipeline.prepare(cfg)
    for sid, ps in scenes.items():
        print(f"{sid}: {len(ps.scene.tracks)} tracks, {len(ps.samples)} samples")
    print("cache hit" if hit else f"prepared -> {pipeline.cache_root(cfg)}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    if args.epochs:
        cfg.train.epochs = args.epochs
    plan = pipeline.split_plan(cfg, args.test_scene)
    scenes, _ = pipeline.prepare(cfg, plan.train_scenes)
    samples = [s for sid in plan.train_scenes for s in scenes[sid].samples]
    if not samples:
        raise pipeline.DataError(f"no training samples in scenes {plan.train_scenes}")
    out = _out_dir(cfg, f"train_{cfg.model.variant}_{'-'.join(plan.test_scenes)}")
    ckpt = training.train(
        samples, cfg.train_config_obj(), cfg.model_config_obj(), cfg.fields.params(),
        semantic={sid: scenes[sid].scene.semantic for sid in plan.train_scenes},
        out_dir=out, run_config=cfg.model_dump(),
    )
    print(ckpt)
    return EXIT_OK


def _write_eval(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "variant", "ade", "fde", "n_samples", "n_unassociated"])
        for sid, r in report.per_scene.items():
            w.writerow([sid, report.variant, f"{r.ade:.6f}", f"{r.fde:.6f}", r.n_samples, r.n_unassociated])
        w.writerow(["average", report.variant, f"{report.ade:.6f}", f"{report.fde:.6f}",
                    report.n_samples, report.n_unassociated])


def _print_report(report):
    print(f"{'scene':<12} {'ADE':>9} {'FDE':>9} {'samples':>8} {'unassoc':>8}")
    for sid, r in report.per_scene.items():
        print(f"{sid:<12} {r.ade:9.4f} {r.fde:9.4f} {r.n_samples:8d} {r.n_unassociated:8d}")
    print(f"{'average':<12} {report.ade:9.4f} {report.fde:9.4f} {report.n_samples:8d} {report.n_unassociated:8d}")


def cmd_eval(args):
    cfg = _config(args)
    if args.test_scene:
        test = [args.test_scene]
    elif (args.baseline or args.oracle_fields) and cfg.data.protocol == "leave-one-out":
        # nothing is trained, so every leave-one-out fold's test scene is evaluated
        test = sorted(cfg.data.scenes)
    else:
        test = list(pipeline.split_plan(cfg).test_scenes)
    scenes, _ = pipeline.prepare(cfg, test)
    samples = {sid: scenes[sid].samples for sid in test}
    units = {sid: scenes[sid].unit for sid in test}
    transforms = {sid: scenes[sid].scene.transform for sid in test}
    if args.baseline:
        report = evaluation.evaluate_linear(samples, units, transforms)
    elif args.oracle_fields:
        report = evaluation.evaluate_oracle_fields(samples, cfg.fields.params(), units, transforms)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint, --baseline linear or --oracle-fields")
        model, _, _ = io.load_checkpoint(args.checkpoint, cfg.model_config_obj())
        report = evaluation.evaluate(
            model, samples, cfg.fields.params(),
            semantic={sid: scenes[sid].scene.semantic for sid in test},
            units=units, transforms=transforms,
        )
    _print_report(report)
    path = _out_dir(cfg, "eval") / f"eval_{report.variant or 'model'}.csv"
    _write_eval(path, report)
    print(path)
    return EXIT_OK


def cmd_predict(args):
    cfg = _config(args)
    model, _, _ = io.load_checkpoint(args.checkpoint)
    scenes, _ = pipeline.prepare(cfg, [args.scene])
    scene = scenes[args.scene].scene
    T_obs, T_pred = model.cfg.T_obs, model.cfg.T_pred
    sample = observation_window(scene, args.t0, T_obs, T_pred)
    res, L, A = evaluation.predict_sample(model, sample, scene.semantic, cfg.fields.params(),
                                          keep_heatmaps=args.dump_fields)
    out = Path(args.out) if args.out else _out_dir(cfg, "predict")
    out.mkdir(parents=True, exist_ok=True)
    sid = f"{args.scene}@{args.t0}"
    io.write_trajectories(out / "trajectories.csv", io.decode_rows(sid, sample.agent_ids, res))
    io.write_trajectories(out / "observed.csv", (
        (sid, aid, t - T_obs, *sample.past[a, t], True)
        for a, aid in enumerate(sample.agent_ids) for t in range(T_obs)))
    if args.dump_fields:
        for t in range(T_pred):
            io.save_fields(out / f"fields_t{t:02d}.safetensors", L=L[t], A=A[t], step=t, sample_id=sid)
            dets = [[d.x, d.y, d.score] for d in res.detections[t]]
            io.save_fields(out / f"heatmap_t{t:02d}.safetensors", H=res.heatmaps[t], step=t,
                           sample_id=sid, detections=dets)
    print(out / "trajectories.csv")
    return EXIT_OK


def observation_window(scene: dataset.Scene, t0: int, T_obs: int, T_pred: int) -> dataset.Sample:
    """Agents fully observed over the ``T_obs`` frames preceding ``t0``."""
    step = scene.frame_step
    first = min(int(t.frames[0]) for t in scene.tracks) if scene.tracks else t0
    past_frames = t0 - step * np.arange(T_obs, 0, -1)
    if past_frames[0] < first:
        raise pipeline.DataError(
            f"t0={t0} leaves fewer than {T_obs} frames of history (scene starts at frame {first})")
    past, ids = [], []
    for tr in scene.tracks:
        lookup = dict(zip(tr.frames.tolist(), range(len(tr))))
        if all(int(f) in lookup for f in past_frames):
            past.append(tr.positions[[lookup[int(f)] for f in past_frames]])
            ids.append(tr.agent_id)
    if not past:
        raise pipeline.DataError(f"no agent is observed over all {T_obs} frames before t0={t0}")
    n = len(past)
    return dataset.Sample(np.asarray(past), np.full((n, T_pred, 2), np.nan),
                          np.zeros((n, T_pred), dtype=bool), scene.scene_id,
                          np.asarray(ids, dtype=np.int64), t0)


def cmd_benchmark(args):
    cfg = _config(args)
    out = _out_dir(cfg, "benchmark")
    if args.kernels:
        from .bench import kernel_benchmark

        for r in kernel_benchmark(repeats=args.kernel_repeats, seed=cfg.seed):
            print(f"{r['kernel']:<16} {r['backend']:<8} {r['mean_s'] * 1e3:9.3f} ms")
        return EXIT_OK
    if args.checkpoint:
        model, _, _ = io.load_checkpoint(args.checkpoint)
    else:
        from .model import TrajectoryNet

        training.seed_everything(cfg.seed)
        model = TrajectoryNet(cfg.model_config_obj())
    counts = [int(c) for c in args.counts.split(",")]
    report = evaluation.runtime_benchmark(model, counts, args.repeats, params=cfg.fields.params(),
                                          seed=cfg.seed)
    path = out / "runtime.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["agent_count", "stage", "mean_s", "std_s", "repeats"])
        w.writeheader()
        for r in report.rows:
            w.writerow(r)
            print(f"{r['agent_count']:>4} {r['stage']:<8} {r['mean_s']:.4f} +- {r['std_s']:.4f} s")
    print(f"forward max/min ratio: {report.ratio('forward'):.3f}")
    print(path)
    return EXIT_OK


def cmd_visualize(args):
    from . import viz

    files = viz.render_directory(args.input, args.out)
    if not files:
        print(f"nothing to visualize in {args.input}")
    for f in files:
        print(f)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="trajfields", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variant=True):
        sp.add_argument("--config", help="run config (YAML or JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output", help="override output_dir")
        if variant:
            sp.add_argument("--variant", choices=["none", "I1", "I2", "I3", "I4"])

    sp = sub.add_parser("prepare", help="load, normalize and cache scenes")
    common(sp, variant=False)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train on the split's training scenes")
    common(sp)
    sp.add_argument("--test-scene")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="ADE/FDE on test scenes")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", choices=["linear"])
    sp.add_argument("--oracle-fields", action="store_true", help="decode ground-truth fields")
    sp.add_argument("--test-scene")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="decode future tracks for one scene window")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--t0", type=int, required=True, help="frame id of the first predicted step")
    sp.add_argument("--dump-fields", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("benchmark", help="runtime vs agent count, or kernel backends")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--counts", default="1,4,21")
    sp.add_argument("--repeats", type=int, default=30)
    sp.add_argument("--kernels", action="store_true", help="compare compiled and numpy kernels")
    sp.add_argument("--kernel-repeats", type=int, default=20)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("visualize", help="render field dumps and trajectory CSVs")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_visualize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.DataError, dataset.AnnotationError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except training.NonFiniteLossError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
