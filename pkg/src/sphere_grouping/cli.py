"""Command line driver: ``sphere-grouping <command> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 numerical failure (including a failed gradient
check), 2 bad input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, plots
from .decode import ProposalSet, multi_bandwidth_proposals
from .errors import InputError, SphereGroupingError
from .evaluation import AR_THRESHOLDS, average_recall, best_iou, recall_at, similarity_histogram
from .gbms import KernelConfig, bandwidth_from_margin
from .geometry import calibrated_similarity
from .gradcheck import run_gradcheck
from .loss import InstanceLabeling, LossConfig, margin_lower_bound, margin_upper_bound
from .synthetic import GaussianMixSpec, ShapeSceneSpec, gen_1d_gaussians, gen_instance_scene, gen_scene_set
from .toy import (
    FixedRegressor,
    LossMode,
    PerPixelNet,
    ToyTrainConfig,
    evaluate_net,
    mean_shift_modes,
    segment,
    toy_1d_descent,
    train_toy_instances,
)

log = logging.getLogger("sphere_grouping")

THREADS_ENV = "SPHERE_GROUPING_THREADS"


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return [float(x) for x in str(v).split(",") if x.strip()]


KEYS = {
    "alpha": float,
    "beta": float,
    "eta": float,
    "loops": int,
    "sample_size": int,
    "seed": int,
    "steps": int,
    "lr": float,
    "loss_mode": str,
    "tau": float,
    "out_dir": str,
    # scene generation and the network
    "width": int,
    "height": int,
    "min_shapes": int,
    "max_shapes": int,
    "noise": float,
    "train_scenes": int,
    "test_scenes": int,
    "test_seed": int,
    "dim": int,
    "hidden": int,
    "net": str,
    "betas": _floats,
    # 1-D toy
    "bandwidth": float,
    "loss_scale": float,
    "count": int,
    # gradient check
    "instances": int,
    "fault": str,
    # margin bounds
    "n": int,
    "C": float,
    # misc
    "svg": _bool,
    "pred": str,
    "gt": str,
}

SCENE_DEFAULTS = dict(
    alpha=0.5, eta=1.0, loops=5, sample_size=1024, seed=0, steps=500, lr=3.0,
    loss_mode="all_loops", tau=0.95, out_dir="out", width=24, height=24, min_shapes=2,
    max_shapes=3, noise=0.05, train_scenes=20, test_scenes=10, test_seed=1000, dim=8,
    hidden=32, betas=[3.0, 6.0, 12.0], svg=False,
)
DEFAULTS = {
    "margin": dict(C=0.0),
    "gradcheck": dict(instances=100, seed=0, loops=2),
    "toy1d": dict(steps=30, lr=0.1, bandwidth=0.2, loss_scale=0.25, eta=1.0, seed=0, count=100,
                  out_dir="out", svg=False),
    "gen": SCENE_DEFAULTS,
    "train": SCENE_DEFAULTS,
    "eval": SCENE_DEFAULTS,
    "proposals": SCENE_DEFAULTS,
}


def merged_config(command: str, config_path, flags: dict) -> dict:
    """Command defaults, overridden by the config file, overridden by flags."""
    values = dict(DEFAULTS[command])
    if config_path:
        for key, raw in io.parse_config(config_path).items():
            if key not in KEYS:
                raise InputError(f"unknown config key {key!r}")
            try:
                values[key] = KEYS[key](raw)
            except ValueError as exc:
                raise InputError(f"bad value for {key}: {exc}") from None
    values.update({k: v for k, v in flags.items() if v is not None})
    return values


def _kernel(cfg) -> KernelConfig | None:
    if int(cfg["loops"]) == 0:
        return None
    beta = cfg.get("beta") or bandwidth_from_margin(cfg["alpha"])
    return KernelConfig(beta=beta, eta=cfg["eta"], loops=cfg["loops"])


def _train_config(cfg) -> ToyTrainConfig:
    return ToyTrainConfig(
        steps=cfg["steps"],
        lr=cfg["lr"],
        gbms=_kernel(cfg),
        loss_mode=LossMode(cfg["loss_mode"]),
        seed=cfg["seed"],
        loss=LossConfig(alpha=cfg["alpha"], sample_size=cfg["sample_size"], seed=cfg["seed"]),
    )


def _scenes(cfg, which: str):
    count, seed = (cfg["train_scenes"], cfg["seed"]) if which == "train" else (cfg["test_scenes"], cfg["test_seed"])
    return gen_scene_set(count, seed, cfg["width"], cfg["height"], cfg["min_shapes"], cfg["max_shapes"], cfg["noise"])


# --- commands ---


def cmd_margin(cfg) -> int:
    if "n" not in cfg:
        raise InputError("--n is required")
    n, C = cfg["n"], cfg["C"]
    print(f"lower={margin_lower_bound(n):.3f}")
    print(f"upper={margin_upper_bound(n, C):.3f}")
    return 0


def cmd_gradcheck(cfg) -> int:
    reports = run_gradcheck(instances=cfg["instances"], seed=cfg["seed"], loops=cfg["loops"], fault=cfg.get("fault"))
    for r in reports:
        verdict = "PASS" if r.passed else "FAIL"
        print(f"{verdict} {r.name:<11} max_rel_err={r.max_error:.3e} tol={r.tolerance:.0e} n={r.instances}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print("FAIL: " + ", ".join(failed))
        return 1
    print("PASS")
    return 0


def cmd_toy1d(cfg) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    points, labels = gen_1d_gaussians(GaussianMixSpec.three_bumps(cfg["count"]), cfg["seed"])
    reg = FixedRegressor()
    targets = reg.target_embedding(labels)
    regimes = [("no_gbms", None, LossMode.ALL_LOOPS)]
    for loops in (1, 3, 5):
        for mode in LossMode:
            regimes.append((f"gbms_t{loops}_{mode.value}", loops, mode))
    summary = []
    for name, loops, mode in regimes:
        tcfg = ToyTrainConfig(
            steps=cfg["steps"], lr=cfg["lr"], seed=cfg["seed"], loss_mode=mode,
            gbms=None if loops is None else KernelConfig(eta=cfg["eta"], loops=loops),
            bandwidth=cfg["bandwidth"], loss_scale=cfg["loss_scale"],
        )
        res = toy_1d_descent(points, labels, reg, tcfg)
        io.write_table(
            out / f"toy1d_{name}.csv",
            ["step"] + [f"x{i}" for i in range(points.size)],
            ([k] + list(x) for k, x in enumerate(res.trajectory)),
        )
        io.write_table(out / f"toy1d_{name}_loss.csv", ["step", "loss"], enumerate(res.losses))
        modes = mean_shift_modes(res.trajectory[-1], cfg["bandwidth"])
        dev = float(np.max(np.abs(res.outputs[-1] - targets)))
        summary.append((name, len(modes), dev, res.final_mse))
        print(f"{name:<28} modes={len(modes)} max_dev_from_target={dev:.4f} mse={res.final_mse:.5f}")
        if cfg["svg"]:
            plots.line_plot(out / f"toy1d_{name}_loss.svg", np.arange(res.losses.size), {name: res.losses}, "post-grouping MSE")
    io.write_table(out / "toy1d_summary.csv", ["regime", "modes", "max_dev", "final_mse"], summary)
    return 0


def cmd_gen(cfg) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    rng = np.random.default_rng(cfg["seed"])
    for k in range(cfg["train_scenes"]):
        shapes = int(rng.integers(cfg["min_shapes"], cfg["max_shapes"] + 1))
        spec = ShapeSceneSpec(width=cfg["width"], height=cfg["height"], num_shapes=shapes,
                              noise=cfg["noise"], seed=int(rng.integers(2**31 - 1)))
        scene = gen_instance_scene(spec)
        io.write_ppm(out / f"scene_{k:03d}.ppm", scene.colors.T.reshape(scene.height, scene.width, 3))
        io.write_pgm16(out / f"scene_{k:03d}_mask.pgm", scene.mask_image.astype(np.uint16))
        io.write_embedding_csv(out / f"scene_{k:03d}_features.csv", scene.features)
    print(f"wrote {cfg['train_scenes']} scenes to {out}")
    return 0


def _evaluate(cfg, net: PerPixelNet, out: Path) -> dict:
    gbms = _kernel(cfg)
    scenes = _scenes(cfg, "test")
    ev = evaluate_net(net, scenes, gbms, cfg["tau"])
    bins = 1000
    pre = post = None
    recalls = np.zeros(len(AR_THRESHOLDS))
    for scene in scenes:
        X0, XT, partition = segment(net, scene.features, gbms, cfg["tau"])
        h0 = similarity_histogram(calibrated_similarity(X0), scene.labels, bins, seed=cfg["seed"])
        h1 = similarity_histogram(calibrated_similarity(XT), scene.labels, bins, seed=cfg["seed"])
        pre = h0 if pre is None else type(h0)(h0.edges, pre.positive + h0.positive, pre.negative + h0.negative)
        post = h1 if post is None else type(h1)(h1.edges, post.positive + h1.positive, post.negative + h1.negative)
        props = ProposalSet.from_partition(partition)
        recalls += [recall_at(props, scene.labels, t) for t in AR_THRESHOLDS]
    recalls /= len(scenes)
    metrics = {
        "mean_best_iou": ev.mean_best_iou,
        "average_recall": ev.average_recall,
        "positive_mass_top_pre": pre.positive_mass_above(0.999),
        "positive_mass_top_post": post.positive_mass_above(0.999),
    }
    io.write_table(out / "metrics.csv", ["metric", "value"], metrics.items())
    io.write_table(out / "recall.csv", ["threshold", "recall"], zip(AR_THRESHOLDS, recalls))
    io.write_table(
        out / "per_scene.csv", ["scene", "mean_best_iou", "average_recall"],
        ((k, a, b) for k, (a, b) in enumerate(zip(ev.per_scene_iou, ev.per_scene_ar))),
    )
    io.write_table(
        out / "histogram.csv", ["bin_lo", "bin_hi", "pos_pre", "neg_pre", "pos_post", "neg_post"],
        zip(pre.edges[:-1], pre.edges[1:], pre.positive, pre.negative, post.positive, post.negative),
    )
    if cfg["svg"]:
        coarse = pre.edges[::20]
        def fold(c):
            return np.add.reduceat(c, np.arange(0, c.size, 20))
        plots.histogram_plot(out / "histogram_pre.svg", coarse, {"positive": fold(pre.positive), "negative": fold(pre.negative)}, "before grouping")
        plots.histogram_plot(out / "histogram_post.svg", coarse, {"positive": fold(post.positive), "negative": fold(post.negative)}, "after grouping")
    for k, v in metrics.items():
        print(f"{k}={v:.4f}")
    return metrics


def cmd_train(cfg) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    net = PerPixelNet.init(5, cfg["hidden"], cfg["dim"], seed=cfg["seed"])
    result = train_toy_instances(_scenes(cfg, "train"), net, _train_config(cfg))
    io.save_net(out / "net.csv", result.net)
    io.write_table(out / "loss_curve.csv", ["step", "loss"], enumerate(result.loss_curve))
    if cfg["svg"]:
        plots.line_plot(out / "loss_curve.svg", np.arange(result.loss_curve.size), {"loss": result.loss_curve}, "training loss")
    if not np.all(np.isfinite(result.loss_curve)):
        log.error("training diverged")
        return 1
    print(f"final_loss={result.loss_curve[-1]:.6f}")
    _evaluate(cfg, result.net, out)
    return 0


def _mask_labels(path) -> InstanceLabeling:
    return InstanceLabeling(io.read_pgm(path).ravel())


def cmd_eval(cfg) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    if cfg.get("pred") or cfg.get("gt"):
        if not (cfg.get("pred") and cfg.get("gt")):
            raise InputError("--pred and --gt must be given together")
        pred, gt = _mask_labels(cfg["pred"]), _mask_labels(cfg["gt"])
        if pred.n != gt.n:
            raise InputError("prediction and ground truth differ in size")
        props = ProposalSet([pred.mask(i) for i in pred.ids if i != 0])
        metrics = {
            "mean_best_iou": best_iou(props, gt).mean_best_iou,
            "average_recall": average_recall(props, gt),
        }
        io.write_table(out / "metrics.csv", ["metric", "value"], metrics.items())
        for k, v in metrics.items():
            print(f"{k}={v:.4f}")
        return 0
    net_path = cfg.get("net") or str(Path(cfg["out_dir"]) / "net.csv")
    _evaluate(cfg, io.load_net(net_path), out)
    return 0


def cmd_proposals(cfg) -> int:
    out = io.ensure_dir(cfg["out_dir"])
    net_path = cfg.get("net") or str(Path(cfg["out_dir"]) / "net.csv")
    net = io.load_net(net_path)
    base = _kernel(cfg) or KernelConfig(loops=5)
    for k, scene in enumerate(_scenes(cfg, "test")):
        X0 = segment(net, scene.features, None, cfg["tau"])[0]
        props = multi_bandwidth_proposals(X0, cfg["betas"], base, cfg["tau"])
        io.write_proposals(out / f"proposals_{k:03d}", props, scene.width, scene.height)
        ar = average_recall(props, scene.labels)
        print(f"scene {k}: {len(props)} proposals, AR={ar:.3f}")
    return 0


COMMANDS = {
    "margin": cmd_margin,
    "gradcheck": cmd_gradcheck,
    "toy1d": cmd_toy1d,
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "proposals": cmd_proposals,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphere-grouping", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override it")
        for key, conv in KEYS.items():
            flag = "--" + key.replace("_", "-")
            aliases = [flag] if "_" not in key else [flag, "--" + key]
            p.add_argument(*aliases, dest=key, type=conv if conv is not _bool else _bool, default=None)
    return parser


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: getattr(args, k) for k in KEYS}
    limiter = _limit_threads()
    try:
        cfg = merged_config(args.command, args.config, flags)
        return COMMANDS[args.command](cfg)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, SphereGroupingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
