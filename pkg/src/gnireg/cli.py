"""Command-line entry point: one subcommand per experiment or instrument.

Every subcommand writes CSV results plus a summary.json that echoes the
fully resolved configuration; reruns with the same seed produce byte-identical
CSVs. Exit codes: 0 success, 1 runtime failure (e.g. divergence), 2 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import glob as _glob
import json
import os
import sys

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


def _fmt(v) -> str:
    if isinstance(v, (int, bool)):
        return str(v)
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def write_summary(path, config: dict, results: dict):
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items() if not callable(v)}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if hasattr(obj, "item"):  # numpy scalar
            return obj.item()
        return obj

    with open(path, "w") as fh:
        json.dump({"config": clean(config), "results": clean(results)},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args) -> str:
    out = args.out or os.environ.get("GNIREG_OUTDIR") or "gnireg_out"
    os.makedirs(out, exist_ok=True)
    return out


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if str(path).endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _build_noise_spec(noise_cfg: dict | None, n_layers: int):
    from .noise import NoiseSpec

    if not noise_cfg:
        return NoiseSpec.none(n_layers)
    mode = noise_cfg.get("mode", "additive")
    sigma2 = noise_cfg.get("sigma2", 0.0)
    if isinstance(sigma2, (list, tuple)):
        if len(sigma2) != n_layers:
            raise ValueError(
                f"noise.sigma2 lists {len(sigma2)} values, network has {n_layers} layers"
            )
        return NoiseSpec((mode,) * n_layers, tuple(float(v) for v in sigma2))
    return NoiseSpec.uniform(n_layers, float(sigma2), mode)


def _build_dataset(dcfg: dict, test: bool = False):
    from . import data

    kind = dcfg.get("kind", "sinusoid")
    seed = int(dcfg.get("test_seed", int(dcfg.get("seed", 0)) + 1) if test
               else dcfg.get("seed", 0))
    if kind == "sinusoid":
        points = int(dcfg.get("test_points", dcfg.get("points", 1024)) if test
                     else dcfg.get("points", 1024))
        return data.gen_sinusoid(points, dcfg.get("freqs"),
                                 dcfg.get("phases", int(dcfg.get("seed", 0))),
                                 tuple(dcfg.get("z_range", (0.0, 1.0))), seed)
    if kind == "blobs":
        per_class = int(dcfg.get("test_per_class", dcfg.get("per_class", 200)) if test
                        else dcfg.get("per_class", 200))
        return data.gen_blobs(int(dcfg.get("classes", 3)), per_class,
                              int(dcfg.get("dim", 2)),
                              float(dcfg.get("separation", 2.0)), seed,
                              float(dcfg.get("cluster_sigma", 1.0)))
    if kind == "csv":
        key = "test_path" if test else "path"
        if test and "test_path" not in dcfg:
            return None
        path = dcfg[key]
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        return data.load_csv(path, dcfg.get("target_cols", -1),
                             dcfg.get("task", "regression"))
    if kind == "idx":
        key_i, key_l = ("test_images", "test_labels") if test else ("images", "labels")
        if test and key_i not in dcfg:
            return None
        for p in (dcfg[key_i], dcfg[key_l]):
            if not os.path.exists(p):
                raise FileNotFoundError(p)
        return data.load_idx(dcfg[key_i], dcfg[key_l])
    raise ValueError(f"unknown data kind '{kind}'")


def _dataset_from_flags(args):
    spec = args.data
    if spec.endswith(".csv") or spec.endswith(".idx") or os.path.exists(spec):
        if not os.path.exists(spec):
            raise FileNotFoundError(spec)
        if spec.endswith(".idx") or getattr(args, "labels", None):
            from .data import load_idx
            return load_idx(spec, args.labels)
        from .data import load_csv
        return load_csv(spec, getattr(args, "target_col", -1),
                        getattr(args, "task", "regression"))
    dcfg = {"kind": spec, "seed": getattr(args, "data_seed", 0)}
    for key in ("points", "freqs", "classes", "per_class", "dim", "separation",
                "cluster_sigma"):
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            dcfg[key] = v
    return _build_dataset(dcfg)


def _load_net(path):
    from .network import load_checkpoint

    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    from .linalg import RandomSource
    from .network import mlp, save_checkpoint
    from .trainer import TrainConfig, evaluate, train

    cfg = load_config(args.config)
    for key, val in (("mode", args.mode), ("steps", args.steps), ("seed", args.seed)):
        if val is not None:
            cfg.setdefault("train", {})
            if key == "seed":
                cfg.setdefault("experiment", {})["seed"] = val
            else:
                cfg["train"][key] = val
    out = _outdir(args)
    seed = int(cfg.get("experiment", {}).get("seed", 0))
    net_cfg = cfg.get("network", {})
    widths = list(net_cfg.get("widths", [1, 64, 64, 1]))
    t = cfg.get("train", {})
    spec = _build_noise_spec(cfg.get("noise"), len(widths) - 1)
    tcfg = TrainConfig(
        mode=t.get("mode", "baseline"),
        loss_kind=t.get("loss", "mse"),
        noise=spec,
        learning_rate=float(t.get("learning_rate", 0.001)),
        batch_size=int(t.get("batch_size", 512)),
        steps=int(t.get("steps", 1000)),
        seed=seed,
        eval_every=int(t.get("eval_every", 100)),
        reg_variant=t.get("reg_variant", "diag"),
        reg_grad=t.get("reg_grad", "autodiff"),
        snapshot_every=int(t.get("snapshot_every", 0)),
    )
    dataset = _build_dataset(cfg.get("data", {}))
    test_set = _build_dataset(cfg.get("data", {}), test=True)
    net = mlp(widths, net_cfg.get("activation", "relu"),
              RandomSource(seed, (1,)), float(net_cfg.get("init_scale", 1.0)))
    snap_dir = os.path.join(out, "checkpoints")
    snapshot_hook = None
    if tcfg.snapshot_every > 0:
        os.makedirs(snap_dir, exist_ok=True)

        def snapshot_hook(step, snap_net):
            save_checkpoint(snap_net, os.path.join(snap_dir, f"step_{step:07d}.json"),
                            seed=seed, extra={"step": step})

    net, log = train(net, dataset, tcfg, test_set, snapshot_hook=snapshot_hook)
    log.to_csv(os.path.join(out, "metrics.csv"))
    save_checkpoint(net, os.path.join(out, "checkpoint.json"), seed=seed)
    final_loss, final_acc = evaluate(net, test_set or dataset, tcfg.loss_kind)
    write_summary(os.path.join(out, "summary.json"), _echo_config(cfg, tcfg, widths),
                  {"final_eval_loss": final_loss, "final_eval_accuracy": final_acc,
                   "recorded_rows": len(log.rows)})
    if args.plot:
        from .svgplot import line_chart
        steps = log.column("step")
        series = {"train_loss": log.column("train_loss")}
        if test_set is not None:
            series["test_loss"] = log.column("test_loss")
        line_chart(os.path.join(out, "loss.svg"), steps, series, "loss over steps")
    return 0


def _echo_config(cfg: dict, tcfg, widths) -> dict:
    echoed = json.loads(json.dumps(cfg))
    echoed["resolved"] = {
        "mode": tcfg.mode, "loss": tcfg.loss_kind, "steps": tcfg.steps,
        "batch_size": tcfg.batch_size, "learning_rate": tcfg.learning_rate,
        "seed": tcfg.seed, "eval_every": tcfg.eval_every,
        "reg_variant": tcfg.reg_variant, "widths": list(widths),
        "noise_modes": list(tcfg.noise.modes) if tcfg.noise else [],
        "noise_variances": list(tcfg.noise.variances) if tcfg.noise else [],
    }
    return echoed


def cmd_dominance(args) -> int:
    from .diagnostics import dominance_scan

    out = _outdir(args)
    dataset = _dataset_from_flags(args)
    widths = [int(w) for w in args.widths.split(",")]
    sigmas = [float(s) for s in args.sigmas.split(",")]
    rows = dominance_scan(widths, dataset, sigmas, args.inits, args.draws,
                          args.batch_size, args.activation,
                          dataset.loss_kind, seed=args.seed)
    write_csv(os.path.join(out, "dominance.csv"),
              ["sigma2", "init", "R", "remainder", "stderr", "ratio"], rows)
    valid = [r for r in rows if not r["degenerate"]]
    frac = (sum(r["R"] > abs(r["remainder"]) for r in valid) / len(valid)
            if valid else float("nan"))
    write_summary(os.path.join(out, "summary.json"), vars(args) | {"widths": widths},
                  {"fraction_R_dominant": frac, "rows": len(rows)})
    print(f"dominance: {frac:.3f} of {len(valid)} rows have R > |remainder|")
    return 0


def cmd_spectrum(args) -> int:
    from .diagnostics import spectrum

    out = _outdir(args)
    paths = sorted(p for pat in args.checkpoints for p in _glob.glob(pat))
    if not paths:
        raise FileNotFoundError(f"no checkpoints match {args.checkpoints}")
    nets, steps = [], []
    for p in paths:
        net, meta = _load_net(p)
        nets.append(net)
        steps.append(int(meta.get("step", len(steps))))
    series = spectrum(nets, args.z_min, args.z_max, args.n, steps)
    cols = ["step"] + [f"bin_{k}" for k in series.bins]
    rows = [{"step": s, **{f"bin_{k}": a for k, a in zip(series.bins, amp)}}
            for s, amp in zip(series.steps, series.amplitudes)]
    write_csv(os.path.join(out, "spectrum.csv"), cols, rows)
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"checkpoints": len(nets), "grid_size": args.n})
    if args.plot:
        from .svgplot import heatmap
        heatmap(os.path.join(out, "spectrum.svg"), series.clipped(),
                "amplitude spectrum over training (rows = checkpoints)")
    return 0


def cmd_hesstrace(args) -> int:
    from .diagnostics import hessian_trace
    from .linalg import RandomSource

    out = _outdir(args)
    net, _ = _load_net(args.checkpoint)
    dataset = _dataset_from_flags(args)
    est, stderr = hessian_trace(net, dataset.inputs, dataset.targets,
                                dataset.loss_kind, args.probes,
                                RandomSource(args.seed, (401,)))
    write_csv(os.path.join(out, "hesstrace.csv"), ["estimate", "stderr", "probes"],
              [{"estimate": est, "stderr": stderr, "probes": args.probes}])
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"estimate": est, "stderr": stderr})
    print(f"hessian trace ~ {est:.6g} +/- {stderr:.3g}")
    return 0


def cmd_layerstats(args) -> int:
    from .diagnostics import layer_stats, spearman

    out = _outdir(args)
    net, _ = _load_net(args.checkpoint)
    dataset = _dataset_from_flags(args)
    rows = layer_stats(net, dataset.inputs, args.convention)
    write_csv(os.path.join(out, "layerstats.csv"),
              ["layer", "masked_fro_sq", "fro_sq", "trace_w", "active_fraction"], rows)
    rho = (spearman([r["layer"] for r in rows], [r["masked_fro_sq"] for r in rows])
           if len(rows) >= 2 else float("nan"))
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"spearman_layer_vs_masked_norm": rho, "square_layers": len(rows)})
    print(f"layerstats: {len(rows)} square relu layers, spearman(k, |W~|^2) = {rho:.3f}")
    return 0


def cmd_calibrate(args) -> int:
    from .calibration import calibrate_network

    out = _outdir(args)
    net, _ = _load_net(args.checkpoint)
    dataset = _dataset_from_flags(args)
    report = calibrate_network(net, dataset, args.bins)
    rows = [{"bin": m + 1, "confidence": report.conf[m], "accuracy": report.acc[m],
             "count": int(report.counts[m])} for m in range(report.n_bins)]
    write_csv(os.path.join(out, "calibration.csv"),
              ["bin", "confidence", "accuracy", "count"], rows)
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"ece": report.ece, "mean_entropy": report.mean_entropy})
    print(f"ECE = {report.ece:.4f}, mean prediction entropy = {report.mean_entropy:.4f}")
    return 0


def cmd_sensitivity(args) -> int:
    from .diagnostics import sensitivity_sweep
    from .linalg import RandomSource

    out = _outdir(args)
    net, _ = _load_net(args.checkpoint)
    dataset = _dataset_from_flags(args)
    alphas = [float(a) for a in args.alphas.split(",")]
    accs = sensitivity_sweep(net, dataset.inputs, dataset.targets, alphas,
                             args.draws, RandomSource(args.seed, (402,)))
    rows = [{"alpha": a, "accuracy": acc} for a, acc in zip(alphas, accs)]
    write_csv(os.path.join(out, "sensitivity.csv"), ["alpha", "accuracy"], rows)
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"alphas": alphas, "accuracies": accs})
    return 0


def cmd_margin(args) -> int:
    from .diagnostics import margin_bounds

    out = _outdir(args)
    net, _ = _load_net(args.checkpoint)
    dataset = _dataset_from_flags(args)
    report = margin_bounds(net, dataset.inputs)
    rows = [{"index": i, "predicted": int(report.predicted[i]),
             "runner_up": int(report.runner_up[i]), "gap": report.gap[i],
             "j0_fro": report.j0_fro[i], "bound": report.bound[i]}
            for i in range(dataset.n)]
    write_csv(os.path.join(out, "margin.csv"),
              ["index", "predicted", "runner_up", "gap", "j0_fro", "bound"], rows)
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"mean_bound": float(report.bound.mean()),
                   "min_bound": float(report.bound.min())})
    return 0


def cmd_parseval(args) -> int:
    from .diagnostics import parseval_check

    out = _outdir(args)
    freqs = [float(f) for f in args.freqs.split(",")]
    amps = [float(a) for a in args.amps.split(",")] if args.amps else None
    lhs, rhs, gap = parseval_check(freqs, amps, n=args.n, use_fd=args.fd)
    write_csv(os.path.join(out, "parseval.csv"), ["lhs", "rhs", "rel_gap"],
              [{"lhs": lhs, "rhs": rhs, "rel_gap": gap}])
    write_summary(os.path.join(out, "summary.json"), vars(args),
                  {"lhs": lhs, "rhs": rhs, "rel_gap": gap})
    print(f"derivative energy {lhs:.6f} vs spectral energy {rhs:.6f} (gap {gap:.2e})")
    return 0


# ---------------------------------------------------------------------------


def _add_data_flags(p, default="sinusoid"):
    p.add_argument("--data", default=default,
                   help="dataset: a .csv/.idx path, or 'sinusoid' / 'blobs'")
    p.add_argument("--labels", help="IDX labels path when --data is an IDX image file")
    p.add_argument("--target-col", type=int, default=-1, dest="target_col")
    p.add_argument("--task", choices=["regression", "classification"],
                   default="regression")
    p.add_argument("--data-seed", type=int, default=0, dest="data_seed")
    p.add_argument("--points", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int, dest="per_class")
    p.add_argument("--dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--cluster-sigma", type=float, dest="cluster_sigma")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnireg",
        description="Gaussian noise injection training and diagnostics")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap BLAS worker threads (set before numpy loads)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment from a config file")
    p.add_argument("--config", required=True, help="TOML or JSON experiment config")
    p.add_argument("--mode", choices=["baseline", "gni", "explicit"])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dominance", help="penalty vs Monte-Carlo remainder at init")
    p.add_argument("--sigmas", default="0.1,0.25,1.0")
    p.add_argument("--inits", type=int, default=25)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--widths", default="1,256,256,256,256,256,1")
    p.add_argument("--activation", default="sigmoid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p)
    p.set_defaults(func=cmd_dominance)

    p = sub.add_parser("spectrum", help="DFT spectra of 1-D checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint files or globs, ordered by step")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--z-min", type=float, default=0.0, dest="z_min")
    p.add_argument("--z-max", type=float, default=1.0, dest="z_max")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("hesstrace", help="Hutchinson parameter-Hessian trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p)
    p.set_defaults(func=cmd_hesstrace)

    p = sub.add_parser("layerstats", help="masked-weight norms of square relu layers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--convention", choices=["row", "col"], default="row")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p)
    p.set_defaults(func=cmd_layerstats)

    p = sub.add_parser("calibrate", help="reliability bins, ECE, prediction entropy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p, default="blobs")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sensitivity", help="accuracy under increasing input noise")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--alphas", default="0,0.25,0.5,1.0,2.0")
    p.add_argument("--draws", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p, default="blobs")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("margin", help="first-order classification margin bounds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p, default="blobs")
    p.set_defaults(func=cmd_margin)

    p = sub.add_parser("parseval", help="derivative energy vs weighted spectrum of tones")
    p.add_argument("--freqs", required=True)
    p.add_argument("--amps")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--fd", action="store_true", help="finite-difference derivative")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_parseval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    from .errors import ArgumentError, DivergenceError, DomainError, FormatError

    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: missing config field {exc}", file=sys.stderr)
        return 2
    except (FormatError, ArgumentError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
