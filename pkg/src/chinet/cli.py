"""``chinet`` command line: train, eval, odt, sweep, compare-svd, features, explain.

Every command writes into ``<out>/<command>/<timestamp>/`` and leaves exactly one
``manifest.json`` there. Exit codes: 0 success, 2 usage or config errors, 1 data
or numeric errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, interpret, odt, report
from .config import dump_config, load_config
from .data import Dataset, load_dir, load_idx, load_raw_rgb
from .errors import ChiNetError, ConfigError
from .model import ChiNet, forward, symmetrise
from .train import evaluate, train_from_config


class UsageError(Exception):
    pass


# -- plumbing -----------------------------------------------------------------


def _run_dir(out, command: str) -> Path:
    base = Path(out) / command
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = base / stamp
    n = 1
    while path.exists():
        path = base / f"{stamp}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


class Run:
    def __init__(self, args, command: str):
        self.command = command
        self.dir = _run_dir(args.out, command)
        self.started = time.perf_counter()
        self.inputs: dict = {}
        self.outputs: list = []
        self.config: dict = {}
        self.seed = args.seed

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.outputs.append(name)
        return p

    def finish(self, **extra):
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "output_dir": str(self.dir),
            "outputs": sorted(set(self.outputs)),
            "version": __version__,
            "duration_s": round(time.perf_counter() - self.started, 6),
            **extra,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        print(f"wrote {self.dir}")


def _load_split(args, split: str) -> Dataset:
    images = getattr(args, f"{split}_images", None)
    labels = getattr(args, f"{split}_labels", None)
    if images:
        if not labels:
            raise UsageError(f"--{split}-images needs --{split}-labels")
        if str(images).endswith((".rgb", ".rgb.gz")):
            meta = Path(str(images).removesuffix(".gz") + ".json")
            return load_raw_rgb(images, meta, labels, split)
        return load_idx(images, labels, split)
    if args.data_dir:
        train, test = load_dir(args.data_dir)
        return train if split == "train" else test
    raise UsageError(f"no {split} data: pass --data-dir or --{split}-images/--{split}-labels")


def _data_inputs(args) -> dict:
    keys = ("data_dir", "train_images", "train_labels", "test_images", "test_labels")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None)}


def _eval_split(args):
    return _load_split(args, args.split)


def _check_compatible(net: ChiNet, ds: Dataset):
    if ds.d_in != net.d_in:
        raise ChiNetError(f"model expects {net.d_in} inputs, data has {ds.d_in}")
    if len(ds) and ds.labels.max() >= net.n_classes:
        raise ChiNetError(f"data has label {ds.labels.max()}, model has {net.n_classes} classes")


# -- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    for key in ("epochs", "hidden", "depth"):
        if getattr(args, key) is not None:
            overrides.append(f"{key}={getattr(args, key)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    train_ds = _load_split(args, "train")
    try:
        test_ds = _load_split(args, "test")
    except UsageError:
        test_ds = None
    run = Run(args, "train")
    run.seed = cfg.seed
    run.config = dataclasses.asdict(cfg)
    run.inputs = {"config": args.config or "<defaults>", **_data_inputs(args)}

    def log(epoch, row):
        if not args.quiet:
            print(f"epoch {epoch:4d}  loss {row[1]:.5f}  test_acc {row[2]:.4f}  lr {row[3]:.3e}")

    n_classes = max(train_ds.n_classes, test_ds.n_classes if test_ds is not None else 0)
    result = train_from_config(train_ds, cfg, test_ds, "chinet", n_classes, log)
    net = symmetrise(result.folded())
    checkpoint.save(net, run.path("model.chin"))
    run.outputs.append("model.chin.json")
    report.write_csv(run.path("metrics.csv"), ["epoch", "train_loss", "test_acc", "lr"], result.metrics)
    run.path("config.cfg").write_text(dump_config(cfg))
    if args.plot and result.metrics:
        m = np.array(result.metrics, dtype=float)
        report.line_plot(run.path("metrics.svg"), m[:, 0], {"train_loss": m[:, 1], "test_acc": m[:, 2]},
                         "epoch", "value")
    final = result.metrics[-1] if result.metrics else None
    run.finish(final_test_acc=final[2] if final else None)
    return 0


def cmd_eval(args) -> int:
    net = checkpoint.load_net(args.checkpoint)
    ds = _eval_split(args)
    _check_compatible(net, ds)
    run = Run(args, "eval")
    run.inputs = {"checkpoint": args.checkpoint, **_data_inputs(args)}
    run.config = {"split": args.split}
    acc, loss = evaluate(net, ds.images, ds.labels)
    print(f"accuracy {acc:.6f}  loss {loss:.6f}  n {len(ds)}")
    (run.path("eval.json")).write_text(json.dumps({"accuracy": acc, "loss": loss, "n": len(ds)}, indent=2) + "\n")
    if args.dump_logits:
        logits = forward(net, ds.images)
        rows = [[i, int(y)] + list(z) for i, (y, z) in enumerate(zip(ds.labels, logits))]
        report.write_csv(run.path("logits.csv"),
                         ["index", "label"] + [f"logit{c}" for c in range(net.n_classes)], rows)
    run.finish(accuracy=acc, loss=loss)
    return 0


def _parse_ranks(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--ranks expects comma-separated integers, got {text!r}") from None


def _spectrum_json(spectrum, plan, epsilon=None) -> dict:
    bonds = []
    for i, (s, r) in enumerate(zip(spectrum.spectra, plan.ranks), start=1):
        lam = np.clip(s.values, 0, None)
        sv = odt.odt_singular_values(lam)
        bonds.append({
            "bond": i,
            "dim": int(lam.size),
            "rank": int(r),
            "eigenvalues": [float(v) for v in s.values],
            "effective_dim": odt.effective_dim(sv) if np.any(sv > 0) else 0.0,
        })
    total = sum(b["dim"] for b in bonds)
    kept = sum(plan.ranks)
    return {"epsilon": epsilon, "ranks": list(plan.ranks), "removed_fraction": (total - kept) / total,
            "bonds": bonds}


def cmd_odt(args) -> int:
    if (args.epsilon is None) == (args.ranks is None):
        raise UsageError("give exactly one of --epsilon or --ranks")
    net = checkpoint.load_net(args.checkpoint)
    ranks = _parse_ranks(args.ranks) if args.ranks else None
    run = Run(args, "odt")
    run.inputs = {"checkpoint": args.checkpoint}
    run.config = {"epsilon": args.epsilon, "ranks": ranks}
    diag, spectrum, plan = odt.decompose(net, epsilon=args.epsilon, ranks=ranks)
    checkpoint.save(diag, run.path("model.chin"))
    run.outputs.append("model.chin.json")
    info = _spectrum_json(spectrum, plan, args.epsilon)
    run.path("spectrum.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"ranks {','.join(map(str, plan.ranks))}  removed {info['removed_fraction']:.3f}")
    if args.plot:
        report.line_plot(run.path("spectrum.svg"), None,
                         {f"bond {b['bond']}": np.maximum(b["eigenvalues"], 1e-300) for b in info["bonds"]},
                         "index", "eigenvalue", logy=True)
    run.finish(ranks=list(plan.ranks))
    return 0


def _full_diagonal(net: ChiNet):
    """Full-rank eigenbasis net plus eigenvalues; reuses stored spectra when present."""
    diag, spectrum, _ = odt.decompose(net)
    return diag.net, spectrum.eigenvalues


def cmd_sweep(args) -> int:
    net = checkpoint.load_net(args.checkpoint)
    ds = _eval_split(args)
    _check_compatible(net, ds)
    run = Run(args, "sweep")
    run.inputs = {"checkpoint": args.checkpoint, **_data_inputs(args)}
    run.config = {"steps": args.steps, "split": args.split}
    full, lam = _full_diagonal(net)
    rows = odt.truncation_sweep(full, lam, ds.images, ds.labels, steps=args.steps)
    report.write_csv(run.path("sweep.csv"), ["removed_frac", "accuracy", "loss", "frobenius"],
                     [r[:4] for r in rows])
    report.write_csv(run.path("sweep_ranks.csv"), ["removed_frac"] + [f"bond{i}" for i in range(1, len(full.bond_dims) + 1)],
                     [(r[0],) + tuple(r[4]) for r in rows])
    if args.plot:
        m = np.array([r[:4] for r in rows], dtype=float)
        report.line_plot(run.path("sweep.svg"), m[:, 0], {"accuracy": m[:, 1]}, "removed fraction", "accuracy")
    run.finish()
    return 0


def cmd_compare_svd(args) -> int:
    net = checkpoint.load_net(args.checkpoint)
    run = Run(args, "compare-svd")
    run.inputs = {"checkpoint": args.checkpoint}
    _, lam = _full_diagonal(net)
    odt_sv = [odt.odt_singular_values(v) for v in lam]
    odt_sv = [s / s[0] if s.size and s[0] > 0 else s for s in odt_sv]
    svd_sv = odt.local_svd(net)
    for name, spectra in (("odt_spectra.csv", odt_sv), ("svd_spectra.csv", svd_sv)):
        report.write_csv(run.path(name), ["bond", "index", "value"],
                         [(b, j, float(v)) for b, s in enumerate(spectra, start=1) for j, v in enumerate(s)])
    eff = [(b, odt.effective_dim(o), odt.effective_dim(s)) for b, (o, s) in enumerate(zip(odt_sv, svd_sv), start=1)]
    report.write_csv(run.path("effective_dims.csv"), ["bond", "odt", "svd"], eff)
    for b, e_odt, e_svd in eff:
        print(f"bond {b}: effective dim odt {e_odt:.2f}  svd {e_svd:.2f}")
    if args.plot:
        series = {f"odt {b}": s for b, s in enumerate(odt_sv, start=1)}
        series.update({f"svd {b}": s for b, s in enumerate(svd_sv, start=1)})
        report.line_plot(run.path("compare_svd.svg"), None, series, "index", "normalised value", logy=True)
    run.finish()
    return 0


def _image_shape(args, net: ChiNet):
    if args.image_shape:
        try:
            shape = tuple(int(t) for t in args.image_shape.lower().split("x"))
        except ValueError:
            raise UsageError(f"--image-shape expects HxW, got {args.image_shape!r}") from None
        if int(np.prod(shape)) != net.d_in:
            raise UsageError(f"--image-shape {args.image_shape} does not match {net.d_in} inputs")
        return shape
    side = int(round(np.sqrt(net.d_in)))
    return (side, side) if side * side == net.d_in else None


def cmd_features(args) -> int:
    model = checkpoint.load(args.checkpoint)
    net = model.net if isinstance(model, odt.DiagonalisedNet) else model
    shape = _image_shape(args, net)
    run = Run(args, "features")
    run.inputs = {"checkpoint": args.checkpoint}
    run.config = {"top": args.top, "trace": args.trace}
    feats = interpret.all_class_features(net, project=True, mode=args.trace)
    rows = [(c, ft.rank, ft.eigenvalue) for c, fl in feats.items() for ft in fl]
    report.write_csv(run.path("eigenvalues.csv"), ["class", "rank", "eigenvalue"], rows)
    for c, fl in feats.items():
        for ft in fl[: args.top]:
            name = f"class{c}_rank{ft.rank}.png"
            report.save_image(report.as_image(ft.projection, shape), run.path(name))
            run.outputs.append(name.replace(".png", ".csv"))
    if isinstance(model, odt.DiagonalisedNet):
        for a in interpret.atoms(model)[: args.top]:
            name = f"atom{a.index}.png"
            report.save_image(report.as_image(a.vector[1:], shape), run.path(name))
            run.outputs.append(name.replace(".png", ".csv"))
    path = interpret.bias_path(net)
    run.finish(constant_coordinates=list(path.index))
    return 0


def cmd_explain(args) -> int:
    net = checkpoint.load_net(args.checkpoint)
    ds = _eval_split(args)
    _check_compatible(net, ds)
    if not 0 <= args.input < len(ds):
        raise UsageError(f"--input {args.input} outside 0..{len(ds) - 1}")
    shape = _image_shape(args, net)
    run = Run(args, "explain")
    run.inputs = {"checkpoint": args.checkpoint, **_data_inputs(args)}
    run.config = {"input": args.input, "split": args.split, "squared": not args.unsquared,
                  "top": args.top, "trace": args.trace}
    feats = interpret.all_class_features(net, project=True, mode=args.trace)
    x = ds.images[args.input]
    rep = interpret.explain(net, feats, x, squared=not args.unsquared)
    out = rep.to_dict(top_k=args.top)
    out["input"] = args.input
    out["label"] = int(ds.labels[args.input])
    for entry, (c, ft, _) in zip(out["top_features"], rep.top(args.top)):
        name = f"top_class{c}_rank{ft.rank}.png"
        report.save_image(report.as_image(ft.projection, shape), run.path(name))
        run.outputs.append(name.replace(".png", ".csv"))
        entry["image"] = name
    report.save_gray(report.as_image(x, shape), run.path("input.png"))
    run.outputs.append("input.csv")
    run.path("explain.json").write_text(json.dumps(out, indent=2) + "\n")
    print(f"label {out['label']}  prediction {out['prediction']}")
    run.finish()
    return 0


# -- argument parsing ---------------------------------------------------------


def _data_flags(p, split_choice=False):
    p.add_argument("--data-dir", help="directory with MNIST-named IDX files (.gz or plain)")
    for split in ("train", "test"):
        p.add_argument(f"--{split}-images", help="IDX images, or raw RGB ending in .rgb with a .json meta twin")
        p.add_argument(f"--{split}-labels", help="IDX labels")
    if split_choice:
        p.add_argument("--split", choices=("train", "test"), default="test", help="split to evaluate (default: test)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chinet", description="chi-net training, ODT and interpretation")
    parser.add_argument("--version", action="version", version=f"chinet {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="runs", help="root of the report tree (default: runs)")
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw")
    common.add_argument("--plot", action="store_true", help="also write SVG line plots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a chi-net")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--epochs", type=int, help="shorthand for --set epochs=N")
    p.add_argument("--hidden", type=int, help="shorthand for --set hidden=N")
    p.add_argument("--depth", type=int, help="shorthand for --set depth=N")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")
    _data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="accuracy and loss of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dump-logits", action="store_true", help="also write per-sample logits.csv")
    _data_flags(p, True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("odt", parents=[common], help="orthogonalise, diagonalise and truncate")
    p.add_argument("checkpoint")
    p.add_argument("--epsilon", type=float, help="relative Frobenius error budget for truncation")
    p.add_argument("--ranks", help="comma-separated bond ranks, e.g. 2,3,13,6")
    p.set_defaults(func=cmd_odt)

    p = sub.add_parser("sweep", parents=[common], help="accuracy while removing bond dimensions")
    p.add_argument("checkpoint")
    p.add_argument("--steps", type=int, default=40, help="number of sweep rows (default: 40)")
    _data_flags(p, True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-svd", parents=[common], help="ODT spectra against local SVD")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_compare_svd)

    for name, func, help_ in (("features", cmd_features, "per-class eigenfeatures"),
                              ("explain", cmd_explain, "feature scores for one input")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("checkpoint")
        p.add_argument("--top", type=int, default=10, help="features to emit: per class for features, overall for explain (default: 10)")
        p.add_argument("--trace", choices=("constant", "jacobian"), default="constant",
                       help="how features are carried to the input (default: constant)")
        p.add_argument("--image-shape", help="HxW for image output (default: square if possible)")
        if name == "explain":
            p.add_argument("--input", type=int, required=True, help="sample index")
            p.add_argument("--unsquared", action="store_true", help="score lam <v, a> instead of lam <v, a>^2")
            _data_flags(p, True)
        p.set_defaults(func=func)
    return parser


def _limit_threads():
    value = os.environ.get("CHINET_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"CHINET_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("CHINET_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (UsageError, ConfigError) as exc:
        print(f"chinet {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ChiNetError, FileNotFoundError, ValueError, ArithmeticError) as exc:
        print(f"chinet {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
