"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every output directory receives a ``manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, default_ini, load_config

EXPERIMENTS = ("rmse", "ee_users", "ee_speed")


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_manifest(out: Path, args, cfg, inputs, outputs, started):
    manifest = {
        "tool": "mapcsim", "version": __version__,
        "argv": [a for a in sys.argv[1:]] if args.argv is None else args.argv,
        "command": args.command, "seed": cfg["simulation"]["seed"],
        "config_source": cfg.source, "config": _jsonable(cfg.to_dict()),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p.name): _sha256(p) for p in outputs},
        "runtime_s": round(time.time() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.values["simulation"]["seed"] = int(args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise UsageError(f"cannot write to output directory {out}: {e.strerror}") from None
    return out


def _require_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _loss_csv(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        val = history.get("val_loss") or []
        for i, tl in enumerate(history["train_loss"]):
            fh.write(f"{i + 1},{tl!r},{val[i]!r}\n" if i < len(val) else f"{i + 1},{tl!r},\n")


# ----------------------------------------------------------------------------
# subcommands


def cmd_print_config(args):
    sys.stdout.write(default_ini() if args.config is None else _ini_of(load_config(args.config)))
    return 0


def _ini_of(cfg):
    from .config import SCHEMA, _fmt

    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in cfg[sec].items()]
        lines.append("")
    return "\n".join(lines)


def cmd_validate(args):
    cfg = _config(args)
    cfg.scenario().layout()
    print(f"config ok: {cfg.source}")
    for f in args.files or []:
        p = _require_file(f, "file")
        print(f"{p}: {_describe_file(p)}")
    return 0


def _describe_file(p: Path) -> str:
    from .learnkit import load_checkpoint
    from .mobility import load_traces_csv
    from .powerctl import load_labeled_set

    if p.suffix == ".csv":
        traces, dt = load_traces_csv(p)
        return f"mobility traces, {traces.shape[0]} users x {traces.shape[1]} steps, dt={dt}"
    if p.suffix == ".npz":
        try:
            _, _, meta, _ = load_checkpoint(p)
            return f"{meta['extra'].get('role', meta['kind'])} checkpoint ({meta['kind']})"
        except (KeyError, ValueError):
            lab = load_labeled_set(p)
            return f"labelled scenario set, {len(lab['powers'])} scenarios"
    raise UsageError(f"unrecognised file type: {p}")


def cmd_generate(args):
    from .mobility import save_traces_csv
    from .powerctl import save_labeled_set
    from .simharness import build_label_set, predictor_training_traces

    cfg = _config(args)
    out = _outdir(args)
    started = time.time()
    seed = cfg["simulation"]["seed"]
    sc = cfg.scenario()
    if args.kind == "mobility":
        q = cfg["predictor"]
        n_users = args.users or q["train_users"]
        n_steps = args.steps or q["train_steps"]
        traces = predictor_training_traces(sc, n_users, n_steps, seed)
        path = out / "traces.csv"
        save_traces_csv(path, traces, sc.dt)
    else:
        a = cfg["allocator"]
        n = args.scenarios or a["scenarios"]
        lab = build_label_set(sc, n, seed, max_users=a["max_users"],
                              r_min_range=(a["r_min_lo"], a["r_min_hi"]),
                              grid_levels=cfg["power"]["oracle_levels"])
        path = out / "labels.npz"
        save_labeled_set(path, lab)
    _write_manifest(out, args, cfg, [], [path], started)
    print(f"wrote {path}")
    return 0


def cmd_train(args):
    from .mobility import load_traces_csv
    from .powerctl import load_allocator, load_labeled_set, save_allocator, train_allocator
    from .predictor import load_predictor, save_predictor, train

    cfg = _config(args)
    data = _require_file(args.dataset, "--dataset")
    resume = None
    if args.resume:
        ckpt = _require_file(args.resume, "--resume checkpoint")
        model, opt, rng_state = (load_predictor if args.kind == "predictor" else load_allocator)(ckpt)
        if opt is None or rng_state is None:
            raise UsageError(f"{ckpt} holds no optimizer/RNG state to resume from")
        resume = (model, opt, rng_state)
    out = _outdir(args)
    started = time.time()
    seed = cfg["simulation"]["seed"]
    sc = cfg.scenario()
    tcfg = cfg.train_config(args.kind)
    epochs = args.epochs

    def progress(ep, hist):
        if args.verbose:
            print(f"epoch {ep + 1}: loss {hist['train_loss'][-1]:.6g}", file=sys.stderr)

    if args.kind == "predictor":
        traces, _ = load_traces_csv(data)
        model = train(traces, cfg.lstm_spec(), tcfg, seed, gm_params=sc.gm, room=sc.room,
                      val_fraction=cfg["predictor"]["val_fraction"], epochs=epochs, callback=progress,
                      resume=resume)
        path = save_predictor(out / "predictor.npz", model)
    else:
        lab = load_labeled_set(data)
        cons = sc.constraints()
        model = train_allocator(lab, cons.p_min, cons.p_max, tcfg, seed,
                                max_users=cfg["allocator"]["max_users"], max_aps=sc.layout().n_aps,
                                epochs=epochs, callback=progress, resume=resume)
        path = save_allocator(out / "allocator.npz", model)
    curve = out / "loss_curve.csv"
    _loss_csv(curve, model.history)
    inputs = [data] + ([Path(args.resume)] if args.resume else [])
    _write_manifest(out, args, cfg, inputs, [path, curve], started)
    print(f"wrote {path} (final loss {model.final_loss:.6g})")
    return 0


def cmd_experiment(args):
    from .powerctl import load_allocator
    from .predictor import load_predictor
    from .simharness import (
        Models,
        config_hash,
        experiment_ee_vs_speed,
        experiment_ee_vs_users,
        experiment_rmse_vs_horizon,
        write_table_csv,
    )
    from .svgplot import table_chart

    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; valid names: {', '.join(EXPERIMENTS)}")
    cfg = _config(args)
    s = cfg["simulation"]
    schemes = tuple(s["schemes"])
    need_pred = args.name == "rmse" or "MAPC" in schemes
    pred = load_predictor(_require_file(args.predictor, "--predictor"))[0] if need_pred else None
    alloc = None
    if args.name != "rmse" and "MAPC" in schemes:
        alloc = load_allocator(_require_file(args.allocator, "--allocator"))[0]
    out = _outdir(args)
    started = time.time()
    base = cfg.scenario()
    if args.slots is not None:
        base = replace(base, n_slots=args.slots)
    reps = args.repetitions or s["repetitions"]
    jobs = args.jobs or os.cpu_count() or 1
    tag = config_hash({"config": _jsonable(cfg.to_dict()), "name": args.name, "slots": base.n_slots,
                       "repetitions": reps})
    if args.name == "rmse":
        rows = experiment_rmse_vs_horizon(base, pred, s["horizons"], s["rmse_users"], s["rmse_steps"])
        x, ys, group = "horizon", ("position_rmse", "orientation_rmse"), None
    elif args.name == "ee_users":
        rows = experiment_ee_vs_users(base, Models(pred, alloc), s["user_counts"], s["users_speed"],
                                      schemes, reps, jobs)
        x, ys, group = "n_users", ("mean_ee",), "scheme"
    else:
        rows = experiment_ee_vs_speed(base, Models(pred, alloc), s["speeds"], s["speed_users"], schemes,
                                      reps, jobs)
        x, ys, group = "speed", ("mean_ee",), "scheme"
    table = out / f"{args.name}_{tag}.csv"
    write_table_csv(table, rows)
    outputs = [table]
    for y in ys:
        svg = out / f"{args.name}_{y}_{tag}.svg"
        table_chart(svg, rows, x, y, group)
        outputs.append(svg)
    inputs = ([Path(args.predictor)] if pred is not None else []) + \
        ([Path(args.allocator)] if alloc is not None else [])
    _write_manifest(out, args, cfg, inputs, outputs, started)
    for p in outputs:
        print(f"wrote {p}")
    return 0


# ----------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="mapcsim", description="Mobility-aware OWC power-control simulator")
    ap.add_argument("--version", action="version", version=f"mapcsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("print-config", help="print the configuration schema with defaults")
    p.add_argument("--config", help="print this file merged with defaults instead")
    p.set_defaults(func=cmd_print_config)

    p = sub.add_parser("validate", help="check a config and optionally data/checkpoint files")
    common(p, out=False)
    p.add_argument("files", nargs="*", help="traces .csv, labels .npz or checkpoint .npz")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="write a mobility trace set or an oracle-labelled scenario set")
    p.add_argument("kind", choices=("mobility", "labels"))
    common(p)
    p.add_argument("--users", type=int, help="mobility: number of users")
    p.add_argument("--steps", type=int, help="mobility: steps per user")
    p.add_argument("--scenarios", type=int, help="labels: number of scenarios")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the mobility predictor or the power allocator")
    p.add_argument("kind", choices=("predictor", "allocator"))
    common(p)
    p.add_argument("--dataset", help="traces.csv (predictor) or labels.npz (allocator)")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("-v", "--verbose", action="store_true", help="print per-epoch loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run an experiment and write its table and chart")
    p.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    common(p)
    p.add_argument("--predictor", help="predictor checkpoint")
    p.add_argument("--allocator", help="allocator checkpoint")
    p.add_argument("--repetitions", type=int, help="override simulation.repetitions")
    p.add_argument("--slots", type=int, help="override simulation.n_slots")
    p.add_argument("--jobs", type=int, help="parallel episodes (default: available cores)")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"mapcsim: error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        print(f"mapcsim: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
