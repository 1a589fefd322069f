"""Command-line entry point: ``lgs gen-data | train | analyze | selftest``.

Settings come from flags, an optional ``--config`` file (JSON object or
``key=value`` lines) and built-in defaults, in that order of precedence.
Exit codes: 0 ok, 2 usage, 3 IO/format, 4 numerical failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, LgsError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


def _opt_str(text):
    return None if text in (None, "", "none", "None") else str(text)


# key -> (converter, default)
GEN_SCHEMA = {
    "group": (str, "rotation"),
    "alpha": (_opt_str, None),
    "n": (int, 16),
    "count": (int, 2048),
    "modes": (int, 1),
    "mixture": (_opt_str, None),
    "uniform": (_opt_str, None),
    "seed": (int, 0),
    "out": (_opt_str, None),
    "mode": (str, "flow"),
    "style": (str, "blobs"),
    "coords": (str, "centered"),
    "mnist": (_opt_str, None),
}

TRAIN_SCHEMA = {
    "model": (str, None),
    "data": (_opt_str, None),
    "out": (_opt_str, None),
    "epochs": (int, 50),
    "batch_size": (int, 32),
    "lr": (float, 1e-3),
    "alpha_lr": (_opt_float, None),
    "seed": (int, 0),
    "alpha_ratio": (int, 10),
    "nz": (int, 25),
    "lambda_r": (float, 1.0),
    "lambda_x": (float, 1.0),
    "lambda_z": (float, 1.0),
    "lambda_l": (float, 1e-3),
    "val_fraction": (float, 0.1),
    "tnet_hidden": (_ints, (128, 64)),
    "enc_hidden": (_ints, (256, 64)),
    "activation": (str, "tanh"),
    "alpha_init": (float, 0.1),
    "tnet_zero_output": (_bool, False),
    "coords": (str, "centered"),
    "workers": (int, 1),
    "resume": (_bool, False),
    "plots": (_bool, True),
}

ANALYZE_SCHEMA = {
    "run": (_opt_str, None),
    "compare_truth": (_opt_str, None),
    "bins": (int, 40),
    "plots": (_bool, True),
}

# keys that may differ between a run and its resumption
_RESUME_FREE = {"resume", "workers", "epochs", "plots"}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config_file(path, schema):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc.strerror}") from exc
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
    out = {}
    for k, v in raw.items():
        key = k.replace("-", "_")
        if key not in schema:
            raise UsageError(f"unknown config key {k!r} in {path}")
        out[key] = v
    return out


def resolve(schema, flags, file_path=None):
    """Merge defaults < config file < flags and convert every value."""
    merged = {k: d for k, (_, d) in schema.items()}
    if file_path:
        merged.update(read_config_file(file_path, schema))
    merged.update({k: v for k, v in flags.items() if k in schema})
    out = {}
    for k, v in merged.items():
        conv = schema[k][0]
        try:
            out[k] = v if v is None else conv(v)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {k}: {v!r} ({exc})") from exc
    return out


def build_parser():
    p = _Parser(prog="lgs", description="Learn one-parameter Lie group symmetries from pairs.",
                argument_default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a pair dataset (LGSD file)",
                       argument_default=argparse.SUPPRESS)
    g.add_argument("--group", help="rotation, translation-x, translation-y, isotropic-scaling, custom")
    g.add_argument("--alpha", help="six comma-separated coefficients for --group custom")
    g.add_argument("--n", type=int, help="grid size (even, >= 4)")
    g.add_argument("--count", type=int)
    g.add_argument("--modes", type=int, help="equal-weight Gaussian modes over the default range")
    g.add_argument("--mixture", help="explicit mixture 'w:mean:std;w:mean:std;...'")
    g.add_argument("--uniform", help="uniform parameter range 'low,high' (write --uniform=-1,1 for a negative low)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--mode", choices=("flow", "warp"))
    g.add_argument("--style", choices=("blobs", "bandlimited-noise"))
    g.add_argument("--coords", choices=("centered", "zero-based"))
    g.add_argument("--mnist", help="IDX image file to use instead of synthetic images")
    g.add_argument("--config")

    t = sub.add_parser("train", help="train a model on a dataset", argument_default=argparse.SUPPRESS)
    t.add_argument("--model", choices=("naive", "latent"))
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--alpha-lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--alpha-ratio", type=int, help="coefficient steps per network step")
    t.add_argument("--nz", type=int, help="latent dimension (perfect square)")
    for lam in ("r", "x", "z", "l"):
        t.add_argument(f"--lambda-{lam}", type=float)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--tnet-hidden")
    t.add_argument("--enc-hidden")
    t.add_argument("--activation", choices=("tanh", "relu"))
    t.add_argument("--alpha-init", type=float)
    t.add_argument("--tnet-zero-output", action="store_true")
    t.add_argument("--coords", choices=("centered", "zero-based"))
    t.add_argument("--workers", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--no-plots", dest="plots", action="store_false")
    t.add_argument("--config")

    a = sub.add_parser("analyze", help="write the report for a run directory",
                       argument_default=argparse.SUPPRESS)
    a.add_argument("run", nargs="?")
    a.add_argument("--run", dest="run")
    a.add_argument("--compare-truth")
    a.add_argument("--bins", type=int)
    a.add_argument("--no-plots", dest="plots", action="store_false")
    a.add_argument("--config")

    sub.add_parser("selftest", help="run the built-in property checks")
    return p


# -- gen-data ------------------------------------------------------------------

def _parse_mixture(cfg):
    from .data import MixtureSpec, default_mixture

    if cfg["mixture"]:
        comps = []
        for part in cfg["mixture"].split(";"):
            if part.strip():
                w, m, s = (float(v) for v in part.split(":"))
                comps.append((w, m, s))
        return MixtureSpec.gaussian(comps)
    if cfg["uniform"]:
        lo, hi = _floats(cfg["uniform"])
        return MixtureSpec.uniform(lo, hi)
    return default_mixture(cfg["group"], cfg["modes"], cfg["n"])


def cmd_gen_data(flags, config_path=None):
    from .data import load_idx, make_pairs, save_dataset
    from .generator import GROUP_NAMES, ground_truth

    cfg = resolve(GEN_SCHEMA, flags, config_path)
    if cfg["group"] not in GROUP_NAMES:
        raise UsageError(f"unknown group {cfg['group']!r}; valid names: {', '.join(GROUP_NAMES)}")
    if not cfg["out"]:
        raise UsageError("--out is required")
    try:
        group = ground_truth(cfg["group"], _floats(cfg["alpha"]) if cfg["alpha"] else None)
        spec = _parse_mixture(cfg)
        if cfg["count"] < 1:
            raise ValueError("count must be positive")
        from .operators import GridSpec

        GridSpec(cfg["n"], cfg["coords"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    images = load_idx(cfg["mnist"], n=cfg["n"]) if cfg["mnist"] else None
    ds = make_pairs(group, spec, cfg["count"], cfg["n"], cfg["seed"], cfg["mode"],
                    style=cfg["style"], images=images, coords=cfg["coords"])
    save_dataset(ds, cfg["out"])
    print(f"wrote {cfg['out']}: N={len(ds)} n={ds.n} group={group.name} mode={ds.mode} "
          f"seed={ds.seed} mixture={spec.kind} components={len(spec.components)}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

def _train_config(cfg):
    from .models import LossWeights, TrainConfig

    try:
        return TrainConfig(
            epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"],
            alpha_update_ratio=cfg["alpha_ratio"],
            weights=LossWeights(cfg["lambda_r"], cfg["lambda_x"], cfg["lambda_z"], cfg["lambda_l"]),
            val_fraction=cfg["val_fraction"], tnet_hidden=cfg["tnet_hidden"],
            enc_hidden=cfg["enc_hidden"], n_z=cfg["nz"], activation=cfg["activation"],
            alpha_init_scale=cfg["alpha_init"], alpha_lr=cfg["alpha_lr"],
            tnet_zero_output=cfg["tnet_zero_output"], coords=cfg["coords"], workers=cfg["workers"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _header_dict(hdr):
    return {"count": hdr.count, "n": hdr.n, "mode": hdr.mode, "group": hdr.group.name,
            "alpha_true": hdr.group.alpha_true.ravel().tolist(),
            "mixture_kind": hdr.mixture.kind,
            "mixture": [list(c) for c in hdr.mixture.components], "seed": hdr.seed}


def _snapshot(cfg, hdr):
    snap = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    snap["dataset_header"] = _header_dict(hdr)
    return snap


def cmd_train(flags, config_path=None):
    from . import analysis, checkpoint, models
    from .data import load_dataset, read_header

    cfg = resolve(TRAIN_SCHEMA, flags, config_path)
    if os.environ.get("LGS_WORKERS"):
        try:
            cfg["workers"] = int(os.environ["LGS_WORKERS"])
        except ValueError as exc:
            raise UsageError(f"LGS_WORKERS must be an integer: {exc}") from exc
    if cfg["model"] not in ("naive", "latent"):
        raise UsageError("--model must be 'naive' or 'latent'")
    if not cfg["data"] or not cfg["out"]:
        raise UsageError("--data and --out are required")
    tcfg = _train_config(cfg)
    if cfg["model"] == "latent":
        from .generator import latent_basis

        try:
            latent_basis(tcfg.n_z)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    hdr = read_header(cfg["data"])
    out = Path(cfg["out"])
    snap = _snapshot(cfg, hdr)
    ck_path = out / "checkpoint.lgck"
    resuming = cfg["resume"] and ck_path.exists()
    if resuming:
        old = json.loads((out / "config.json").read_text())
        diff = sorted(k for k in snap if k not in _RESUME_FREE and old.get(k) != snap[k])
        if diff:
            raise UsageError(f"cannot resume: settings differ from the run snapshot: {diff}")
    ds = load_dataset(cfg["data"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")

    init = models.init_naive if cfg["model"] == "naive" else models.init_latent
    state = models.new_state(init(ds.n, tcfg), tcfg)
    if resuming:
        state = checkpoint.load_state(ck_path, state)
        rl = analysis.load_runlog(out)
        rl.alpha_steps = [r for r in rl.alpha_steps if r[0] <= state.step]
        rl.loss_steps = [r for r in rl.loss_steps if r[0] <= state.step]
        rl.part_steps = [r for r in rl.part_steps if r[0] <= state.step]
        rl.that_epochs = {k: v for k, v in rl.that_epochs.items() if k <= state.epoch}
        state.runlog = rl
        print(f"resuming {out} from epoch {state.epoch}")

    def on_epoch_end(st):
        analysis.save_runlog(st.runlog, out)
        checkpoint.save_state(ck_path, st)
        print(f"epoch {st.epoch}/{tcfg.epochs} loss {st.runlog.final_loss:.6g}", flush=True)

    truth_modes = len(ds.mixture.components) if ds.mixture.kind == "gaussian-mixture" else None
    try:
        state = models.run_training(ds, tcfg, state, on_epoch_end)
    except models.TrainingDiverged as exc:
        analysis.emit_report(exc.runlog, ds.group, out, truth_modes=truth_modes, plots=False)
        print(f"error: {exc}; last good checkpoint kept at {ck_path}", file=sys.stderr)
        return EXIT_NUMERIC
    analysis.emit_report(state.runlog, ds.group, out, truth_modes=truth_modes, plots=cfg["plots"])
    print(f"run written to {out}")
    return EXIT_OK


# -- analyze -------------------------------------------------------------------

def cmd_analyze(flags, config_path=None):
    from . import analysis
    from .generator import GroundTruthGroup, ground_truth

    cfg = resolve(ANALYZE_SCHEMA, flags, config_path)
    if not cfg["run"]:
        raise UsageError("a run directory is required")
    run = Path(cfg["run"])
    try:
        snap = json.loads((run / "config.json").read_text())
        hdr = snap["dataset_header"]
        rl = analysis.load_runlog(run)
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed run directory {run}: {exc}") from exc
    if cfg["compare_truth"]:
        try:
            truth = ground_truth(cfg["compare_truth"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        truth = GroundTruthGroup(hdr["group"], np.array(hdr["alpha_true"]))
    truth_modes = len(hdr["mixture"]) if hdr.get("mixture_kind") == "gaussian-mixture" else None
    files = analysis.emit_report(rl, truth, run, truth_modes=truth_modes, plots=cfg["plots"],
                                 bins=cfg["bins"])
    for row in analysis.summarize(rl, truth, truth_modes, cfg["bins"]):
        print(f"{row[0]},{row[1]}")
    print(f"{len(files)} files written to {run}")
    return EXIT_OK


def cmd_selftest():
    from .selftest import run_all

    return EXIT_OK if run_all() else EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        command = ns.pop("command")
        config_path = ns.pop("config", None)
        if command == "gen-data":
            return cmd_gen_data(ns, config_path)
        if command == "train":
            return cmd_train(ns, config_path)
        if command == "analyze":
            return cmd_analyze(ns, config_path)
        return cmd_selftest()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lgs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"lgs: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"lgs: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LgsError as exc:
        print(f"lgs: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
