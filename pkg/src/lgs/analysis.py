"""Recovery metrics for learned generators and t-hat distributions, and the
CSV report layout.

Coefficients and parameters are only identified up to a common scale, so
every comparison here is scale-free: directions for alpha, mode counts for
t-hat.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .generator import as_alpha


class DegenerateInputWarning(UserWarning):
    """A metric was asked about an input it cannot meaningfully score."""


def alpha_alignment(learned, truth):
    """``|<a, b>| / (|a| |b|)`` over the six coefficients; 1 is a perfect match.

    Returns 0 (with a :class:`DegenerateInputWarning`) if ``learned`` is zero.
    """
    a = as_alpha(learned).ravel()
    b = as_alpha(truth).ravel()
    bb = float(b @ b)
    if bb == 0:
        raise ValueError("ground-truth coefficients must be nonzero")
    aa = float(a @ a)
    if aa == 0:
        warnings.warn("learned coefficients are all zero", DegenerateInputWarning, stacklevel=2)
        return 0.0
    # one square root of the product keeps alignment(a, a) exactly 1
    return float(min(1.0, abs(float(a @ b)) / math.sqrt(aa * bb)))


def spurious_ratio(learned, truth):
    """Largest off-support coefficient relative to the largest on-support one.

    Returns ``inf`` (with a :class:`DegenerateInputWarning`) when the learned
    coefficients vanish on the support of ``truth``.
    """
    a = np.abs(as_alpha(learned).ravel())
    b = as_alpha(truth).ravel()
    if not np.any(b):
        raise ValueError("ground-truth coefficients must be nonzero")
    on = b != 0
    denom = a[on].max()
    if denom == 0:
        warnings.warn("learned coefficients vanish on the generator support",
                      DegenerateInputWarning, stacklevel=2)
        return math.inf
    off = a[~on].max() if np.any(~on) else 0.0
    return float(off / denom)


@dataclass(frozen=True)
class THistogram:
    epoch: int
    edges: np.ndarray
    counts: np.ndarray
    degenerate: bool = False


def histogram(values, bins, epoch=0):
    """Uniform bins over ``[min, max]``; intervals right-open except the last."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("histogram needs at least one value")
    if bins < 2:
        raise ValueError("need at least two bins")
    lo, hi = v.min(), v.max()
    if lo == hi:
        return THistogram(epoch, np.array([lo, hi]), np.array([v.size]), degenerate=True)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return THistogram(epoch, edges, counts)


def silverman_bandwidth(v):
    std = np.std(v, ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std
    return 0.9 * spread * v.size ** (-0.2)


def kde(values, bandwidth=None, points=512):
    """Gaussian KDE on a uniform grid spanning the data plus three bandwidths."""
    v = np.asarray(values, dtype=np.float64).ravel()
    bw = silverman_bandwidth(v) if bandwidth is None else float(bandwidth)
    grid = np.linspace(v.min() - 3 * bw, v.max() + 3 * bw, points)
    dens = np.zeros(points)
    for i in range(0, v.size, 2048):
        u = (grid[:, None] - v[None, i:i + 2048]) / bw
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return grid, dens / (v.size * bw * np.sqrt(2 * np.pi))


def count_modes(values, bandwidth=None, floor=0.05):
    """Number of strict local maxima of the KDE at least ``floor`` of its peak."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 30:
        raise ValueError(f"mode counting needs at least 30 values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if np.ptp(v) == 0 or np.std(v) == 0:
        return 1
    _, d = kde(v, bandwidth)
    inner = d[1:-1]
    peaks = (inner > d[:-2]) & (inner > d[2:]) & (inner >= floor * d.max())
    return max(1, int(np.count_nonzero(peaks)))


# -- persisted run logs --------------------------------------------------------

ALPHA_HEADER = ["step", "a11", "a12", "a13", "a21", "a22", "a23"]
PART_HEADER = ["step", "recon", "trans_x", "trans_z", "penalty"]
NO_DATA = "no data"


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def save_runlog(runlog, outdir):
    """Write the trajectory CSVs and ``run.json`` for ``runlog``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "alpha_trajectory.csv", ALPHA_HEADER,
               [[int(r[0]), *map(_fmt, r[1:])] for r in runlog.alpha_steps])
    _write_csv(out / "loss_trajectory.csv", ["step", "phase", "loss"],
               [[int(s), p, _fmt(v)] for s, p, v in runlog.loss_steps])
    if runlog.part_steps:
        _write_csv(out / "parts_trajectory.csv", PART_HEADER,
                   [[int(r[0]), *map(_fmt, r[1:])] for r in runlog.part_steps])
    for old in out.glob("that_epoch_*.csv"):
        if int(old.stem.rsplit("_", 1)[1]) not in runlog.that_epochs:
            old.unlink()
    for epoch, that in runlog.that_epochs.items():
        _write_csv(out / f"that_epoch_{epoch}.csv", ["sample_index", "that"],
                   [[int(i), _fmt(v)] for i, v in zip(runlog.val_indices, that)])
    meta = {
        "initial_loss": runlog.initial_loss,
        "final_loss": runlog.final_loss,
        "status": runlog.status,
        "message": runlog.message,
        "val_indices": [int(i) for i in (runlog.val_indices if runlog.val_indices is not None
                                         else [])],
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_runlog(rundir):
    from .models import RunLog

    d = Path(rundir)
    rl = RunLog()
    meta = json.loads((d / "run.json").read_text())
    rl.initial_loss = meta.get("initial_loss")
    rl.final_loss = meta.get("final_loss")
    rl.status = meta.get("status", "ok")
    rl.message = meta.get("message", "")
    rl.val_indices = np.array(meta.get("val_indices", []), dtype=np.int64)
    header, rows = _read_csv(d / "alpha_trajectory.csv")
    if header != ALPHA_HEADER:
        raise ValueError(f"unexpected header in {d / 'alpha_trajectory.csv'}: {header}")
    rl.alpha_steps = [(int(r[0]), *map(float, r[1:])) for r in rows]
    if (d / "loss_trajectory.csv").exists():
        _, rows = _read_csv(d / "loss_trajectory.csv")
        rl.loss_steps = [(int(s), p, float(v)) for s, p, v in rows]
    if (d / "parts_trajectory.csv").exists():
        _, rows = _read_csv(d / "parts_trajectory.csv")
        rl.part_steps = [(int(r[0]), *map(float, r[1:])) for r in rows]
    for f in sorted(d.glob("that_epoch_*.csv"), key=lambda p: int(p.stem.rsplit("_", 1)[1])):
        _, rows = _read_csv(f)
        rl.that_epochs[int(f.stem.rsplit("_", 1)[1])] = np.array([float(r[1]) for r in rows])
    return rl


def summarize(runlog, truth, truth_modes=None, bins=40):
    """Ordered ``(key, value)`` rows for ``summary.csv``."""
    rows = [("group", truth.name), ("status", runlog.status), ("steps", runlog.steps),
            ("epochs", len(runlog.that_epochs))]
    if runlog.alpha_steps:
        final = np.array(runlog.alpha_steps[-1][1:]).reshape(2, 3)
        rows += [(k, _fmt(v)) for k, v in zip(ALPHA_HEADER[1:], final.ravel())]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInputWarning)
            rows.append(("alignment", _fmt(alpha_alignment(final, truth.alpha_true))))
            rows.append(("spurious_ratio", _fmt(spurious_ratio(final, truth.alpha_true))))
    else:
        rows += [("alignment", NO_DATA), ("spurious_ratio", NO_DATA)]
    if runlog.initial_loss is not None and runlog.final_loss is not None:
        rows += [("initial_loss", _fmt(runlog.initial_loss)), ("final_loss", _fmt(runlog.final_loss))]
        if runlog.final_loss > 0:
            rows.append(("loss_reduction", _fmt(runlog.initial_loss / runlog.final_loss)))
    else:
        rows += [("initial_loss", NO_DATA), ("final_loss", NO_DATA)]
    if runlog.that_epochs:
        last = max(runlog.that_epochs)
        that = runlog.that_epochs[last]
        rows.append(("that_final_epoch", last))
        rows.append(("that_modes_final", count_modes(that) if that.size >= 30 else NO_DATA))
    else:
        rows.append(("that_modes_final", NO_DATA))
    if truth_modes is not None:
        rows.append(("truth_modes", int(truth_modes)))
    return rows


def emit_report(runlog, truth, outdir, *, truth_modes=None, plots=True, bins=40):
    """Write CSV trajectories, ``summary.csv`` and (optionally) SVG figures.

    Returns the list of files written.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    save_runlog(runlog, out)
    rows = summarize(runlog, truth, truth_modes, bins)
    _write_csv(out / "summary.csv", ["key", "value"], rows)
    written = sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json"))
    if plots:
        from . import plotting

        written += plotting.render_run(runlog, truth, out, bins=bins)
    return written
