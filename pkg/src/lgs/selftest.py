"""Quick property checks runnable without pytest (``lgs selftest``)."""

import time

import numpy as np

from .data import MixtureSpec, load_dataset, make_pairs, save_dataset
from .expm import expm, flow_apply, flow_grads
from .generator import assemble_generator, basis_operators, ground_truth
from .operators import GridSpec, build_operators_2d, derivative_matrix_1d


def _taylor(a, terms=50):
    s = max(0, int(np.ceil(np.log2(max(np.abs(a).sum(axis=0).max(), 1e-300) / 0.5))))
    b = a / 2.0**s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def check_operators():
    n = 16
    d = derivative_matrix_1d(n)
    j = np.arange(n)
    err = 0.0
    for p in range(1, n // 2):
        s = np.sin(2 * np.pi * p * j / n)
        err = max(err, np.abs(d @ s - (2 * np.pi * p / n) * np.cos(2 * np.pi * p * j / n)).max())
    return err <= 1e-10 and np.abs(d @ np.ones(n)).max() <= 1e-12 and np.abs(d.T + d).max() <= 1e-12


def check_expm(count=40):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(count):
        k = int(rng.integers(2, 33))
        a = rng.standard_normal((k, k))
        a *= rng.uniform(0.05, 2.0) / np.abs(a).sum(axis=0).max()
        ref = _taylor(a)
        worst = max(worst, np.linalg.norm(expm(a).value - ref) / np.linalg.norm(ref))
    rot = expm(np.array([[0.0, -0.5], [0.5, 0.0]])).value
    c, s = np.cos(0.5), np.sin(0.5)
    return worst <= 1e-10 and np.abs(rot - [[c, -s], [s, c]]).max() <= 1e-12


def check_flow_gradients():
    rng = np.random.default_rng(2)
    ops = build_operators_2d(GridSpec(8))
    basis = basis_operators(ops)
    alpha = rng.uniform(-0.3, 0.3, (2, 3))
    x, g = rng.standard_normal(64), rng.standard_normal(64)
    t = 0.4
    lgen = assemble_generator(alpha, ops)
    _, dalpha, _ = flow_grads(lgen, t, x, g, basis)
    h = 1e-5
    ok = True
    for c in range(6):
        e = np.zeros(6)
        e[c] = h
        lp = g @ flow_apply(assemble_generator(alpha.ravel() + e, ops), t, x)
        lm = g @ flow_apply(assemble_generator(alpha.ravel() - e, ops), t, x)
        fd = (lp - lm) / (2 * h)
        ok &= abs(fd - dalpha[c]) <= 1e-5 * max(1.0, abs(fd))
    return bool(ok)


def check_dataset(tmpdir=None):
    import tempfile
    from pathlib import Path

    ds = make_pairs("rotation", MixtureSpec.uniform(-0.5, 0.5), 4, 8, seed=3)
    lgen = assemble_generator(ground_truth("rotation").alpha_true, build_operators_2d(GridSpec(8)))
    ok = all(np.abs(flow_apply(lgen, t, x) - xb).max() <= 1e-12 for x, xb, t in ds.pairs)
    with tempfile.TemporaryDirectory(dir=tmpdir) as d:
        p = Path(d) / "ds.lgsd"
        save_dataset(ds, p)
        back = load_dataset(p)
        ok &= back.x.tobytes() == ds.x.tobytes() and back.xbar.tobytes() == ds.xbar.tobytes()
        ok &= back.t.tobytes() == ds.t.tobytes()
    return bool(ok)


CHECKS = [
    ("operator suite", check_operators),
    ("exponential suite", check_expm),
    ("flow gradient suite", check_flow_gradients),
    ("dataset self-consistency", check_dataset),
]


def run_all():
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        passed = bool(fn())
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}  ({time.perf_counter() - t0:.2f}s)")
    return ok
