"""The naive pixel-space model and the autoencoder latent model, with training.

Naive:  ``xhat = exp(f(x, xbar) L^alpha) x``, loss ``||xhat - xbar||^2``.
Latent: ``xhat = dec(exp(f(x, xbar) L^alpha~) enc(x))`` with the four-term
objective (autoencoder reconstruction of both inputs, reconstruction in
pixel space, agreement in latent space, and a squared penalty on alpha~).

Both trainers alternate ``alpha_update_ratio`` coefficient-only Adam steps
with one network step on each batch.  Per-pair losses are averaged over the
batch.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import batchflow
from .data import STREAM_INIT, STREAM_SHUFFLE, stream_rng
from .errors import NonFiniteError, ShapeError
from .expm import expm, flow_apply, flow_grads
from .generator import assemble_generator, basis_operators, combine, latent_basis
from .nn import MlpParams, MlpSpec, adam_init, adam_step, init_mlp, mlp_backward, mlp_forward
from .operators import GridSpec, build_operators_2d


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_x: float = 1.0
    lambda_z: float = 1.0
    lambda_l: float = 1e-3

    def __post_init__(self):
        vals = (self.lambda_r, self.lambda_x, self.lambda_z, self.lambda_l)
        if min(vals) < 0 or not any(vals):
            raise ValueError("loss weights must be non-negative and not all zero")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    alpha_update_ratio: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    val_fraction: float = 0.1
    tnet_hidden: tuple = (128, 64)
    enc_hidden: tuple = (256, 64)
    n_z: int = 25
    activation: str = "tanh"
    alpha_init_scale: float = 0.1
    alpha_lr: float = None
    tnet_zero_output: bool = False
    coords: str = "centered"
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.alpha_update_ratio < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and alpha_update_ratio >= 1 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class RunLog:
    """Everything the analysis step needs from a training run."""

    alpha_steps: list = field(default_factory=list)     # (step, 6 coefficients)
    loss_steps: list = field(default_factory=list)      # (step, phase, batch loss)
    part_steps: list = field(default_factory=list)      # (step, R, X, Z, L), latent only
    that_epochs: dict = field(default_factory=dict)     # epoch -> validation t-hat
    val_indices: np.ndarray = None
    initial_loss: float = None
    final_loss: float = None
    status: str = "ok"
    message: str = ""

    @property
    def steps(self):
        return len(self.alpha_steps)


class TrainingDiverged(NonFiniteError):
    """Raised when the objective stops being finite; carries the partial run."""

    def __init__(self, message, runlog, model):
        super().__init__(message)
        self.runlog = runlog
        self.model = model


# -- naive model ---------------------------------------------------------------

@dataclass(eq=False)
class NaiveModel:
    alpha: np.ndarray
    tnet: MlpParams
    ops: object

    def generator(self):
        return assemble_generator(self.alpha, self.ops)


def _check_pair(x, xbar, size):
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    if x.shape != (size,) or xbar.shape != (size,):
        raise ShapeError(f"expected two signals of length {size}, got {x.shape} and {xbar.shape}")
    return x, xbar


def naive_forward(m, x, xbar):
    """``(t_hat, xhat)`` for one pair."""
    x, xbar = _check_pair(x, xbar, m.ops.n ** 2)
    out, _ = mlp_forward(m.tnet, np.concatenate([x, xbar]))
    that = float(out[0])
    return that, flow_apply(m.generator(), that, x)


def naive_loss(m, x, xbar):
    _, xhat = naive_forward(m, x, xbar)
    r = xhat - np.asarray(xbar, dtype=np.float64)
    return float(r @ r)


def naive_loss_grad(m, x, xbar):
    """Loss and exact gradients ``(loss, dalpha, dtnet)`` for one pair."""
    x, xbar = _check_pair(x, xbar, m.ops.n ** 2)
    out, tape = mlp_forward(m.tnet, np.concatenate([x, xbar]))
    that = float(out[0])
    lgen = m.generator()
    r = flow_apply(lgen, that, x) - xbar
    dt, dalpha, _ = flow_grads(lgen, that, x, 2.0 * r, basis_operators(m.ops))
    dnet, _ = mlp_backward(m.tnet, tape, np.array([dt]))
    return float(r @ r), dalpha.reshape(2, 3), dnet


def init_naive(n, cfg):
    ops = build_operators_2d(GridSpec(n, cfg.coords))
    rng = stream_rng(cfg.seed, STREAM_INIT, 0)
    alpha = rng.uniform(-cfg.alpha_init_scale, cfg.alpha_init_scale, size=(2, 3))
    spec = MlpSpec((2 * n * n, *cfg.tnet_hidden, 1), cfg.activation)
    tnet = init_mlp(spec, stream_rng(cfg.seed, STREAM_INIT, 1), zero_output=cfg.tnet_zero_output)
    return NaiveModel(alpha, tnet, ops)


def _that_batch(tnet, x, xbar):
    out, tape = mlp_forward(tnet, np.concatenate([x, xbar], axis=1))
    return out[:, 0], tape


def naive_batch_loss(m, x, xbar, *, workers=1):
    """Mean naive loss over a batch (fast flow path, no gradients)."""
    that, _ = _that_batch(m.tnet, x, xbar)
    y, _ = batchflow.batch_flow(m.alpha, m.ops, that, x, store=False, workers=workers)
    r = y - xbar
    return float(np.mean(np.einsum("bi,bi->b", r, r)))


def naive_batch_grads(m, x, xbar, *, workers=1):
    """Mean loss over a batch with gradients for alpha and the t-network."""
    that, tape = _that_batch(m.tnet, x, xbar)
    y, cache = batchflow.batch_flow(m.alpha, m.ops, that, x, workers=workers)
    r = y - xbar
    b = x.shape[0]
    g = (2.0 / b) * r
    dt, dalpha, _ = batchflow.batch_flow_backward(cache, g, workers=workers)
    dnet, _ = mlp_backward(m.tnet, tape, dt[:, None])
    return float(np.sum(r * r) / b), dalpha, dnet


# -- latent model --------------------------------------------------------------

PART_NAMES = ("recon", "trans_x", "trans_z", "penalty")


@dataclass(eq=False)
class LatentModel:
    alpha_tilde: np.ndarray
    tnet: MlpParams
    encoder: MlpParams
    decoder: MlpParams
    n_z: int
    latent_ops: list

    def generator(self):
        return combine(self.alpha_tilde, self.latent_ops)


def init_latent(n, cfg):
    rng = stream_rng(cfg.seed, STREAM_INIT, 0)
    alpha = rng.uniform(-cfg.alpha_init_scale, cfg.alpha_init_scale, size=(2, 3))
    d = n * n
    tnet = init_mlp(MlpSpec((2 * d, *cfg.tnet_hidden, 1), cfg.activation),
                    stream_rng(cfg.seed, STREAM_INIT, 1), zero_output=cfg.tnet_zero_output)
    enc = init_mlp(MlpSpec((d, *cfg.enc_hidden, cfg.n_z), cfg.activation),
                   stream_rng(cfg.seed, STREAM_INIT, 2))
    dec = init_mlp(MlpSpec((cfg.n_z, *reversed(cfg.enc_hidden), d), cfg.activation),
                   stream_rng(cfg.seed, STREAM_INIT, 3))
    return LatentModel(alpha, tnet, enc, dec, cfg.n_z, latent_basis(cfg.n_z))


def latent_forward(m, x, xbar):
    """``(t_hat, z, zbar, zflow, xhat)`` for one pair."""
    d = m.encoder.spec.layer_dims[0]
    x, xbar = _check_pair(x, xbar, d)
    that = float(mlp_forward(m.tnet, np.concatenate([x, xbar]))[0][0])
    z = mlp_forward(m.encoder, x)[0]
    zbar = mlp_forward(m.encoder, xbar)[0]
    zflow = flow_apply(m.generator(), that, z)
    xhat = mlp_forward(m.decoder, zflow)[0]
    return that, z, zbar, zflow, xhat


def _sq(v):
    return float(np.dot(v, v))


def latent_loss(m, x, xbar, w):
    """``(total, parts)``; parts are the unweighted (R, X, Z, penalty) terms."""
    that, z, zbar, zflow, xhat = latent_forward(m, x, xbar)
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    rec = _sq(mlp_forward(m.decoder, z)[0] - x) + _sq(mlp_forward(m.decoder, zbar)[0] - xbar)
    parts = np.array([rec, _sq(xhat - xbar), _sq(zflow - zbar), _sq(m.alpha_tilde.ravel())])
    lam = np.array([w.lambda_r, w.lambda_x, w.lambda_z, w.lambda_l])
    return float(lam @ parts), parts


@dataclass
class _LatentCache:
    that: np.ndarray
    tnet_tape: object
    z: np.ndarray
    zbar: np.ndarray
    enc_tape: object
    rec_out: np.ndarray      # decoder output for [z; zbar]


def _latent_encode(m, x, xbar):
    that, ttape = _that_batch(m.tnet, x, xbar)
    zz, etape = mlp_forward(m.encoder, np.concatenate([x, xbar], axis=0))
    b = x.shape[0]
    rec, _ = mlp_forward(m.decoder, zz)
    return _LatentCache(that, ttape, zz[:b], zz[b:], etape, rec)


def _latent_flows(m, that, z):
    lgen = m.generator()
    return lgen, np.stack([expm(ti * lgen).value @ zi if ti != 0.0 else zi.copy()
                           for ti, zi in zip(that, z)])


def latent_batch_loss(m, x, xbar, w, cache=None):
    """Mean latent objective over a batch and the mean unweighted parts."""
    c = cache or _latent_encode(m, x, xbar)
    b = x.shape[0]
    _, zflow = _latent_flows(m, c.that, c.z)
    xhat, _ = mlp_forward(m.decoder, zflow)
    rec = np.sum((c.rec_out[:b] - x) ** 2) + np.sum((c.rec_out[b:] - xbar) ** 2)
    parts = np.array([rec / b, np.sum((xhat - xbar) ** 2) / b,
                      np.sum((zflow - c.zbar) ** 2) / b, _sq(m.alpha_tilde.ravel())])
    lam = np.array([w.lambda_r, w.lambda_x, w.lambda_z, w.lambda_l])
    return float(lam @ parts), parts


def latent_batch_grads(m, x, xbar, w, *, nets=True, cache=None):
    """Mean objective, parts, and gradients.

    Returns ``(total, parts, dalpha, grads)``; ``grads`` maps ``tnet``,
    ``encoder`` and ``decoder`` to gradient lists (empty when ``nets`` is
    false, in which case only ``dalpha`` is computed).
    """
    c = cache or _latent_encode(m, x, xbar)
    b = x.shape[0]
    lgen, zflow = _latent_flows(m, c.that, c.z)
    dec_in = np.concatenate([c.z, c.zbar, zflow], axis=0) if nets else zflow
    dec_out, dtape = mlp_forward(m.decoder, dec_in)
    xhat = dec_out[-b:]
    rx = c.rec_out[:b] - x
    rxb = c.rec_out[b:] - xbar
    rh = xhat - xbar
    rz = zflow - c.zbar
    parts = np.array([(np.sum(rx * rx) + np.sum(rxb * rxb)) / b, np.sum(rh * rh) / b,
                      np.sum(rz * rz) / b, _sq(m.alpha_tilde.ravel())])
    lam = np.array([w.lambda_r, w.lambda_x, w.lambda_z, w.lambda_l])
    total = float(lam @ parts)

    g_xhat = (2.0 * w.lambda_x / b) * rh
    if nets:
        g_dec = np.concatenate([(2.0 * w.lambda_r / b) * rx, (2.0 * w.lambda_r / b) * rxb, g_xhat])
    else:
        g_dec = g_xhat
    ddec, dzin = mlp_backward(m.decoder, dtape, g_dec)
    g_zflow = dzin[-b:] + (2.0 * w.lambda_z / b) * rz
    dalpha = 2.0 * w.lambda_l * m.alpha_tilde.ravel()
    dt = np.zeros(b)
    dz = np.zeros_like(c.z)
    for i in range(b):
        dti, dai, dzi = flow_grads(lgen, c.that[i], c.z[i], g_zflow[i], m.latent_ops)
        dalpha = dalpha + dai
        dt[i] = dti
        dz[i] = dzi
    if not nets:
        return total, parts, dalpha.reshape(2, 3), {}
    dz = dz + dzin[:b]
    dzbar = dzin[b:2 * b] - (2.0 * w.lambda_z / b) * rz
    denc, _ = mlp_backward(m.encoder, c.enc_tape, np.concatenate([dz, dzbar], axis=0))
    dtnet, _ = mlp_backward(m.tnet, c.tnet_tape, dt[:, None])
    return total, parts, dalpha.reshape(2, 3), {"tnet": dtnet, "encoder": denc, "decoder": ddec}


def latent_loss_grad(m, x, xbar, w):
    """Single-pair objective with exact gradients (batch of one)."""
    total, parts, dalpha, grads = latent_batch_grads(m, np.atleast_2d(x), np.atleast_2d(xbar), w)
    return total, parts, dalpha, grads


# -- training ------------------------------------------------------------------

def split_indices(count, cfg):
    """``(train, val)`` index arrays from a seeded permutation."""
    perm = stream_rng(cfg.seed, STREAM_SHUFFLE, 0).permutation(count)
    n_val = int(np.ceil(cfg.val_fraction * count)) if cfg.val_fraction > 0 else 0
    if count - n_val < 1:
        raise ValueError("dataset too small for the validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _batches(train, epoch, cfg):
    order = stream_rng(cfg.seed, STREAM_SHUFFLE, epoch + 1).permutation(train)
    return [order[i:i + cfg.batch_size] for i in range(0, order.size, cfg.batch_size)]


def _finite(value, what, runlog, model):
    if not np.isfinite(value):
        runlog.status = "nonfinite"
        runlog.message = f"non-finite {what}"
        raise TrainingDiverged(f"training halted: non-finite {what}", runlog, model)


@dataclass
class TrainState:
    """Mutable optimizer state of a run; ``epoch`` counts completed epochs."""

    model: object
    opt_alpha: object
    opt_nets: object
    epoch: int = 0
    step: int = 0
    runlog: RunLog = field(default_factory=RunLog)


def _nets_arrays(model):
    if isinstance(model, NaiveModel):
        return model.tnet.arrays()
    return model.tnet.arrays() + model.encoder.arrays() + model.decoder.arrays()


def _set_nets(model, arrays):
    k = len(model.tnet.arrays())
    tnet = MlpParams.from_arrays(model.tnet.spec, arrays[:k])
    if isinstance(model, NaiveModel):
        return replace(model, tnet=tnet)
    e = k + len(model.encoder.arrays())
    return replace(model, tnet=tnet,
                   encoder=MlpParams.from_arrays(model.encoder.spec, arrays[k:e]),
                   decoder=MlpParams.from_arrays(model.decoder.spec, arrays[e:]))


def _alpha_of(model):
    return model.alpha if isinstance(model, NaiveModel) else model.alpha_tilde


def _with_alpha(model, alpha):
    if isinstance(model, NaiveModel):
        return replace(model, alpha=alpha)
    return replace(model, alpha_tilde=alpha)


def new_state(model, cfg):
    alpha_lr = cfg.lr if cfg.alpha_lr is None else cfg.alpha_lr
    return TrainState(model, adam_init([_alpha_of(model)], lr=alpha_lr),
                      adam_init(_nets_arrays(model), lr=cfg.lr))


def _objective(model, x, xbar, cfg):
    """Mean objective over a set of pairs, evaluated in batches."""
    total, parts_sum, count = 0.0, np.zeros(3), x.shape[0]
    for i in range(0, count, 256):
        xs, xbs = x[i:i + 256], xbar[i:i + 256]
        if isinstance(model, NaiveModel):
            total += naive_batch_loss(model, xs, xbs, workers=cfg.workers) * xs.shape[0]
        else:
            _, parts = latent_batch_loss(model, xs, xbs, cfg.weights)
            parts_sum += parts[:3] * xs.shape[0]
    if isinstance(model, NaiveModel):
        return total / count
    w = cfg.weights
    parts = np.append(parts_sum / count, _sq(model.alpha_tilde.ravel()))
    return float(np.array([w.lambda_r, w.lambda_x, w.lambda_z, w.lambda_l]) @ parts)


def predict_that(model, x, xbar):
    return _that_batch(model.tnet, x, xbar)[0]


def _cycle_naive(st, xb, xbb, cfg):
    m = st.model
    rl = st.runlog
    for _ in range(cfg.alpha_update_ratio):
        loss, dalpha = _naive_alpha_grad(m, xb, xbb, cfg)
        _finite(loss, "loss", rl, m)
        (alpha,), st.opt_alpha = adam_step(st.opt_alpha, [m.alpha], [dalpha])
        m = replace(m, alpha=alpha)
        st.step += 1
        rl.alpha_steps.append((st.step, *alpha.ravel()))
        rl.loss_steps.append((st.step, "alpha", loss))
    that, tape = _that_batch(m.tnet, xb, xbb)
    y, _ = batchflow.batch_flow(m.alpha, m.ops, that, xb, store=False, workers=cfg.workers)
    r = y - xbb
    b = xb.shape[0]
    loss = float(np.sum(r * r) / b)
    _finite(loss, "loss", rl, m)
    dt = batchflow.flow_time_grad(m.alpha, m.ops, y, (2.0 / b) * r)
    dnet, _ = mlp_backward(m.tnet, tape, dt[:, None])
    arrays, st.opt_nets = adam_step(st.opt_nets, m.tnet.arrays(), dnet)
    m = _set_nets(m, arrays)
    st.step += 1
    rl.alpha_steps.append((st.step, *m.alpha.ravel()))
    rl.loss_steps.append((st.step, "net", loss))
    st.model = m


def _naive_alpha_grad(m, xb, xbb, cfg):
    that, _ = _that_batch(m.tnet, xb, xbb)
    y, cache = batchflow.batch_flow(m.alpha, m.ops, that, xb, workers=cfg.workers)
    r = y - xbb
    b = xb.shape[0]
    _, dalpha, _ = batchflow.batch_flow_backward(cache, (2.0 / b) * r, workers=cfg.workers)
    return float(np.sum(r * r) / b), dalpha


def _cycle_latent(st, xb, xbb, cfg):
    m = st.model
    rl = st.runlog
    w = cfg.weights
    cache = _latent_encode(m, xb, xbb)
    for _ in range(cfg.alpha_update_ratio):
        total, parts, dalpha, _ = latent_batch_grads(m, xb, xbb, w, nets=False, cache=cache)
        _finite(total, "loss", rl, m)
        (alpha,), st.opt_alpha = adam_step(st.opt_alpha, [m.alpha_tilde], [dalpha])
        m = replace(m, alpha_tilde=alpha)
        st.step += 1
        rl.alpha_steps.append((st.step, *alpha.ravel()))
        rl.loss_steps.append((st.step, "alpha", total))
        rl.part_steps.append((st.step, *parts))
    total, parts, _, grads = latent_batch_grads(m, xb, xbb, w)
    _finite(total, "loss", rl, m)
    arrays, st.opt_nets = adam_step(st.opt_nets, _nets_arrays(m),
                                    grads["tnet"] + grads["encoder"] + grads["decoder"])
    m = _set_nets(m, arrays)
    st.step += 1
    rl.alpha_steps.append((st.step, *m.alpha_tilde.ravel()))
    rl.loss_steps.append((st.step, "net", total))
    rl.part_steps.append((st.step, *parts))
    st.model = m


def run_training(dataset, cfg, state=None, on_epoch_end=None):
    """Train from ``state`` (or a fresh model) until ``cfg.epochs`` are done.

    ``on_epoch_end(state)`` runs after every epoch, e.g. for checkpoints.
    Returns the final :class:`TrainState`.
    """
    if len(dataset) < 1:
        raise ValueError("dataset is empty")
    train, val = split_indices(len(dataset), cfg)
    x, xbar = dataset.x, dataset.xbar
    st = state
    if st is None:
        raise ValueError("an initial TrainState is required")
    latent = isinstance(st.model, LatentModel)
    rl = st.runlog
    rl.val_indices = val
    if rl.initial_loss is None:
        rl.initial_loss = _objective(st.model, x[train], xbar[train], cfg)
        _finite(rl.initial_loss, "initial loss", rl, st.model)
    cycle = _cycle_latent if latent else _cycle_naive
    while st.epoch < cfg.epochs:
        for idx in _batches(train, st.epoch, cfg):
            cycle(st, x[idx], xbar[idx], cfg)
        st.epoch += 1
        if val.size:
            rl.that_epochs[st.epoch] = predict_that(st.model, x[val], xbar[val])
        rl.final_loss = _objective(st.model, x[train], xbar[train], cfg)
        _finite(rl.final_loss, "epoch loss", rl, st.model)
        if on_epoch_end is not None:
            on_epoch_end(st)
    if rl.final_loss is None:
        rl.final_loss = rl.initial_loss
    return st


def train_naive(dataset, cfg, on_epoch_end=None):
    """Fit the naive model; returns ``(model, runlog)``."""
    st = new_state(init_naive(dataset.n, cfg), cfg)
    st = run_training(dataset, cfg, st, on_epoch_end)
    return st.model, st.runlog


def train_latent(dataset, cfg, on_epoch_end=None):
    """Fit the latent model; returns ``(model, runlog)``."""
    st = new_state(init_latent(dataset.n, cfg), cfg)
    st = run_training(dataset, cfg, st, on_epoch_end)
    return st.model, st.runlog
