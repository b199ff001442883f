"""Closed-loop maximin training of a shared-dictionary CSC autoencoder.

Each batch gets one ascent step on the encoder parameters and one descent step:

* ascent: dictionaries receive only the gradient that flows through encoder
  applications (both passes of ``f``); decoder reads of the same kernels are
  detached. Encoder batch-norm parameters move with it.
* descent, strategy 2: dictionaries receive the total derivative.
* descent, strategy 1: dictionaries receive only the decoder-path gradient.
  Decoder batch-norm parameters move in either strategy.

The two steps keep separate Adam moments.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .csc import FistaConfig
from .networks import Network, get_architecture
from .rate import RateConfig, rate_reduction
from .tensor import NumericError

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "delta_r", "recon_mse", "sparsity", "wall_ms"]
CHECKPOINT_MAGIC = "CSCCKPT"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    strategy: int = 2
    lr_max: float = 2e-4
    lr_min: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    batch_size: int = 64
    steps: int = 500
    arch: str = "toy"
    seed: int = 0
    checkpoint_every: int = 100
    refresh_every: int = 100
    ascent_first_pass_only: bool = False
    record_time: bool = False
    fista: FistaConfig = field(default_factory=FistaConfig)
    rate: RateConfig = field(default_factory=RateConfig)

    def __post_init__(self):
        if self.strategy not in (1, 2):
            raise ValueError(f"strategy must be 1 or 2, got {self.strategy}")
        if self.lr_max < 0 or self.lr_min < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 0 or self.checkpoint_every < 1 or self.refresh_every < 1:
            raise ValueError("steps must be >= 0; checkpoint_every and refresh_every >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps=1e-8):
    """One bias-corrected Adam descent step; ``step`` counts from 1.

    Returns ``(new_param, new_m, new_v)``.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    return param - lr * mhat / (np.sqrt(vhat) + eps), m, v


class Adam:
    """Adam moments for a named set of parameters, updated in place."""

    def __init__(self, lr, beta1, beta2, eps=1e-8, sign=1.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.sign = sign  # -1 turns descent into ascent
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            g = self.sign * grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            new, self.m[name], self.v[name] = adam_update(
                p, g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps
            )
            p[...] = new


@dataclass
class TrainState:
    network: Network
    opt_max: Adam
    opt_min: Adam
    rng: np.random.Generator
    step: int = 0

    @classmethod
    def create(cls, cfg: TrainConfig, in_shape=None, network: Network | None = None) -> "TrainState":
        rng = np.random.default_rng(cfg.seed)
        if network is None:
            network = Network(get_architecture(cfg.arch), cfg.fista, rng)
        return cls(
            network,
            Adam(cfg.lr_max, cfg.beta1, cfg.beta2, cfg.adam_eps, sign=-1.0),
            Adam(cfg.lr_min, cfg.beta1, cfg.beta2, cfg.adam_eps),
            rng,
        )


@dataclass
class StepResult:
    delta_r: float
    recon_mse: float
    sparsity: float
    layer_sparsity: list[float]


def _layer_norms(net: Network) -> str:
    return ", ".join(f"{d.name}={np.linalg.norm(d.kernel):.4g}" for d in net.dictionaries)


def _forward(state: TrainState, cfg: TrainConfig, batch, role: str, strategy: int = 2):
    """Build the closed loop with the kernel views that ``role`` is allowed to differentiate."""
    net = state.network
    g = ad.Graph()
    live = {d.name: g.param(d.name, d.kernel) for d in net.dictionaries}
    dead = {name: g.stop_gradient(node) for name, node in live.items()}
    if role == "max":
        enc1, dec = live, dead
        enc2 = dead if cfg.ascent_first_pass_only else live
        out = net.loop_graph(g.constant(batch), enc1, dec, enc2, "train", enc_bn_live=True, dec_bn_live=False)
    else:
        enc = live if strategy == 2 else dead
        out = net.loop_graph(g.constant(batch), enc, live, enc, "train", enc_bn_live=False, dec_bn_live=True)
    loss = rate_reduction(out.Z.T, out.Zh.T, cfg.rate)
    return g, loss, out


def _checked(state, cfg, batch, role, strategy=2):
    try:
        g, loss, out = _forward(state, cfg, batch, role, strategy)
        grads = g.backward(loss)
    except NumericError as exc:
        raise TrainingError(f"{role} step {state.step}: {exc}; dictionary norms: {_layer_norms(state.network)}") from exc
    if not np.isfinite(loss.value):
        raise TrainingError(f"{role} step {state.step}: non-finite delta_r; dictionary norms: {_layer_norms(state.network)}")
    return loss, out, grads


def max_step(state: TrainState, cfg: TrainConfig, batch) -> float:
    """Ascent on dictionaries and encoder BN through encoder applications; returns pre-update dR."""
    loss, _, grads = _checked(state, cfg, batch, "max")
    net = state.network
    state.opt_max.step({**net.dictionary_params(), **net.encoder_bn_params()}, grads)
    return float(loss.value)


def min_step(state: TrainState, cfg: TrainConfig, batch, strategy: int | None = None) -> StepResult:
    """Descent on dictionaries (total or decoder-path gradient) and decoder BN."""
    strategy = cfg.strategy if strategy is None else strategy
    loss, out, grads = _checked(state, cfg, batch, "min", strategy)
    net = state.network
    state.opt_min.step({**net.dictionary_params(), **net.decoder_bn_params()}, grads)
    layer_sparsity = [float(np.count_nonzero(c)) / c.size for c in out.codes]
    diff = out.Xh.value - batch
    return StepResult(float(loss.value), float(np.mean(diff * diff)), float(np.mean(layer_sparsity)), layer_sparsity)


def path_gradients(state: TrainState, cfg: TrainConfig, batch, role: str, strategy: int = 2):
    """Dictionary gradients the given step would use, without updating anything.

    Batch-norm running statistics are not touched.
    """
    net = state.network
    saved = {k: (s.running_mean.copy(), s.running_var.copy()) for k, s in {**{("e", i): s for i, s in net.enc_bn.items()}, **{("d", j): s for j, s in net.dec_bn.items()}}.items()}
    try:
        g, loss, _ = _forward(state, cfg, batch, role, strategy)
        grads = g.backward(loss)
    finally:
        for (side, i), (m, v) in saved.items():
            st = net.enc_bn[i] if side == "e" else net.dec_bn[i]
            st.running_mean, st.running_var = m, v
    return float(loss.value), {d.name: grads[d.name] for d in net.dictionaries}


def train_step(state: TrainState, cfg: TrainConfig, batch) -> dict:
    if state.step % cfg.refresh_every == 0:
        state.network.refresh_step_sizes()
    t0 = time.perf_counter()
    dr = max_step(state, cfg, batch)
    res = min_step(state, cfg, batch)
    state.step += 1
    wall = (time.perf_counter() - t0) * 1e3 if cfg.record_time else 0.0
    return {"step": state.step, "delta_r": dr, "recon_mse": res.recon_mse, "sparsity": res.sparsity,
            "wall_ms": wall, "layer_sparsity": res.layer_sparsity}


def sample_batch(state: TrainState, images: np.ndarray, batch_size: int) -> np.ndarray:
    n = images.shape[0]
    idx = state.rng.choice(n, size=min(batch_size, n), replace=False)
    return images[np.sort(idx)]


def train(images, cfg: TrainConfig, state: TrainState | None = None, out_dir=None, steps: int | None = None):
    """Alternate ascent/descent for ``cfg.steps`` batches (or ``steps`` more, when resuming).

    Returns the final state and the list of per-step metric rows. With ``out_dir``
    the rows are appended to ``metrics.csv`` and a checkpoint is written every
    ``cfg.checkpoint_every`` steps and at the end.
    """
    images = np.asarray(images)
    if images.shape[0] < 1:
        raise ValueError("dataset is empty")
    if images.shape[0] < 2:
        raise ValueError("need at least 2 images to form a batch")
    state = state or TrainState.create(cfg)
    target = state.step + (cfg.steps if steps is None else steps)
    rows = []
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "metrics.csv"
        fresh = state.step == 0 or not path.exists()
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_HEADER)
    try:
        while state.step < target:
            batch = sample_batch(state, images, cfg.batch_size)
            row = train_step(state, cfg, batch)
            rows.append(row)
            if writer is not None:
                writer.writerow([row["step"]] + [repr(float(row[k])) for k in METRICS_HEADER[1:]])
                if state.step % cfg.checkpoint_every == 0 or state.step == target:
                    fh.flush()
                    save_checkpoint(state, out_dir / "checkpoint.bin")
            if state.step % 50 == 0:
                log.info("step %d  dR=%.4f  mse=%.5f  sparsity=%.3f", row["step"], row["delta_r"],
                         row["recon_mse"], row["sparsity"])
    finally:
        if writer is not None:
            fh.close()
    return state, rows


# -- checkpoints ---------------------------------------------------------------


def _state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    net = state.network
    arrays = dict(net.parameters())
    for i, st in net.enc_bn.items():
        arrays[f"enc_bn{i}.running_mean"] = st.running_mean
        arrays[f"enc_bn{i}.running_var"] = st.running_var
    for j, st in net.dec_bn.items():
        arrays[f"dec_bn{j}.running_mean"] = st.running_mean
        arrays[f"dec_bn{j}.running_var"] = st.running_var
    for tag, opt in (("max", state.opt_max), ("min", state.opt_min)):
        for name in opt.m:
            arrays[f"adam_{tag}.m.{name}"] = opt.m[name]
            arrays[f"adam_{tag}.v.{name}"] = opt.v[name]
    return arrays


def save_checkpoint(state: TrainState, path) -> None:
    """Text manifest followed by the raw little-endian payload of every array."""
    net = state.network
    meta = {
        "step": state.step,
        "arch": net.spec.name,
        "fista": {"lam": net.fista.lam, "iterations": net.fista.iterations, "step_size": net.fista.step_size},
        "adam_t": {"max": state.opt_max.t, "min": state.opt_min.t},
        "rng": state.rng.bit_generator.state,
        "lipschitz": {d.name: [[list(k), v] for k, v in d._lipschitz.items()] for d in net.dictionaries},
    }
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", "meta " + json.dumps(meta, sort_keys=True)]
    payload, offset = [], 0
    for name, arr in _state_arrays(state).items():
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"tensor {name} {arr.dtype.str.lstrip('<>=|')} {shape} {offset} {len(data)}")
        payload.append(data)
        offset += len(data)
    lines.append("end")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for chunk in payload:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path, cfg: TrainConfig) -> TrainState:
    """Rebuild a TrainState; optimizer hyperparameters come from ``cfg``."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\nend\n")
    if end < 0 or not raw.startswith(CHECKPOINT_MAGIC.encode()):
        raise ValueError(f"{path}: not a checkpoint")
    header = raw[: end].decode().split("\n")
    body = raw[end + len(b"\nend\n"):]
    magic, version = header[0].split()
    if int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(header[1][len("meta "):])
    arrays = {}
    for line in header[2:]:
        _, name, dtype, shape, offset, nbytes = line.split()
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        offset, nbytes = int(offset), int(nbytes)
        if offset + nbytes > len(body):
            raise ValueError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(body[offset: offset + nbytes], dtype=np.dtype(dtype).newbyteorder("<"))
        arrays[name] = arr.astype(np.dtype(dtype), copy=True).reshape(dims)

    f = meta["fista"]
    fista = FistaConfig(f["lam"], f["iterations"], f["step_size"])
    net = Network(get_architecture(meta["arch"]), fista, rng=0)
    for d in net.dictionaries:
        d.kernel[...] = arrays[d.name]
        d._lipschitz = {tuple(k): v for k, v in meta["lipschitz"][d.name]}
    for side, bns in (("enc_bn", net.enc_bn), ("dec_bn", net.dec_bn)):
        for i, st in bns.items():
            for attr in ("weight", "bias", "running_mean", "running_var"):
                setattr(st, attr, arrays[f"{side}{i}.{attr}"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    state = TrainState(
        net,
        Adam(cfg.lr_max, cfg.beta1, cfg.beta2, cfg.adam_eps, sign=-1.0),
        Adam(cfg.lr_min, cfg.beta1, cfg.beta2, cfg.adam_eps),
        rng,
        meta["step"],
    )
    for tag, opt in (("max", state.opt_max), ("min", state.opt_min)):
        opt.t = meta["adam_t"][tag]
        prefix = f"adam_{tag}.m."
        for key in arrays:
            if key.startswith(prefix):
                name = key[len(prefix):]
                opt.m[name] = arrays[key]
                opt.v[name] = arrays[f"adam_{tag}.v.{name}"]
    return state
