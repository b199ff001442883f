"""Encoder/decoder stacks built from CSC layers that share their dictionaries.

An :class:`ArchitectureSpec` lists the encoder layers; the decoder is derived as the
exact mirror (reverse order, transposed convolution, same dictionary objects).
Batch-norm parameters are kept per network side and are never shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .csc import ConvDictionary, FistaConfig, fista
from .tensor import BatchNormState, ShapeError

NORMS = ("bn", "none")
ACTIVATIONS = ("relu", "lrelu", "tanh", "none")


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    k: int = 4
    stride: int = 2
    padding: int = 1
    norm: str = "none"
    activation: str = "none"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Encoder layer list plus the post-processing of each mirrored decoder layer.

    ``decoder_post[i]`` is the (norm, activation) applied after the i-th decoder
    layer, counted from the latent side.
    """

    name: str
    in_channels: int
    input_size: int
    encoder: tuple[LayerSpec, ...]
    decoder_post: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if len(self.decoder_post) != len(self.encoder):
            raise ValueError("decoder_post must have one entry per encoder layer")
        for norm, act in self.decoder_post:
            LayerSpec(1, norm=norm, activation=act)
        self.traces()

    def traces(self) -> list[tuple[int, int]]:
        """(channels, spatial size) after every encoder layer."""
        out, size = [], self.input_size
        for layer in self.encoder:
            geom = T.ConvGeometry(layer.k, layer.stride, layer.padding)
            size = geom.output_size(size)
            out.append((layer.out_channels, size))
        return out

    def decoder_traces(self) -> list[tuple[int, int]]:
        """(channels, spatial size) after every decoder layer, latent side first."""
        enc = [(self.in_channels, self.input_size)] + self.traces()
        return list(reversed(enc[:-1]))

    @property
    def latent_dim(self) -> int:
        c, s = self.traces()[-1]
        return c * s * s


def _decoder_post(n, last="tanh"):
    return tuple([("bn", "relu")] * (n - 1) + [("none", last)])


CIFAR = ArchitectureSpec(
    "cifar", 3, 32,
    (
        LayerSpec(64, 4, 2, 1, "none", "lrelu"),
        LayerSpec(128, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(256, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(512, 4, 1, 0, "none", "none"),
    ),
    _decoder_post(4),
)

# The published table lists pad=0 for the fourth layer, which would map 8 -> 3 and
# leave nothing for the final 4x4 layer; pad=1 gives the stated 8 -> 4 -> 1 trace.
STL = ArchitectureSpec(
    "stl", 3, 64,
    (
        LayerSpec(64, 4, 2, 1, "none", "lrelu"),
        LayerSpec(128, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(256, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(512, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(1024, 4, 1, 0, "none", "none"),
    ),
    _decoder_post(5),
)

# Desk-scale family: half widths, 16x16 inputs.
TOY = ArchitectureSpec(
    "toy", 3, 16,
    (LayerSpec(32, 4, 2, 1, "none", "none"),),
    (("none", "tanh"),),
)

TOY3 = ArchitectureSpec(
    "toy3", 3, 16,
    (
        LayerSpec(32, 4, 2, 1, "none", "lrelu"),
        LayerSpec(64, 4, 2, 1, "bn", "lrelu"),
        LayerSpec(256, 4, 1, 0, "none", "none"),
    ),
    _decoder_post(3),
)

ARCHITECTURES = {a.name: a for a in (CIFAR, STL, TOY, TOY3)}


def get_architecture(name: str) -> ArchitectureSpec:
    try:
        return ARCHITECTURES[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None


@dataclass
class LoopOutput:
    Z: ad.Node
    Xh: ad.Node
    Zh: ad.Node
    codes: list[np.ndarray] = field(default_factory=list)


class Network:
    """Dictionaries plus per-side batch-norm state for one architecture.

    Dictionary ``i`` is read by encoder layer ``i`` and by the decoder layer that
    mirrors it; there is exactly one kernel array per dictionary.
    """

    def __init__(self, spec: ArchitectureSpec, fista_cfg: FistaConfig | None = None, rng=None,
                 dictionaries: list[ConvDictionary] | None = None):
        self.spec = spec
        self.fista = fista_cfg or FistaConfig()
        rng = np.random.default_rng(rng)
        if dictionaries is None:
            dictionaries, cin = [], spec.in_channels
            for i, layer in enumerate(spec.encoder):
                dictionaries.append(
                    ConvDictionary.random(f"dict{i}", layer.out_channels, cin, layer.k, layer.stride, layer.padding, rng)
                )
                cin = layer.out_channels
        self.dictionaries = dictionaries
        self.enc_bn: dict[int, BatchNormState] = {}
        self.dec_bn: dict[int, BatchNormState] = {}
        for i, layer in enumerate(spec.encoder):
            if layer.norm == "bn":
                self.enc_bn[i] = BatchNormState(layer.out_channels)
        for j, ((norm, _), (c, _)) in enumerate(zip(spec.decoder_post, spec.decoder_traces())):
            if norm == "bn":
                self.dec_bn[j] = BatchNormState(c)

    # -- parameter bookkeeping -------------------------------------------------

    def dictionary_params(self) -> dict[str, np.ndarray]:
        return {d.name: d.kernel for d in self.dictionaries}

    def encoder_bn_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, st in self.enc_bn.items():
            out[f"enc_bn{i}.weight"] = st.weight
            out[f"enc_bn{i}.bias"] = st.bias
        return out

    def decoder_bn_params(self) -> dict[str, np.ndarray]:
        out = {}
        for j, st in self.dec_bn.items():
            out[f"dec_bn{j}.weight"] = st.weight
            out[f"dec_bn{j}.bias"] = st.bias
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.dictionary_params(), **self.encoder_bn_params(), **self.decoder_bn_params()}

    def refresh_step_sizes(self) -> None:
        for d in self.dictionaries:
            d.refresh()

    # -- graph construction ----------------------------------------------------

    def _bn_nodes(self, g: ad.Graph, prefix: str, idx: int, live: bool):
        w = g.param(f"{prefix}{idx}.weight", self._bn(prefix, idx).weight)
        b = g.param(f"{prefix}{idx}.bias", self._bn(prefix, idx).bias)
        if not live:
            w, b = g.stop_gradient(w), g.stop_gradient(b)
        return w, b

    def _bn(self, prefix, idx):
        return self.enc_bn[idx] if prefix == "enc_bn" else self.dec_bn[idx]

    def encode_graph(self, x: ad.Node, kernels: dict[str, ad.Node] | None = None, mode: str = "train",
                     lam: float | None = None, bn_live: bool = True, codes: list | None = None) -> ad.Node:
        """Features [N, d] of images ``x`` [N, C, H, W], recorded on ``x.graph``."""
        g = x.graph
        spec = self.spec
        if x.value.ndim != 4 or x.shape[1] != spec.in_channels or x.shape[2:] != (spec.input_size,) * 2:
            raise ShapeError(f"input {x.shape} does not match architecture {spec.name} "
                             f"({spec.in_channels}x{spec.input_size}x{spec.input_size})")
        lam = self.fista.lam if lam is None else lam
        h = x
        for i, (layer, d) in enumerate(zip(spec.encoder, self.dictionaries)):
            k = kernels[d.name] if kernels else g.constant(d.kernel)
            step = d.step_size(self.fista, h.shape[2:])
            h = fista(h, k, d.geometry, lam, step, self.fista.iterations)
            if codes is not None:
                codes.append(h.value)
            if layer.norm == "bn":
                w, b = self._bn_nodes(g, "enc_bn", i, bn_live)
                h = ad.batch_norm(h, w, b, self.enc_bn[i], mode)
            h = ad.activation(h, layer.activation)
        return h.reshape(h.shape[0], -1)

    def decode_graph(self, Z: ad.Node, kernels: dict[str, ad.Node] | None = None, mode: str = "train",
                     bn_live: bool = True) -> ad.Node:
        """Images [N, C, H, W] from features ``Z`` [N, d]."""
        g = Z.graph
        spec = self.spec
        c_last, s_last = spec.traces()[-1]
        if Z.value.ndim != 2 or Z.shape[1] != spec.latent_dim:
            raise ShapeError(f"features {Z.shape} do not match latent dim {spec.latent_dim}")
        h = Z.reshape(Z.shape[0], c_last, s_last, s_last)
        targets = spec.decoder_traces()
        for j, (norm, act) in enumerate(spec.decoder_post):
            d = self.dictionaries[len(self.dictionaries) - 1 - j]
            k = kernels[d.name] if kernels else g.constant(d.kernel)
            size = targets[j][1]
            h = ad.deconv2d(h, k, d.geometry, out_hw=(size, size))
            if norm == "bn":
                w, b = self._bn_nodes(g, "dec_bn", j, bn_live)
                h = ad.batch_norm(h, w, b, self.dec_bn[j], mode)
            h = ad.activation(h, act)
        return h

    def loop_graph(self, x: ad.Node, enc1=None, dec=None, enc2=None, mode="train",
                   enc_bn_live=True, dec_bn_live=True) -> LoopOutput:
        """X -> f -> Z -> g -> Xh -> f -> Zh; each stage may read its own kernel nodes."""
        codes: list[np.ndarray] = []
        Z = self.encode_graph(x, enc1, mode, bn_live=enc_bn_live, codes=codes)
        Xh = self.decode_graph(Z, dec, mode, bn_live=dec_bn_live)
        Zh = self.encode_graph(Xh, enc2, mode, bn_live=enc_bn_live)
        return LoopOutput(Z, Xh, Zh, codes)

    # -- plain-array convenience ----------------------------------------------

    def encode(self, x, mode: str = "eval", lam: float | None = None) -> np.ndarray:
        g = ad.Graph(enable_grad=False)
        return self.encode_graph(g.constant(x), mode=mode, lam=lam).value

    def decode(self, Z, mode: str = "eval") -> np.ndarray:
        g = ad.Graph(enable_grad=False)
        return self.decode_graph(g.constant(Z), mode=mode).value

    def autoencode(self, x, mode: str = "eval", lam: float | None = None) -> np.ndarray:
        return self.decode(self.encode(x, mode, lam), mode)

    def loop(self, x, mode: str = "eval"):
        g = ad.Graph(enable_grad=False)
        out = self.loop_graph(g.constant(x), mode=mode)
        return out.Z.value, out.Xh.value, out.Zh.value

    def codes(self, x, mode: str = "eval", lam: float | None = None) -> list[np.ndarray]:
        """Raw sparse codes of every encoder layer (before norm/activation)."""
        g = ad.Graph(enable_grad=False)
        out: list[np.ndarray] = []
        self.encode_graph(g.constant(x), mode=mode, lam=lam, codes=out)
        return out

    def with_fista(self, **changes) -> "Network":
        """Shallow view sharing dictionaries and BN state, with FISTA settings changed."""
        other = object.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.fista = replace(self.fista, **changes)
        return other
