"""Two-stage generative model.

Stage 1 is a volumetric VAE: a strided conv encoder compresses a density map
to a latent grid at 1/8 spatial resolution, a decoder expands a sampled
latent into a 64-channel feature grid, and a small MLP turns features sampled
at the reference atom coordinates into per-atom offsets. The deformed
structure is rendered back to a map and supervised against the input.

Stage 2 freezes the VAE and trains a time-conditioned MLP with a flow
matching objective on the flattened mean latent codes; Euler integration of
the learned field turns prior noise into new latents, which decode into new
conformations of a (possibly different) reference structure.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .biomol import AtomicStructure, backbone_windows
from .errors import DimensionError, EmptyRenderError, InputError, TrainingDivergenceError
from .forward_model import RenderSpec, render
from .losses import LossWeights, StereoParams, StereoTopology, vae_total_loss
from .rng import stream
from .volume import Volume

LATENT_STRIDE = 8
FEATURE_CHANNELS = 64
OFFSET_SCALE = 10.0  # angstrom per unit of MLP output; keeps head weights O(0.1)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


class ParamSet:
    """Ordered name -> Tensor mapping with checksum and copy support."""

    def __init__(self, tensors: dict[str, nm.Tensor], arch: dict):
        self.tensors = dict(tensors)
        self.arch = dict(arch)

    def items(self):
        return self.tensors.items()

    def __getitem__(self, name: str) -> nm.Tensor:
        return self.tensors[name]

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad = None

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.tensors):
            digest.update(name.encode())
            digest.update(self.tensors[name].data.tobytes())
        return digest.hexdigest()

    def copy(self) -> "ParamSet":
        return type(self)(
            {k: nm.Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()},
            dict(self.arch),
        )


def _lecun_init(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0
) -> np.ndarray:
    return rng.normal(0.0, gain * math.sqrt(1.0 / fan_in), size=shape)


class VaeParams(ParamSet):
    """Encoder, decoder and offset-MLP weights.

    Encoder: three stride-2 3x3x3 convolutions (1 -> 16 -> 32 -> 2*C_lat)
    interleaved with ConvNeXt-style blocks (depthwise conv, pointwise
    expansion, smooth activation, residual). Decoder mirrors with
    nearest-neighbour x2 upsampling and factorized convolutions up to a
    64-channel feature grid. The offset MLP maps 64 sampled features plus
    the normalized reference coordinate to a 3-vector; its last layer starts
    at zero so training begins from the undeformed reference.
    """

    @classmethod
    def init(cls, latent_channels: int = 4, seed: int = 0) -> "VaeParams":
        rng = stream(seed, "vae.init")
        c_lat = int(latent_channels)
        enc1, enc2 = 16, 32
        dec0, dec1, dec2 = 32, 32, 16
        t: dict[str, nm.Tensor] = {}

        def par(name, arr):
            t[name] = nm.Tensor(arr, requires_grad=True)

        def conv_par(name, c_out, c_in, gain=1.0):
            par(f"{name}.w", _lecun_init(rng, (c_out, c_in, 3, 3, 3), c_in * 27, gain))
            par(f"{name}.b", np.zeros(c_out))

        def dw_par(name, c):
            par(f"{name}.w", _lecun_init(rng, (c, 1, 3, 3, 3), 27))
            par(f"{name}.b", np.zeros(c))

        def dense_par(name, c_out, c_in, zero=False, gain=1.0):
            w = np.zeros((c_out, c_in)) if zero else _lecun_init(rng, (c_out, c_in), c_in, gain)
            par(f"{name}.w", w)
            par(f"{name}.b", np.zeros(c_out))

        def block_par(name, c):
            dw_par(f"{name}.dw", c)
            dense_par(f"{name}.pw1", 2 * c, c)
            dense_par(f"{name}.pw2", c, 2 * c)

        conv_par("enc.down1", enc1, 1)
        block_par("enc.block1", enc1)
        conv_par("enc.down2", enc2, enc1)
        block_par("enc.block2", enc2)
        # small-gain latent head so mu starts near 0 and the KL term is tame
        conv_par("enc.down3", 2 * c_lat, enc2, gain=0.1)
        head_bias = np.zeros(2 * c_lat)
        head_bias[c_lat:] = -2.0  # logvar channels start at sigma ~ 0.37
        t["enc.down3.b"] = nm.Tensor(head_bias, requires_grad=True)

        dense_par("dec.pw_in", dec0, c_lat)
        block_par("dec.block0", dec0)
        dw_par("dec.up1.dw", dec0)
        dense_par("dec.up1.pw", dec1, dec0)
        dw_par("dec.up2.dw", dec1)
        dense_par("dec.up2.pw", dec2, dec1)
        # final stage upsamples then projects pointwise; spatial mixing at full
        # resolution is too costly for what it adds at desk scale
        dense_par("dec.up3.pw", FEATURE_CHANNELS, dec2)

        dense_par("mlp.l1", 64, FEATURE_CHANNELS + 3)
        dense_par("mlp.l2", 64, 64)
        dense_par("mlp.l3", 3, 64, zero=True)

        return cls(t, {"kind": "vae", "latent_channels": c_lat})

    @property
    def latent_channels(self) -> int:
        return int(self.arch["latent_channels"])


class FlowParams(ParamSet):
    """Four SiLU dense layers of a fixed width plus a linear readout."""

    @classmethod
    def init(
        cls,
        latent_shape: tuple[int, ...],
        width: int = 256,
        time_embed_dim: int = 32,
        seed: int = 0,
    ) -> "FlowParams":
        rng = stream(seed, "flow.init")
        latent_shape = tuple(int(n) for n in latent_shape)
        latent_dim = int(np.prod(latent_shape))
        in_dim = latent_dim + int(time_embed_dim)
        t: dict[str, nm.Tensor] = {}
        dims = [in_dim, width, width, width, width]
        for k in range(4):
            t[f"flow.l{k + 1}.w"] = nm.Tensor(
                _lecun_init(rng, (dims[k + 1], dims[k]), dims[k], gain=1.4),
                requires_grad=True,
            )
            t[f"flow.l{k + 1}.b"] = nm.Tensor(np.zeros(dims[k + 1]), requires_grad=True)
        t["flow.out.w"] = nm.Tensor(
            _lecun_init(rng, (latent_dim, width), width), requires_grad=True
        )
        t["flow.out.b"] = nm.Tensor(np.zeros(latent_dim), requires_grad=True)
        return cls(
            t,
            {
                "kind": "flow",
                "latent_shape": list(latent_shape),
                "width": int(width),
                "time_embed_dim": int(time_embed_dim),
            },
        )

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return tuple(self.arch["latent_shape"])

    @property
    def latent_dim(self) -> int:
        return int(np.prod(self.latent_shape))

    @property
    def time_embed_dim(self) -> int:
        return int(self.arch["time_embed_dim"])


# ---------------------------------------------------------------------------
# VAE forward pieces
# ---------------------------------------------------------------------------


@dataclass
class LatentCode:
    """Mean and log-variance grids at 1/8 the map's spatial resolution."""

    mu: nm.Tensor
    logvar: nm.Tensor

    def __post_init__(self):
        if self.mu.data.shape != self.logvar.data.shape:
            raise DimensionError(
                f"mu/logvar shapes differ: {self.mu.data.shape} vs {self.logvar.data.shape}"
            )
        if not (np.isfinite(self.mu.data).all() and np.isfinite(self.logvar.data).all()):
            raise InputError("latent code contains non-finite entries")


@dataclass
class FeatureGrid:
    """64-channel feature grid congruent with the input map."""

    grid: nm.Tensor

    def __post_init__(self):
        if self.grid.data.ndim != 4 or self.grid.data.shape[0] != FEATURE_CHANNELS:
            raise DimensionError(
                f"feature grid must be ({FEATURE_CHANNELS}, D, H, W), got {self.grid.data.shape}"
            )


def _bias4(x: nm.Tensor, b: nm.Tensor) -> nm.Tensor:
    return nm.add(x, nm.reshape(b, (-1, 1, 1, 1)))


def _pointwise(x: nm.Tensor, w: nm.Tensor, b: nm.Tensor) -> nm.Tensor:
    # 1x1x1 convolution as a single contiguous GEMM over (C, voxels)
    c, d, h, ww = x.data.shape
    flat = nm.reshape(x, (c, d * h * ww))
    y = nm.add(nm.matmul(w, flat), nm.reshape(b, (-1, 1)))
    return nm.reshape(y, (w.data.shape[0], d, h, ww))


def _block(x: nm.Tensor, p: VaeParams, name: str) -> nm.Tensor:
    h = nm.conv3d(x, p[f"{name}.dw.w"], stride=1, padding=1, groups=x.data.shape[0])
    h = _bias4(h, p[f"{name}.dw.b"])
    h = _pointwise(h, p[f"{name}.pw1.w"], p[f"{name}.pw1.b"])
    h = nm.silu(h)
    h = _pointwise(h, p[f"{name}.pw2.w"], p[f"{name}.pw2.b"])
    return nm.add(x, h)


def encode(v: Volume, p: VaeParams) -> LatentCode:
    """Compress a map into a latent grid distribution (deterministic)."""
    d, h, w = v.shape
    if any(n % LATENT_STRIDE for n in (d, h, w)):
        raise DimensionError(
            f"map dims {(d, h, w)} must be divisible by {LATENT_STRIDE}; pad the volume first"
        )
    # standardize per map: keeps activations O(1) whatever the density scale
    g = v.grid
    centered = nm.sub(g, nm.tmean(g))
    std = nm.sqrt(nm.add(nm.tmean(nm.mul(centered, centered)), 1e-12))
    x = nm.reshape(nm.div(centered, std), (1, d, h, w))
    x = nm.silu(_bias4(nm.conv3d(x, p["enc.down1.w"], stride=2), p["enc.down1.b"]))
    x = _block(x, p, "enc.block1")
    x = nm.silu(_bias4(nm.conv3d(x, p["enc.down2.w"], stride=2), p["enc.down2.b"]))
    x = _block(x, p, "enc.block2")
    x = _bias4(nm.conv3d(x, p["enc.down3.w"], stride=2), p["enc.down3.b"])
    c_lat = p.latent_channels
    return LatentCode(
        nm.slice_axis(x, 0, 0, c_lat), nm.slice_axis(x, 0, c_lat, 2 * c_lat)
    )


def reparameterize(code: LatentCode, noise) -> nm.Tensor:
    """z = mu + exp(0.5 * logvar) * noise."""
    eps = nm.as_tensor(noise)
    if eps.data.shape != code.mu.data.shape:
        raise DimensionError(
            f"noise shape {eps.data.shape} does not match latent {code.mu.data.shape}"
        )
    return nm.add(code.mu, nm.mul(nm.exp(nm.mul(code.logvar, 0.5)), eps))


def decode_feature_grid(z, p: VaeParams) -> FeatureGrid:
    """Expand a latent grid into the 64-channel feature grid at map resolution."""
    z = nm.as_tensor(z)
    if z.data.ndim != 4 or z.data.shape[0] != p.latent_channels:
        raise DimensionError(
            f"latent must be ({p.latent_channels}, d, h, w), got {z.data.shape}"
        )
    x = nm.silu(_pointwise(z, p["dec.pw_in.w"], p["dec.pw_in.b"]))
    x = _block(x, p, "dec.block0")
    for name in ("dec.up1", "dec.up2"):
        x = nm.upsample2(x)
        x = nm.conv3d(x, p[f"{name}.dw.w"], stride=1, padding=1, groups=x.data.shape[0])
        x = _bias4(x, p[f"{name}.dw.b"])
        x = nm.silu(_pointwise(x, p[f"{name}.pw.w"], p[f"{name}.pw.b"]))
    x = nm.upsample2(x)
    x = _pointwise(x, p["dec.up3.pw.w"], p["dec.up3.pw.b"])
    return FeatureGrid(x)


def predict_offsets(
    y: FeatureGrid, x_ref: AtomicStructure, p: VaeParams, spec: RenderSpec
) -> nm.Tensor:
    """Per-atom offsets (angstrom) from features sampled at reference coordinates."""
    idx = spec.index_coords(x_ref.coords)  # (N, 3) in (d, h, w) order
    feats = nm.trilinear_sample(y.grid, nm.Tensor(idx))
    dims = np.array(y.grid.data.shape[1:], dtype=np.float64)
    norm_coords = 2.0 * idx / np.maximum(dims - 1.0, 1.0) - 1.0
    inp = nm.concat([feats, nm.Tensor(norm_coords)], axis=1)
    h = nm.silu(nm.dense(inp, p["mlp.l1.w"], p["mlp.l1.b"]))
    h = nm.silu(nm.dense(h, p["mlp.l2.w"], p["mlp.l2.b"]))
    return nm.mul(nm.dense(h, p["mlp.l3.w"], p["mlp.l3.b"]), OFFSET_SCALE)


def vae_forward(
    v: Volume, x_ref: AtomicStructure, p: VaeParams, spec: RenderSpec, noise
) -> tuple[AtomicStructure, Volume, LatentCode]:
    """Full encode -> sample -> decode -> deform -> render chain for one map."""
    code = encode(v, p)
    z = reparameterize(code, noise)
    y = decode_feature_grid(z, p)
    offsets = predict_offsets(y, x_ref, p, spec)
    x_hat = x_ref.with_positions(nm.add(x_ref.positions, offsets))
    v_hat = render(x_hat, spec)
    return x_hat, v_hat, code


def extract_mean_latents(maps: Sequence[Volume], p: VaeParams) -> list[nm.Tensor]:
    """Mean latent grids, in input order, without sampling."""
    return [encode(v, p).mu for v in maps]


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment gradient descent over a ParamSet."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, params: ParamSet):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, tensor in params.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            tensor.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            tensor.grad = None


@dataclass
class TrainState:
    """Everything needed to continue or reproduce a training run exactly."""

    params: ParamSet
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    step: int
    seed: int
    loss_history: list
    hyper: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return str(self.params.arch["kind"])


@dataclass
class VaeHyper:
    steps: int = 600
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    latent_channels: int = 4

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "lr": self.lr,
            "betas": list(self.betas),
            "latent_channels": self.latent_channels,
        }


@dataclass
class FlowHyper:
    steps: int = 2000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 64
    width: int = 256
    time_embed_dim: int = 32

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "lr": self.lr,
            "betas": list(self.betas),
            "batch_size": self.batch_size,
            "width": self.width,
            "time_embed_dim": self.time_embed_dim,
        }


def train_vae(
    maps: Sequence[Volume],
    x_ref: AtomicStructure,
    weights: LossWeights,
    stereo: StereoParams,
    hyper: VaeHyper,
    spec: RenderSpec,
    seed: int = 0,
    params: VaeParams | None = None,
    progress: Callable[[int, dict], None] | None = None,
) -> TrainState:
    """Jointly fit the whole map ensemble; per-step noise derives from the seed."""
    maps = list(maps)
    if not maps:
        raise InputError("need at least one map")
    for k, v in enumerate(maps[1:], start=1):
        if not v.congruent_with(maps[0]):
            raise InputError(f"map {k} is not congruent with map 0")
    if tuple(maps[0].shape) != tuple(spec.grid_shape):
        raise DimensionError(
            f"render spec grid {spec.grid_shape} does not match maps {maps[0].shape}"
        )

    p = params if params is not None else VaeParams.init(hyper.latent_channels, seed=seed)
    windows = backbone_windows(x_ref)
    topo = StereoTopology.build(x_ref, stereo)
    opt = Adam(p, lr=hyper.lr, betas=hyper.betas)
    history: list[dict] = []
    d, h, w = maps[0].shape
    lat_shape = (p.latent_channels, d // LATENT_STRIDE, h // LATENT_STRIDE, w // LATENT_STRIDE)

    for step_idx in range(hyper.steps):
        noise = stream(seed, "vae.noise", step_idx).normal(size=(len(maps),) + lat_shape)
        with nm.Tape() as tape:
            mus, logvars, x_hats, v_hats = [], [], [], []
            try:
                for mi, v in enumerate(maps):
                    x_hat, v_hat, code = vae_forward(v, x_ref, p, spec, noise[mi])
                    mus.append(code.mu)
                    logvars.append(code.logvar)
                    x_hats.append(x_hat)
                    v_hats.append(v_hat)
            except EmptyRenderError:
                raise TrainingDivergenceError(
                    step_idx, f"atoms left the render grid at step {step_idx}"
                ) from None
            total, breakdown = vae_total_loss(
                v_hats, maps, mus, logvars, x_hats, x_ref, windows, stereo, weights, topo
            )
        if not np.isfinite(breakdown["total"]):
            raise TrainingDivergenceError(step_idx)
        nm.backward(tape, total)
        opt.step(p)
        history.append(breakdown)
        if progress is not None:
            progress(step_idx, breakdown)

    return TrainState(p, opt.m, opt.v, hyper.steps, seed, history, hyper.as_dict())


# ---------------------------------------------------------------------------
# flow matching
# ---------------------------------------------------------------------------


def fm_pair(z0, z1, t: float) -> tuple[nm.Tensor, nm.Tensor]:
    """Linear interpolant z_t = t*z1 + (1-t)*z0 and its constant velocity z1 - z0."""
    a, b = nm.as_tensor(z0), nm.as_tensor(z1)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"fm_pair shapes differ: {a.data.shape} vs {b.data.shape}")
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t must be in [0, 1], got {t}")
    z_t = nm.add(nm.mul(b, float(t)), nm.mul(a, 1.0 - float(t)))
    u_t = nm.sub(b, a)
    return z_t, u_t


def flow_field_batch(fp: FlowParams, z_flat: np.ndarray, ts: np.ndarray) -> nm.Tensor:
    """Network velocity for a (B, latent_dim) batch at times ts (B,)."""
    emb = nm.sinusoidal_embed_batch(ts, fp.time_embed_dim)
    inp = nm.Tensor(np.concatenate([z_flat, emb], axis=1))
    h = inp
    for k in range(4):
        h = nm.silu(nm.dense(h, fp[f"flow.l{k + 1}.w"], fp[f"flow.l{k + 1}.b"]))
    return nm.dense(h, fp["flow.out.w"], fp["flow.out.b"])


def _flatten_latents(latents: Sequence) -> np.ndarray:
    rows = []
    for z in latents:
        arr = z.data if isinstance(z, nm.Tensor) else np.asarray(z, dtype=np.float64)
        rows.append(arr.reshape(-1))
    return np.stack(rows)


def train_flow(
    latents: Sequence,
    fp: FlowParams,
    hyper: FlowHyper,
    seed: int = 0,
    progress: Callable[[int, float], None] | None = None,
) -> TrainState:
    """Regress the straight-line velocity field over (noise, latent, t) triples."""
    lat = _flatten_latents(latents)
    if lat.shape[0] < 1:
        raise InputError("need at least one latent code")
    if lat.shape[1] != fp.latent_dim:
        raise DimensionError(
            f"latent dim {lat.shape[1]} does not match flow params {fp.latent_dim}"
        )
    opt = Adam(fp, lr=hyper.lr, betas=hyper.betas)
    history: list[float] = []
    b = hyper.batch_size
    for step_idx in range(hyper.steps):
        idx = stream(seed, "flow.pick", step_idx).integers(0, lat.shape[0], size=b)
        z0 = stream(seed, "flow.noise", step_idx).normal(size=(b, fp.latent_dim))
        ts = stream(seed, "flow.time", step_idx).uniform(0.0, 1.0, size=b)
        z1 = lat[idx]
        z_t = ts[:, None] * z1 + (1.0 - ts[:, None]) * z0
        u_t = z1 - z0
        with nm.Tape() as tape:
            pred = flow_field_batch(fp, z_t, ts)
            err = nm.sub(pred, nm.Tensor(u_t))
            loss = nm.tmean(nm.mul(err, err))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergenceError(step_idx)
        nm.backward(tape, loss)
        opt.step(fp)
        history.append(value)
        if progress is not None:
            progress(step_idx, value)
    return TrainState(fp, opt.m, opt.v, hyper.steps, seed, history, hyper.as_dict())


def euler_sample(
    fp,
    n_steps: int = 50,
    rng: np.random.Generator | int | None = None,
    latent_dim: int | None = None,
) -> nm.Tensor:
    """Integrate the velocity field from prior noise over n_steps Euler steps.

    ``fp`` is either trained FlowParams or a callable field(z, t) -> velocity
    (used by analytic-field tests). Timesteps are t_k = k / n_steps.
    """
    if n_steps < 1:
        raise InputError(f"n_steps must be >= 1, got {n_steps}")
    if isinstance(fp, FlowParams):
        dim = fp.latent_dim

        def field(z, t):
            return flow_field_batch(fp, z[None, :], np.array([t])).data[0]

    else:
        if latent_dim is None:
            raise InputError("latent_dim is required when sampling a callable field")
        dim = int(latent_dim)
        field = fp
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = stream(0 if rng is None else int(rng), "euler.z0")
    z = rng.normal(size=dim)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        z = z + dt * np.asarray(field(z, k / n_steps), dtype=np.float64)
    return nm.Tensor(z)


def interpolate_latents(z_a, z_b, n: int, inclusive: bool = True) -> list[nm.Tensor]:
    """Evenly spaced convex combinations of two latent codes."""
    a, b = nm.as_tensor(z_a), nm.as_tensor(z_b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"latent shapes differ: {a.data.shape} vs {b.data.shape}")
    if inclusive:
        if n < 2:
            raise InputError(f"inclusive interpolation needs n >= 2, got {n}")
        ws = np.linspace(0.0, 1.0, n)
    else:
        if n < 0:
            raise InputError(f"n must be >= 0, got {n}")
        ws = np.linspace(0.0, 1.0, n + 2)[1:-1]
    return [nm.Tensor((1.0 - w) * a.data + w * b.data) for w in ws]


def augment_latents(latents: Sequence, per_gap: int) -> list[nm.Tensor]:
    """Original latents plus per_gap exclusive interpolants per adjacent pair."""
    zs = [nm.as_tensor(z) for z in latents]
    if len(zs) < 2:
        raise InputError(f"need at least 2 latents, got {len(zs)}")
    if per_gap < 0:
        raise InputError(f"per_gap must be >= 0, got {per_gap}")
    out: list[nm.Tensor] = [zs[0]]
    for a, b in zip(zs, zs[1:]):
        out.extend(interpolate_latents(a, b, per_gap, inclusive=False))
        out.append(b)
    return out


def generate_ensemble(
    fp: FlowParams,
    vp: VaeParams,
    x_ref_target: AtomicStructure,
    spec: RenderSpec,
    n_samples: int,
    seed: int = 0,
    n_steps: int = 50,
) -> list[AtomicStructure]:
    """Sample latents, decode feature grids, and deform the target reference."""
    if n_samples < 1:
        raise InputError(f"n_samples must be >= 1, got {n_samples}")
    out = []
    for i in range(n_samples):
        z = euler_sample(fp, n_steps=n_steps, rng=stream(seed, "sample.z0", i))
        z_grid = nm.Tensor(z.data.reshape(fp.latent_shape))
        y = decode_feature_grid(z_grid, vp)
        offsets = predict_offsets(y, x_ref_target, vp, spec)
        out.append(x_ref_target.with_positions(nm.add(x_ref_target.positions, offsets)))
    return out
