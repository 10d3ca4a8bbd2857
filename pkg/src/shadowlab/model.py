"""Latent codec, time-conditioned noise predictor, training and sampling.

Images are compressed 4x per side by a small convolutional autoencoder; the
diffusion runs on its latents. The noise predictor is a stack of residual
blocks whose features are scaled and shifted per channel by an MLP of a
sinusoidal step embedding.

Tensors are float64 throughout so that finite-difference gradient checks are
meaningful. Latents are laid out ``(N, C, h, w)``.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, RegressorMixin

from . import imagecore, loss, metrics, sde, ssgm
from .exceptions import DatasetIOError, InvalidInputError, NumericalDivergenceError
from .validation import check_image

DTYPE = torch.float64
DOWNSAMPLE = 4
CHECKPOINT_MAGIC = "SHADOWLAB-CKPT 1"


def _conv(c_in, c_out, k=3, stride=1):
    return nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2, dtype=DTYPE)


class Codec(nn.Module):
    """Two stride-2 patch convolutions down, two transposed ones up.

    Kernels are 2x2 so every latent cell sees exactly its own 4x4 patch; this
    trains far faster on thin strokes than overlapping 3x3 stages.
    """

    downsample_factor = DOWNSAMPLE

    def __init__(self, in_channels=3, widths=(16, 32)):
        super().__init__()
        w1, w2 = widths
        self.in_channels = in_channels
        self.latent_channels = w2
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, w1, 2, stride=2, dtype=DTYPE), nn.SiLU(),
            nn.Conv2d(w1, w2, 2, stride=2, dtype=DTYPE),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(w2, w1, 2, stride=2, dtype=DTYPE), nn.SiLU(),
            nn.ConvTranspose2d(w1, in_channels, 2, stride=2, dtype=DTYPE),
        )

    @staticmethod
    def pad(x):
        """Replicate-pad ``(N, C, H, W)`` so H and W are multiples of 4."""
        h, w = x.shape[-2:]
        ph, pw = (-h) % DOWNSAMPLE, (-w) % DOWNSAMPLE
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        return x

    def encode(self, x):
        return self.encoder(self.pad(x))

    def decode(self, z, size=None):
        out = self.decoder(z)
        if size is not None:
            out = out[..., : size[0], : size[1]]
        return out

    def forward(self, x):
        return self.decode(self.encode(x), x.shape[-2:])


def sinusoidal_embedding(t, dim):
    """Interleaved ``[sin, cos]`` pairs at geometric frequencies.

    ``t`` is a 1-D tensor of step indices; returns ``(len(t), dim)``.
    """
    half = dim // 2
    freqs = torch.exp(-np.log(10000.0) * torch.arange(half, dtype=DTYPE) / half)
    args = t.to(DTYPE)[:, None] * freqs[None, :]
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).reshape(len(t), 2 * half)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeEmbedding(nn.Module):
    def __init__(self, dim=64, hidden=128):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, hidden, dtype=DTYPE), nn.SiLU(),
                                 nn.Linear(hidden, dim, dtype=DTYPE))

    def forward(self, t):
        return self.mlp(sinusoidal_embedding(t, self.dim))


class ModulatedBlock(nn.Module):
    """``h + conv2(silu(conv1(silu(h)) * (1 + scale) + shift))``.

    ``scale`` and ``shift`` come from the time embedding. ``conv2`` starts at
    zero, so a fresh block is the identity.
    """

    def __init__(self, width, time_dim):
        super().__init__()
        self.conv1 = _conv(width, width)
        self.conv2 = _conv(width, width)
        self.affine = nn.Linear(time_dim, 2 * width, dtype=DTYPE)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, h, temb):
        scale, shift = self.affine(temb)[:, :, None, None].chunk(2, dim=1)
        r = self.conv1(F.silu(h))
        r = r * (1.0 + scale) + shift
        return h + self.conv2(F.silu(r))


class Denoiser(nn.Module):
    """Predicts the standard-normal noise of a latent state.

    Input channels: the state, the encoded shadow image and (optionally) the
    latent soft mask, concatenated.
    """

    def __init__(self, latent_channels=32, width=64, blocks=4, time_dim=64, time_hidden=128,
                 mask_channel=True):
        super().__init__()
        self.latent_channels = latent_channels
        self.mask_channel = mask_channel
        c_in = 2 * latent_channels + (1 if mask_channel else 0)
        self.time = TimeEmbedding(time_dim, time_hidden)
        self.inp = _conv(c_in, width)
        self.blocks = nn.ModuleList([ModulatedBlock(width, time_dim) for _ in range(blocks)])
        self.out = _conv(width, latent_channels)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x_t, cond, mask, t):
        if x_t.shape != cond.shape:
            raise InvalidInputError(f"state {tuple(x_t.shape)} and condition "
                                    f"{tuple(cond.shape)} differ in shape")
        parts = [x_t, cond]
        if self.mask_channel:
            parts.append(mask)
        h = self.inp(torch.cat(parts, dim=1))
        temb = self.time(t)
        for block in self.blocks:
            h = block(h, temb)
        return self.out(F.silu(h))


class LinearNoisePredictor(nn.Module):
    """A single 1x1 convolution over ``[x_t, cond, mask]``; ignores ``t``."""

    def __init__(self, latent_channels=2, mask_channel=True):
        super().__init__()
        self.mask_channel = mask_channel
        self.proj = nn.Conv2d(2 * latent_channels + (1 if mask_channel else 0),
                              latent_channels, 1, dtype=DTYPE)

    def forward(self, x_t, cond, mask, t):
        parts = [x_t, cond] + ([mask] if self.mask_channel else [])
        return self.proj(torch.cat(parts, dim=1))


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


def randomize_parameters(module, seed=0, scale=0.3):
    """Overwrite every parameter with seeded Gaussian values (check mode)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return module


# --- configuration -------------------------------------------------------

@dataclass
class ModelConfig:
    codec_widths: tuple = (16, 32)
    width: int = 64
    blocks: int = 4
    time_dim: int = 64
    time_hidden: int = 128
    mask_channel: bool = True
    steps: int = sde.DEFAULT_STEPS
    noise_level: float = sde.DEFAULT_NOISE_LEVEL
    total_reversion: float = 4.0
    polarity: str = "prose"
    precondition: bool = True
    prior_var: float = None
    ssgm: dict = field(default_factory=dict)

    def schedule(self):
        return sde.SdeSchedule.default(self.steps, self.noise_level, self.total_reversion)

    def ssgm_config(self):
        kw = dict(self.ssgm)
        filters = imagecore.FilterConfig(**kw.pop("filters", {}))
        return ssgm.SsgmConfig(filters=filters, **kw)


@dataclass
class TrainConfig:
    patch_size: int = 128
    batch_size: int = 4
    lr: float = 3e-5
    iterations: int = 1000
    codec_iterations: int = 3000
    codec_lr: float = 1e-2
    seed: int = 0
    lam: float = 0.5
    optimizer: str = "adam"
    fea_extractor_seed: int = 0
    fea_weights: tuple = loss.DEFAULT_WEIGHTS
    mask_source: str = "ssgm"
    diff_weighting: str = "gain"
    lr_schedule: str = "constant"

    def __post_init__(self):
        for name in ("patch_size", "batch_size", "iterations"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.codec_iterations < 0:
            raise InvalidInputError("codec_iterations must be >= 0")
        if not self.lr > 0 or not self.codec_lr > 0:
            raise InvalidInputError("learning rates must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError(f"lam must lie in [0, 1], got {self.lam}")
        if self.optimizer not in ("adam", "sgd", "lion"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if self.mask_source not in ("ssgm", "dataset"):
            raise InvalidInputError(f"unknown mask_source {self.mask_source!r}")
        if self.diff_weighting not in ("gain", "uniform"):
            raise InvalidInputError(f"unknown diff_weighting {self.diff_weighting!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown lr_schedule {self.lr_schedule!r}")


class Lion(torch.optim.Optimizer):
    """Sign-momentum optimizer with decoupled weight decay."""

    def __init__(self, params, lr=3e-5, betas=(0.9, 0.99), weight_decay=0.0):
        super().__init__(params, dict(lr=lr, betas=betas, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self):
        for group in self.param_groups:
            b1, b2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["m"] = torch.zeros_like(p)
                m = state["m"]
                p.mul_(1.0 - group["lr"] * group["weight_decay"])
                p.add_(torch.sign(m * b1 + p.grad * (1.0 - b1)), alpha=-group["lr"])
                m.mul_(b2).add_(p.grad, alpha=1.0 - b2)


def make_optimizer(name, params, lr):
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    return Lion(params, lr=lr)


# --- the bundle ------------------------------------------------------------

class ShadowDiffusion:
    """Codec + denoiser + schedule; the unit that is trained and checkpointed."""

    def __init__(self, config=None, seed=0):
        self.config = config or ModelConfig()
        torch.manual_seed(seed)
        c = self.config
        self.codec = Codec(3, tuple(c.codec_widths))
        self.denoiser = Denoiser(self.codec.latent_channels, c.width, c.blocks, c.time_dim,
                                 c.time_hidden, c.mask_channel)
        self.schedule = c.schedule()
        decay, var = sde.marginal_table(self.schedule)
        self.decay = torch.from_numpy(decay)
        self.std = torch.from_numpy(np.sqrt(var))

    # numpy-facing helpers

    def encode(self, img):
        """Encode an ``(H, W, 3)`` image to a ``(C, H/4, W/4)`` latent array."""
        with torch.no_grad():
            z = self.codec.encode(loss.to_tensor(img))
        return z[0].numpy()

    def decode(self, z, size=None):
        """Decode a ``(C, h, w)`` latent to an image clipped to ``[0, 1]``."""
        with torch.no_grad():
            out = self.codec.decode(torch.from_numpy(np.asarray(z, dtype=np.float64))[None], size)
        return np.clip(out[0].numpy().transpose(1, 2, 0), 0.0, 1.0)

    def latent_mask(self, mask):
        return imagecore.block_mean(mask, DOWNSAMPLE)

    def gain(self, mask_lat):
        """Noise gain of a latent mask tensor, per the configured polarity."""
        return 1.0 - mask_lat if self.config.polarity == "literal" else mask_lat

    def noise(self, x_t, cond, mask_lat, t):
        """Tensor-level noise prediction with optional input preconditioning.

        With preconditioning the state channel carries the linear
        least-squares estimate of the noise, ``g s (x_t - cond) / (g^2 s^2 +
        d^2 v)``, where ``v`` is the prior variance of the latent shadow
        residual. The network output is unchanged, so a zero-init head still
        predicts zero.
        """
        if self.config.precondition:
            g = self.gain(mask_lat)
            d = self.decay[t][:, None, None, None]
            s = self.std[t][:, None, None, None]
            v = self.config.prior_var if self.config.prior_var else 1.0
            x_t = g * s * (x_t - cond) / (g * g * s * s + d * d * v)
        return self.denoiser(x_t, cond, mask_lat, t)

    def predict_noise(self, x_t, cond, mask_lat, t):
        """Noise field for one latent state (numpy in, numpy out)."""
        with torch.no_grad():
            e = self.noise(torch.from_numpy(np.asarray(x_t, dtype=np.float64))[None],
                              torch.from_numpy(np.asarray(cond, dtype=np.float64))[None],
                              torch.from_numpy(np.asarray(mask_lat, dtype=np.float64))[None, None],
                              torch.tensor([t]))
        return e[0].numpy()

    def soft_mask(self, shadow_img):
        return ssgm.generate_soft_mask(shadow_img, self.config.ssgm_config())

    def modulation(self, mask_lat):
        return sde.modulation_field(sde.MaskModulation(mask_lat, self.config.polarity))

    # checkpoints

    def tensors(self):
        out = {}
        for prefix, mod in (("codec", self.codec), ("denoiser", self.denoiser)):
            for k, v in mod.state_dict().items():
                out[f"{prefix}.{k}"] = v.detach().numpy()
        return out

    def save(self, path):
        save_checkpoint(path, self.tensors(), {"model": _config_dict(self.config)})

    @classmethod
    def load(cls, path):
        meta, tensors = load_checkpoint(path)
        cfg = meta["model"]
        cfg["codec_widths"] = tuple(cfg["codec_widths"])
        model = cls(ModelConfig(**cfg))
        for prefix, mod in (("codec", model.codec), ("denoiser", model.denoiser)):
            state = {k[len(prefix) + 1:]: torch.from_numpy(v.copy())
                     for k, v in tensors.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(state)
        return model


def _config_dict(cfg):
    d = asdict(cfg)
    d["codec_widths"] = list(d["codec_widths"])
    return d


# --- training --------------------------------------------------------------

def images_to_tensor(imgs):
    return loss.to_tensor(np.stack([np.asarray(i, dtype=np.float64) for i in imgs]))


def pretrain_codec(model, images, cfg, log=None):
    """Fit the codec as a plain L1 autoencoder; returns the loss history."""
    data = images_to_tensor(images)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = torch.optim.Adam(model.codec.parameters(), lr=cfg.codec_lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(1, cfg.codec_iterations))
    history = []
    bs = min(len(data), max(cfg.batch_size, 16))
    for it in range(cfg.codec_iterations):
        idx = rng.choice(len(data), size=bs, replace=False)
        x = data[torch.from_numpy(idx)]
        rec = model.codec(x)
        l = (rec - x).abs().mean()
        opt.zero_grad()
        l.backward()
        opt.step()
        sched.step()
        history.append(float(l.detach()))
        if log and (it % 200 == 0 or it == cfg.codec_iterations - 1):
            log(f"codec it={it} l1={history[-1]:.5f}")
    model.codec.requires_grad_(False)
    return history


@dataclass
class TrainingData:
    """Precomputed frozen-codec latents of a paired training set."""

    shadow: torch.Tensor
    gt: torch.Tensor
    z_shadow: torch.Tensor
    z_gt: torch.Tensor
    mask_lat: torch.Tensor


def prepare_training_data(model, shadows, gts, masks=None):
    """Encode the training pairs once; masks default to the soft-mask generator.

    If the model has no ``prior_var`` yet it is set to the mean squared latent
    residual ``z_gt - z_shadow`` over modulated elements.
    """
    if masks is None:
        masks = [model.soft_mask(s) for s in shadows]
    s = images_to_tensor(shadows)
    g = images_to_tensor(gts)
    m = torch.from_numpy(np.stack([model.latent_mask(k) for k in masks]))[:, None]
    with torch.no_grad():
        zs = model.codec.encode(s)
        zg = model.codec.encode(g)
    if not model.config.prior_var:
        gain = model.gain(m).expand_as(zg)
        sel = gain > 0
        resid = (zg - zs)[sel]
        model.config.prior_var = float((resid ** 2).mean()) if resid.numel() else 1.0
    return TrainingData(s, g, zs, zg, m)


def noisy_state(model, z_gt, z_shadow, gain, t, eps):
    """Sample ``x_t`` from the closed-form forward marginal."""
    d = model.decay[t][:, None, None, None]
    s = model.std[t][:, None, None, None]
    return z_shadow + (z_gt - z_shadow) * d + gain * s * eps


def train_step(model, data, idx, optimizer, cfg, rng, extractor=None):
    """One optimisation step on the samples ``idx`` of ``data``.

    Returns a dict with ``l_diff``, ``l_fea`` and ``l_total``.
    """
    idx_t = torch.from_numpy(np.asarray(idx))
    zs, zg = data.z_shadow[idx_t], data.z_gt[idx_t]
    mask = data.mask_lat[idx_t]
    gain = model.gain(mask)
    T = model.schedule.steps
    t = torch.from_numpy(rng.integers(1, T + 1, size=len(idx)))
    eps = torch.from_numpy(rng.standard_normal(tuple(zs.shape)))
    x_t = noisy_state(model, zg, zs, gain, t, eps)

    e = model.noise(x_t, zs, mask, t)
    # unmodulated elements carry no trace of eps, so by default they do not count
    l_diff = loss.diff_loss(e, eps, gain if cfg.diff_weighting == "gain" else None)
    if cfg.lam < 1.0:
        d = model.decay[t][:, None, None, None]
        s = model.std[t][:, None, None, None]
        z0_hat = zs + (x_t - zs - gain * s * e) / d
        img_hat = model.codec.decode(z0_hat, data.gt.shape[-2:])
        # errors in e reach z0_hat scaled by g s / d; d^2 keeps late steps from dominating
        l_fea = loss.fea_loss(img_hat, data.gt[idx_t], loss.FeatureWeights(cfg.fea_weights),
                              extractor, sample_weight=d.view(-1) ** 2)
    else:
        l_fea = torch.zeros((), dtype=DTYPE)
    l_total = loss.total_loss(l_diff, l_fea, cfg.lam)
    if not torch.isfinite(l_total):
        raise NumericalDivergenceError(
            f"non-finite loss (l_diff={float(l_diff.detach())}, l_fea={float(l_fea.detach())}) "
            f"for samples {list(map(int, idx))}")
    optimizer.zero_grad()
    l_total.backward()
    optimizer.step()
    return {"l_diff": float(l_diff.detach()), "l_fea": float(l_fea.detach()),
            "l_total": float(l_total.detach())}


def train_denoiser(model, data, cfg, log=None):
    """Run ``cfg.iterations`` training steps; returns the per-step reports."""
    rng = np.random.default_rng([cfg.seed, 2])
    opt = make_optimizer(cfg.optimizer, model.denoiser.parameters(), cfg.lr)
    sched = None
    if cfg.lr_schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.iterations)
    extractor = loss.default_extractor(cfg.fea_extractor_seed)
    n = len(data.z_gt)
    bs = min(cfg.batch_size, n)
    reports = []
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=bs, replace=False)
        reports.append(train_step(model, data, idx, opt, cfg, rng, extractor))
        if sched is not None:
            sched.step()
        if log and (it % 200 == 0 or it == cfg.iterations - 1):
            r = reports[-1]
            log(f"denoiser it={it} l_diff={r['l_diff']:.5f} l_fea={r['l_fea']:.5f}")
    return reports


# --- sampling --------------------------------------------------------------

def score_from_noise(e, gain, std_t):
    """``-e / (gain * std_t)``, defined as 0 where that std vanishes."""
    denom = gain * std_t
    pos = denom > 0
    return np.where(pos, -e / np.where(pos, denom, 1.0), 0.0)


def remove_shadow(model, shadow_img, rng, mask=None, deterministic=False):
    """Restore one ``(H, W, 3)`` shadow image."""
    shadow_img = np.asarray(shadow_img, dtype=np.float64)
    if mask is None:
        mask = model.soft_mask(shadow_img)
    cond = model.encode(shadow_img)
    mask_lat = model.latent_mask(mask)
    gain = model.modulation(mask_lat)
    sched = model.schedule
    x_T = sde.make_start_state(cond, gain, sched, rng)

    def provider(x, t):
        e = model.predict_noise(x, cond, mask_lat, t)
        return score_from_noise(e, gain, float(model.std[t]))

    z0, _ = sde.reverse_sample(x_T, cond, provider, gain, sched, rng,
                               deterministic=deterministic)
    return model.decode(z0, shadow_img.shape[:2])


# --- gradient check --------------------------------------------------------

def gradient_check(net, sample, h=1e-6, floor=1e-6):
    """Largest relative error between autograd and central differences.

    ``sample`` is ``(x_t, cond, mask, t, eps)`` in tensor form; the loss is
    the mean absolute noise error. Relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    x_t, cond, mask, t, eps = sample
    params = [p for p in net.parameters()]

    def objective():
        return loss.diff_loss(net(x_t, cond, mask, t), eps)

    net.zero_grad()
    with torch.enable_grad():
        objective().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(objective())
                flat[i] = orig - h
                down = float(objective())
                flat[i] = orig
                num = (up - down) / (2.0 * h)
                a = float(gflat[i])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst


# --- checkpoint format -----------------------------------------------------

def save_checkpoint(path, tensors, meta):
    """Text header (magic, JSON metadata, one line per tensor) then float64 data."""
    lines = [CHECKPOINT_MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"tensor {name} {shape}")
        blobs.append(arr.tobytes())
    lines.append("end")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(("\n".join(lines) + "\n").encode("utf-8"))
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise DatasetIOError(f"cannot write checkpoint {path}: {exc}", path=str(path)) from exc


def load_checkpoint(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read checkpoint {path}: {exc}", path=str(path)) from exc
    pos = 0
    header = []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise DatasetIOError(f"truncated checkpoint header in {path}", path=str(path))
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        header.append(line)
    if not header or header[0] != CHECKPOINT_MAGIC:
        raise DatasetIOError(f"{path} is not a checkpoint (bad magic)", path=str(path))
    meta = {}
    tensors = {}
    for line in header[1:]:
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            meta = json.loads(rest)
            continue
        name, shape_s = rest.rsplit(" ", 1)
        shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split("x"))
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(raw):
            raise DatasetIOError(f"truncated tensor data for {name} in {path}", path=str(path))
        tensors[name] = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape)
        pos = end
    if pos != len(raw):
        raise DatasetIOError(f"trailing bytes in checkpoint {path}", path=str(path))
    return meta, tensors


# --- estimator ---------------------------------------------------------------

class ShadowRemover(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(shadows, gts)`` trains, ``predict`` restores.

    ``X`` and ``y`` are sequences (or stacked arrays) of ``(H, W, 3)`` images.
    ``score`` is the mean PSNR of the restorations against ``y``. Image
    ``i`` of a ``predict`` call is sampled with the stream
    ``default_rng([sample_seed, i])``.
    """

    def __init__(self, iterations=2000, codec_iterations=3000, lr=3e-3, codec_lr=1e-2,
                 batch_size=16, lam=1.0, lr_schedule="cosine", optimizer="adam",
                 width=64, blocks=4, codec_widths=(16, 32), steps=sde.DEFAULT_STEPS,
                 noise_level=sde.DEFAULT_NOISE_LEVEL, polarity="prose", ssgm_params=None,
                 deterministic=False, seed=0, sample_seed=0):
        self.iterations = iterations
        self.codec_iterations = codec_iterations
        self.lr = lr
        self.codec_lr = codec_lr
        self.batch_size = batch_size
        self.lam = lam
        self.lr_schedule = lr_schedule
        self.optimizer = optimizer
        self.width = width
        self.blocks = blocks
        self.codec_widths = codec_widths
        self.steps = steps
        self.noise_level = noise_level
        self.polarity = polarity
        self.ssgm_params = ssgm_params
        self.deterministic = deterministic
        self.seed = seed
        self.sample_seed = sample_seed

    def _configs(self):
        mc = ModelConfig(codec_widths=tuple(self.codec_widths), width=self.width,
                         blocks=self.blocks, steps=self.steps, noise_level=self.noise_level,
                         polarity=self.polarity, ssgm=dict(self.ssgm_params or {}))
        tc = TrainConfig(batch_size=self.batch_size, lr=self.lr, iterations=self.iterations,
                         codec_iterations=self.codec_iterations, codec_lr=self.codec_lr,
                         seed=self.seed, lam=self.lam, optimizer=self.optimizer,
                         lr_schedule=self.lr_schedule)
        return mc, tc

    def fit(self, X, y, masks=None):
        X, y = _image_batch(X, "X"), _image_batch(y, "y")
        if len(X) != len(y):
            raise InvalidInputError(f"X has {len(X)} images but y has {len(y)}")
        mc, tc = self._configs()
        self.model_ = ShadowDiffusion(mc, seed=self.seed)
        self.codec_history_ = pretrain_codec(self.model_, list(X) + list(y), tc)
        data = prepare_training_data(self.model_, X, y, masks)
        self.history_ = train_denoiser(self.model_, data, tc)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise InvalidInputError("ShadowRemover is not fitted yet; call fit first")

    def predict(self, X):
        self._check_fitted()
        X = _image_batch(X, "X")
        return np.stack([
            remove_shadow(self.model_, img, np.random.default_rng([self.sample_seed, i]),
                          deterministic=self.deterministic)
            for i, img in enumerate(X)])

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        y = _image_batch(y, "y")
        vals = [metrics.psnr(p, g) for p, g in zip(pred, y)]
        return float(np.average(vals, weights=sample_weight))


def _image_batch(X, name):
    imgs = [check_image(img, channels=3, name=f"{name}[{i}]") for i, img in enumerate(X)]
    if not imgs:
        raise InvalidInputError(f"{name} is empty")
    if any(img.shape != imgs[0].shape for img in imgs):
        raise InvalidInputError(f"images in {name} differ in shape")
    return np.stack(imgs)
