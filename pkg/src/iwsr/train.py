"""Deterministic training of the encoder/decoder pair.

Every source of randomness in one optimizer step is drawn from a fresh
``np.random.default_rng([seed, epoch, step])``, so a run is a pure function
of (dataset, config) and resuming from a checkpoint is bit-exact: no RNG
state ever needs serializing.

One step draws a batch of high-resolution blocks from the (terrain-filled,
normalized) dataset, produces the low-resolution inputs by block-mean
downsampling, encodes them, and trains the decoder on edge-biased point
samples with the blended data + physics loss.  The edge fraction adapts
between epochs from the running edge/regular loss ratio.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ContractError, Tensor, backward, reduce_mean, zero_grads
from .container import load_tensors, save_tensors
from .decoder import Pcn, PcnConfig, interpolate_latent
from .encoder import Encoder, EncoderConfig
from .fields import (FieldGrid, GridError, VAR_NAMES, denormalize, downsample,
                     extract_patch, random_origins, terrain_fill)
from .physics import (GridScales, PhysParams, StencilConfig,
                      hydrostatic_pressure_scale, pde_loss, pde_residuals,
                      total_loss, truth_equation_scales)
from .sampling import (SamplingConfig, assemble_batch, extract_edges,
                       update_edge_fraction)
from .autodiff import trilinear_sample


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 8e-4
    epochs: int = 100
    blocks_per_epoch: int = 8000
    batch_blocks: int = 6
    sample_points: int = 1024
    pde_points: int = 128
    gamma: float = 0.3
    grad_clip: float = 1.0   # global gradient-norm ceiling; 0 disables
    lr_final: float = 1.0    # cosine-decay floor as a fraction of lr
    require_filled: bool = True   # False = terrain-fill ablation arm
    hr_block: tuple[int, int, int] = (16, 128, 128)
    factors: tuple[int, int, int] = (4, 8, 4)
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: PcnConfig = field(default_factory=PcnConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    physics: PhysParams = field(default_factory=PhysParams)

    def __post_init__(self):
        if self.pde_points > self.sample_points:
            raise ContractError("pde_points cannot exceed sample_points")
        if any(h % f for h, f in zip(self.hr_block, self.factors)):
            raise ContractError(f"hr_block {self.hr_block} not divisible by "
                                f"factors {self.factors}")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """Laptop-sized run: quarter-width ladder, short schedule."""
        kw = dict(epochs=20, blocks_per_epoch=50, hr_block=(16, 64, 128),
                  batch_blocks=1, sample_points=4096, pde_points=512,
                  lr=1e-3, lr_final=0.1, encoder=EncoderConfig().scaled(4),
                  decoder=PcnConfig(width=192))
        kw.update(overrides)
        return cls(**kw)


class Model:
    def __init__(self, encoder: Encoder, pcn: Pcn,
                 encoder_cfg: EncoderConfig, decoder_cfg: PcnConfig):
        self.encoder = encoder
        self.pcn = pcn
        self.encoder_cfg = encoder_cfg
        self.decoder_cfg = decoder_cfg

    @classmethod
    def create(cls, encoder_cfg: EncoderConfig, decoder_cfg: PcnConfig,
               seed: int) -> "Model":
        if decoder_cfg.latent_channels != encoder_cfg.out_channels:
            raise ContractError(
                f"decoder expects {decoder_cfg.latent_channels} latent "
                f"channels but the encoder emits {encoder_cfg.out_channels}")
        enc = Encoder(encoder_cfg, rng=np.random.default_rng([seed, 0]))
        pcn = Pcn(decoder_cfg, rng=np.random.default_rng([seed, 1]))
        return cls(enc, pcn, encoder_cfg, decoder_cfg)

    def parameters(self) -> dict[str, Tensor]:
        params = self.encoder.named_parameters("encoder")
        params.update(self.pcn.named_parameters("decoder"))
        return params


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr * (m / b1t)
                      / (np.sqrt(v / b2t) + self.eps)).astype(p.data.dtype)
            p.data -= update


@dataclass
class TrainState:
    model: Model
    optimizer: Adam
    config: TrainConfig
    epoch: int = 0                  # next epoch to run
    edge_fraction: float | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.edge_fraction is None:
            self.edge_fraction = self.config.sampling.edge_fraction


def init_state(cfg: TrainConfig) -> TrainState:
    model = Model.create(cfg.encoder, cfg.decoder, cfg.seed)
    return TrainState(model, Adam(model.parameters(), cfg.lr), cfg)


def _require_training_grid(grid: FieldGrid, cfg: TrainConfig) -> None:
    if grid.norm is None or (cfg.require_filled and not grid.terrain_filled):
        raise ContractError("training requires a terrain-filled, normalized grid")
    nt, nz, nx = grid.shape
    bt, bz, bx = cfg.hr_block
    if bt > nt or bz > nz or bx > nx:
        raise ContractError(f"hr_block {cfg.hr_block} exceeds dataset {grid.shape}")


def _block_scales(block: FieldGrid,
                  params: PhysParams = PhysParams()) -> GridScales:
    # Align-corners sampling: the unit cube spans first to last grid node.
    nt, nz, nx = block.shape
    # Buoyancy anomalies are taken against the block's own stratification
    # (time/x mean per depth level) so the physics loss penalizes only the
    # wave-induced departure, not the background density field.
    z_nodes = np.arange(nz, dtype=np.float64) * block.dz
    mean, std = block.norm.mean, block.norm.std

    def profile(name):
        bar = block.vars[name].astype(np.float64).mean(axis=(0, 2))
        bar = bar * std[name] + mean[name]
        return lambda z: np.interp(np.asarray(z, dtype=np.float64).ravel(),
                                   z_nodes, bar).reshape(np.shape(z))

    # The pressure channel must be able to balance buoyancy over the block
    # depth, so it gets a hydrostatic-anomaly scale rather than the default
    # dynamic-pressure one.
    return GridScales((nt - 1) * block.dt, (nz - 1) * block.dz,
                      (nx - 1) * block.dx, block.norm,
                      background_T=profile("T"), background_S=profile("S"),
                      p_scale=hydrostatic_pressure_scale(block, params))


def _block_loss(model: Model, hr: FieldGrid, cfg: TrainConfig,
                edge_fraction: float, rng: np.random.Generator):
    """Blended loss of one block plus detached edge/regular MSE stats."""
    lr_block = downsample(hr, cfg.factors)
    latent = model.encoder(Tensor(lr_block.stacked()))
    pts, is_edge = assemble_batch(extract_edges(hr.terrain), hr.terrain,
                                  cfg.sample_points, edge_fraction, rng,
                                  cfg.sampling)
    pts32 = pts.astype(np.float32)
    pred = model.pcn(interpolate_latent(latent, Tensor(pts32)), Tensor(pts32))
    truth = trilinear_sample(Tensor(hr.stacked()), Tensor(pts32)).data
    err = pred[:, 0:len(VAR_NAMES)] - Tensor(truth)
    data = reduce_mean(err * err)

    sq = np.mean(err.data ** 2, axis=1)
    edge_mse = float(sq[is_edge].mean()) if is_edge.any() else 0.0
    reg_mse = float(sq[~is_edge].mean()) if (~is_edge).any() else 0.0

    def model_fn(p):
        return model.pcn(interpolate_latent(latent, p), p)

    stencil = StencilConfig.for_grid(*hr.shape)
    residuals, _ = pde_residuals(model_fn, pts32[:cfg.pde_points],
                                 _block_scales(hr, cfg.physics), cfg.physics,
                                 stencil)
    phys = pde_loss(residuals, scales=truth_equation_scales(hr, cfg.physics))
    return total_loss(data, phys, cfg.gamma), float(data.data), float(phys.data), \
        edge_mse, reg_mse


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Cosine decay from lr to lr * lr_final over the configured epochs.

    A function of the epoch index only, so a resumed run replays the same
    learning-rate sequence bit-exactly.
    """
    if cfg.lr_final >= 1.0 or cfg.epochs <= 1:
        return cfg.lr
    frac = min(epoch / (cfg.epochs - 1), 1.0)
    floor = cfg.lr * cfg.lr_final
    return floor + (cfg.lr - floor) * 0.5 * (1.0 + np.cos(np.pi * frac))


def _clip_gradients(params: dict[str, Tensor], clip: float) -> None:
    """Rescale all gradients so their global L2 norm is at most ``clip``.

    The physics term occasionally produces a step with derivative estimates
    far off scale (stencil noise squared); without a ceiling one such step
    can knock the model out of the basin it was converging in.
    """
    if not clip:
        return
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if norm > clip:
        for p in params.values():
            if p.grad is not None:
                p.grad *= np.asarray(clip / norm, dtype=p.grad.dtype)


def train(grid: FieldGrid, cfg: TrainConfig, state: TrainState | None = None,
          checkpoint_path=None, log=None) -> TrainState:
    _require_training_grid(grid, cfg)
    state = init_state(cfg) if state is None else state
    params = state.model.parameters()
    opt = state.optimizer
    for epoch in range(state.epoch, cfg.epochs):
        t0 = time.monotonic()
        opt.lr = _epoch_lr(cfg, epoch)
        done = 0
        step_idx = 0
        sums = {"loss": 0.0, "data": 0.0, "phys": 0.0}
        # Running losses kept in float32 so a resumed run replays exactly.
        edge_sum = np.float32(0.0)
        reg_sum = np.float32(0.0)
        while done < cfg.blocks_per_epoch:
            n_blocks = min(cfg.batch_blocks, cfg.blocks_per_epoch - done)
            rng = np.random.default_rng([cfg.seed, epoch, step_idx])
            origins = random_origins(grid, cfg.hr_block, n_blocks, rng)
            opt.zero_grad()
            step_loss = None
            for b in range(n_blocks):
                hr = extract_patch(grid, origins[b], cfg.hr_block)
                loss, data_v, phys_v, edge_mse, reg_mse = _block_loss(
                    state.model, hr, cfg, state.edge_fraction, rng)
                step_loss = loss if step_loss is None else step_loss + loss
                sums["data"] += data_v
                sums["phys"] += phys_v
                edge_sum += np.float32(edge_mse)
                reg_sum += np.float32(reg_mse)
            step_loss = step_loss * (1.0 / n_blocks)
            value = float(step_loss.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at seed={cfg.seed} "
                    f"epoch={epoch} step={step_idx}")
            sums["loss"] += value * n_blocks
            backward(step_loss)
            _clip_gradients(params, cfg.grad_clip)
            opt.step()
            done += n_blocks
            step_idx += 1
        # Quantized to float32 so the value survives a checkpoint round trip
        # unchanged and resumed runs stay bit-exact.
        state.edge_fraction = float(np.float32(update_edge_fraction(
            state.edge_fraction, float(edge_sum), float(reg_sum), cfg.sampling)))
        record = {"epoch": epoch,
                  "loss": sums["loss"] / cfg.blocks_per_epoch,
                  "data": sums["data"] / cfg.blocks_per_epoch,
                  "phys": sums["phys"] / cfg.blocks_per_epoch,
                  "edge_fraction": state.edge_fraction,
                  "seconds": time.monotonic() - t0}
        state.history.append(record)
        state.epoch = epoch + 1
        if log is not None:
            log("epoch {epoch}: loss {loss:.6f} (data {data:.6f}, "
                "phys {phys:.6f}) edge_fraction {edge_fraction:.3f} "
                "[{seconds:.1f}s]".format(**record))
        if checkpoint_path is not None:
            save_checkpoint(state, checkpoint_path)
    return state


def fine_tune(state: TrainState, grid: FieldGrid, epochs: int,
              lr_scale: float = 1.0, reset_optimizer: bool = False,
              checkpoint_path=None, log=None) -> TrainState:
    """Continue training on a (possibly new) dataset for ``epochs`` more."""
    cfg = replace(state.config, epochs=state.epoch + epochs,
                  lr=state.config.lr * lr_scale)
    if reset_optimizer:
        state.optimizer = Adam(state.model.parameters(), cfg.lr)
    else:
        state.optimizer.lr = cfg.lr
    state.config = cfg
    return train(grid, cfg, state, checkpoint_path=checkpoint_path, log=log)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: TrainState, path) -> None:
    cfg = state.config
    tensors: dict[str, np.ndarray] = {}
    for name, p in state.model.parameters().items():
        tensors[f"param.{name}"] = p.data
        tensors[f"adam.m.{name}"] = state.optimizer.m[name]
        tensors[f"adam.v.{name}"] = state.optimizer.v[name]
    tensors["state"] = np.array(
        [state.optimizer.t, state.epoch, state.edge_fraction], dtype=np.float32)
    tensors["config.train"] = np.array(
        [cfg.lr, cfg.epochs, cfg.blocks_per_epoch, cfg.batch_blocks,
         cfg.sample_points, cfg.pde_points, cfg.gamma, cfg.seed,
         *cfg.hr_block, *cfg.factors, cfg.grad_clip, cfg.require_filled,
         cfg.lr_final], dtype=np.float32)
    tensors["config.encoder.down"] = np.array(cfg.encoder.down_channels,
                                              dtype=np.float32)
    tensors["config.encoder.up"] = np.array(cfg.encoder.up_channels,
                                            dtype=np.float32)
    tensors["config.encoder.flags"] = np.array(
        [cfg.encoder.in_channels, cfg.encoder.attention, cfg.encoder.fft_path],
        dtype=np.float32)
    tensors["config.decoder"] = np.array(
        [cfg.decoder.latent_channels, cfg.decoder.depth, cfg.decoder.width,
         cfg.decoder.out_channels], dtype=np.float32)
    save_tensors(path, tensors, dtype=np.float32)


def load_checkpoint(path) -> TrainState:
    tensors = load_tensors(path)
    tr = tensors["config.train"]
    enc_flags = tensors["config.encoder.flags"]
    encoder_cfg = EncoderConfig(
        down_channels=tuple(int(c) for c in tensors["config.encoder.down"]),
        up_channels=tuple(int(c) for c in tensors["config.encoder.up"]),
        in_channels=int(enc_flags[0]), attention=bool(enc_flags[1]),
        fft_path=bool(enc_flags[2]))
    dec = tensors["config.decoder"]
    decoder_cfg = PcnConfig(latent_channels=int(dec[0]), depth=int(dec[1]),
                            width=int(dec[2]), out_channels=int(dec[3]))
    cfg = TrainConfig(lr=float(tr[0]), epochs=int(tr[1]),
                      blocks_per_epoch=int(tr[2]), batch_blocks=int(tr[3]),
                      sample_points=int(tr[4]), pde_points=int(tr[5]),
                      gamma=float(tr[6]), seed=int(tr[7]),
                      hr_block=tuple(int(v) for v in tr[8:11]),
                      factors=tuple(int(v) for v in tr[11:14]),
                      grad_clip=float(tr[14]), require_filled=bool(tr[15]),
                      lr_final=float(tr[16]),
                      encoder=encoder_cfg, decoder=decoder_cfg)
    model = Model.create(encoder_cfg, decoder_cfg, cfg.seed)
    opt = Adam(model.parameters(), cfg.lr)
    for name, p in model.parameters().items():
        p.data = tensors[f"param.{name}"].copy()
        opt.m[name] = tensors[f"adam.m.{name}"].copy()
        opt.v[name] = tensors[f"adam.v.{name}"].copy()
    st = tensors["state"]
    opt.t = int(st[0])
    return TrainState(model, opt, cfg, epoch=int(st[1]),
                      edge_fraction=float(st[2]))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def superresolve(model: Model, lr_grid: FieldGrid, factors,
                 hr_block=None, hr_terrain=None,
                 chunk: int = 16384) -> FieldGrid:
    """Reconstruct the high-resolution grid from a normalized LR grid.

    The grid is tiled by the training block geometry (``hr_block`` defaults
    to one tile covering everything), each tile is encoded once and decoded
    at every high-resolution node, and the result is denormalized.  The
    output terrain mask is the nearest-neighbor expansion of the LR mask
    unless ``hr_terrain`` supplies the true one.
    """
    if lr_grid.norm is None:
        raise ContractError("superresolve needs a normalized LR grid")
    ft, fz, fx = (int(f) for f in factors)
    nt, nz, nx = lr_grid.shape
    hr_shape = (nt * ft, nz * fz, nx * fx)
    if hr_block is None:
        hr_block = hr_shape
    tile_lr = tuple(b // f for b, f in zip(hr_block, (ft, fz, fx)))
    if any(b % f for b, f in zip(hr_block, (ft, fz, fx))):
        raise GridError(f"hr_block {hr_block} not divisible by factors {factors}")
    if any(n % t for n, t in zip((nt, nz, nx), tile_lr)):
        raise GridError(f"LR grid {lr_grid.shape} not tileable by {tile_lr}")

    out = {n: np.empty(hr_shape, dtype=np.float32) for n in VAR_NAMES}
    bt, bz, bx = hr_block
    # Align-corners node coordinates of one tile.
    axes = [np.linspace(0.0, 1.0, s, dtype=np.float32) for s in hr_block]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    for ot in range(0, nt, tile_lr[0]):
        for oz in range(0, nz, tile_lr[1]):
            for ox in range(0, nx, tile_lr[2]):
                tile = extract_patch(lr_grid, (ot, oz, ox), tile_lr)
                latent = model.encoder(Tensor(tile.stacked()))
                preds = np.empty((mesh.shape[0], len(VAR_NAMES)),
                                 dtype=np.float32)
                for lo in range(0, mesh.shape[0], chunk):
                    pts = Tensor(mesh[lo:lo + chunk])
                    p = model.pcn(interpolate_latent(latent, pts), pts)
                    preds[lo:lo + chunk] = p.data[:, :len(VAR_NAMES)]
                cube = preds.reshape(bt, bz, bx, len(VAR_NAMES))
                sl = (slice(ot * ft, ot * ft + bt),
                      slice(oz * fz, oz * fz + bz),
                      slice(ox * fx, ox * fx + bx))
                for i, n in enumerate(VAR_NAMES):
                    out[n][sl] = cube[..., i]
    if hr_terrain is None:
        hr_terrain = np.repeat(np.repeat(lr_grid.terrain, fz, axis=0), fx, axis=1)
    hr = FieldGrid(out, np.asarray(hr_terrain, dtype=bool),
                   dt=lr_grid.dt / ft, dz=lr_grid.dz / fz, dx=lr_grid.dx / fx,
                   terrain_filled=False, norm=lr_grid.norm)
    hr = denormalize(hr)
    if hr.terrain.any():
        # The decoder is only ever trained at fluid points; inside terrain
        # it extrapolates freely.  Return the canonical terrain-filled form
        # so those cells hold the fluid mean instead of junk that would,
        # for example, dominate a spectral comparison.
        hr = terrain_fill(hr)
    else:
        hr.terrain_filled = True
    return hr
