"""Per-image fitting of adapter parameters

The unconstrained pre-activations are optimized with Adam through
pre_encode -> differentiable JPEG -> post_decode on a square thumbnail,
starting from the identity transform.
"""
import copy
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from . import log
from .blockdct import BLOCK
from .image import RawImage, resize_tensor
from .jpegsim import JpegSimConfig, Rounding, Subsampling, simulate_jpeg, quantize8, quality_factor, SimConfigError
from .metrics import ssim_tensor, DimensionMismatchError
from .paramcodec import quantize
from .transform import (AdapterParams, ChannelLut, GammaGrid, DctScale, ColorTransform,
                        ParamsValidationError, pre_encode, post_decode,
                        CHANNELS, LUT_SIZE, GAMMA_GRID_SIZE, GAMMA_LOG_BOUND, DCT_LOG_BOUND)
from .utils import is_power_of_two

logger = log.getLogger(__name__)

# keeps consecutive LUT entries apart when softplus increments underflow
LUT_FLOOR_BLEND = 1e-6
LUT_PREACTIVATION_LIMIT = 60.0
SRGB_GAMMA = 2.2

class FitException(Exception):
    pass

class FitConfigError(FitException):
    pass

class FitDivergedError(FitException):
    pass

class PresetError(FitException):
    pass

class Schedule(Enum):
    Constant = "constant"
    Cosine   = "cosine"

class Simulator(Enum):
    Jpeg      = "jpeg"
    Quantize8 = "quantize8"
    Off       = "none"

@dataclass
class LossWeights:
    l1: float = 1.0
    ssim: float = 0.1
    fft: float = 0.1

@dataclass
class FitConfig:
    quality: int = 50
    iterations: int = 200
    step_size: float = 0.05
    moment_decays: Tuple[float, float] = (0.9, 0.999)
    thumbnail: int = 256
    loss_weights: LossWeights = field(default_factory=LossWeights)
    use_dct: bool = True
    seed: int = 0
    weight_decay: float = 0.0
    schedule: Schedule = Schedule.Constant
    min_step_size: float = 1e-5
    simulator: Simulator = Simulator.Jpeg
    learn_gamma: bool = True
    learn_lut: bool = True
    fourier_terms: int = 10
    log_every: int = 20

    def __post_init__(self) -> None:
        try:
            quality_factor(self.quality)
        except SimConfigError as exn:
            raise FitConfigError(str(exn)) from exn
        if self.iterations < 0:
            raise FitConfigError(f"Iteration count must be nonnegative, got {self.iterations}")
        if not self.step_size > 0 or not self.min_step_size >= 0:
            raise FitConfigError(f"Step sizes must be positive, got {self.step_size} and {self.min_step_size}")
        beta1, beta2 = self.moment_decays
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise FitConfigError(f"Moment decays must lie in [0, 1), got {self.moment_decays}")
        if not is_power_of_two(self.thumbnail) or self.thumbnail < 2 * BLOCK:
            raise FitConfigError(f"Thumbnail side must be a power of two of at least {2 * BLOCK}, got {self.thumbnail}")
        weights = self.loss_weights
        if min(weights.l1, weights.ssim, weights.fft) < 0:
            raise FitConfigError(f"Loss weights must be nonnegative, got {weights}")
        if self.weight_decay < 0:
            raise FitConfigError(f"Weight decay must be nonnegative, got {self.weight_decay}")
        if self.fourier_terms < 1:
            raise FitConfigError(f"Fourier term count must be at least 1, got {self.fourier_terms}")
        if self.log_every < 1:
            raise FitConfigError(f"log_every must be at least 1, got {self.log_every}")

@dataclass
class RawParamVector:
    """Unconstrained pre-activations of gamma grid, LUTs and DCT scale"""
    g: torch.Tensor
    h: torch.Tensor
    s: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        for name, tensor in (("g", self.g), ("h", self.h), ("s", self.s)):
            if tensor is not None and not bool(torch.all(torch.isfinite(tensor.detach()))):
                raise FitException(f"Pre-activation {name} contains non-finite values")

    @staticmethod
    def zeros(use_dct: bool) -> "RawParamVector":
        return RawParamVector(g=torch.zeros((GAMMA_GRID_SIZE, GAMMA_GRID_SIZE), dtype=torch.float64),
                              h=torch.zeros((CHANNELS, LUT_SIZE), dtype=torch.float64),
                              s=torch.zeros((BLOCK, BLOCK), dtype=torch.float64) if use_dct else None)

    def tensors(self) -> List[torch.Tensor]:
        return [tensor for tensor in (self.g, self.h, self.s) if tensor is not None]

    def trainable(self, cfg: FitConfig) -> List[torch.Tensor]:
        """The pre-activations optimized under cfg; the others stay at identity"""
        selected = []
        if cfg.learn_gamma:
            selected.append(self.g)
        if cfg.learn_lut:
            selected.append(self.h)
        if self.s is not None:
            selected.append(self.s)
        return selected

    def detached(self) -> "RawParamVector":
        return RawParamVector(g=self.g.detach().clone(), h=self.h.detach().clone(),
                              s=self.s.detach().clone() if self.s is not None else None)

def constrain_lut(h: torch.Tensor) -> torch.Tensor:
    increments = F.softplus(h.clamp(-LUT_PREACTIVATION_LIMIT, LUT_PREACTIVATION_LIMIT))
    curve = torch.cumsum(increments, dim=-1)
    low = curve[..., :1]
    high = curve[..., -1:]
    normalized = (curve - low) / (high - low).clamp_min(torch.finfo(torch.float64).tiny)
    ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
    blended = (1.0 - LUT_FLOOR_BLEND) * normalized + LUT_FLOOR_BLEND * ramp
    # exact endpoints
    zeros = torch.zeros_like(blended[..., :1])
    ones = torch.ones_like(blended[..., :1])
    return torch.cat([zeros, blended[..., 1:-1], ones], dim=-1)

def constrain(raw: RawParamVector) -> AdapterParams:
    return AdapterParams(
        luts=ChannelLut(constrain_lut(raw.h)),
        gamma=GammaGrid(torch.exp(GAMMA_LOG_BOUND * torch.tanh(raw.g))),
        dct=DctScale(torch.exp(DCT_LOG_BOUND * torch.tanh(raw.s))) if raw.s is not None else None)

def fft_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    difference = torch.fft.fft2(recon) - torch.fft.fft2(target)
    return difference.real.abs().mean() + difference.imag.abs().mean()

def loss(recon: torch.Tensor, target: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    if recon.shape != target.shape:
        raise DimensionMismatchError(f"Image shapes differ: {tuple(recon.shape)} vs {tuple(target.shape)}")
    total = torch.zeros((), dtype=torch.float64)
    if weights.l1:
        total = total + weights.l1 * (recon - target).abs().mean()
    if weights.ssim:
        total = total + weights.ssim * (1.0 - ssim_tensor(recon, target))
    if weights.fft:
        total = total + weights.fft * fft_loss(recon, target)
    return total

def make_thumbnail(img: RawImage, side: int) -> torch.Tensor:
    return resize_tensor(img.to_tensor(), side, side)

def _degrade(x: torch.Tensor, cfg: FitConfig) -> torch.Tensor:
    if cfg.simulator == Simulator.Jpeg:
        return simulate_jpeg(x, JpegSimConfig(quality=cfg.quality,
                                              fourier_terms=cfg.fourier_terms,
                                              rounding=Rounding.Soft,
                                              subsampling=Subsampling.S420))
    elif cfg.simulator == Simulator.Quantize8:
        return quantize8(x, Rounding.Soft, cfg.fourier_terms)
    else:
        return x

def objective(raw: RawParamVector, thumb: torch.Tensor, cfg: FitConfig) -> torch.Tensor:
    params = constrain(raw)
    recon = post_decode(_degrade(pre_encode(thumb, params), cfg), params)
    return loss(recon, thumb, cfg.loss_weights)

def gradient(raw: RawParamVector, thumb: torch.Tensor, cfg: FitConfig) -> RawParamVector:
    """Reverse-mode derivatives of the fitting objective with respect to every pre-activation"""
    leaves = raw.detached()
    tensors = leaves.tensors()
    for tensor in tensors:
        tensor.requires_grad_(True)
    value = objective(leaves, thumb, cfg)
    grads = torch.autograd.grad(value, tensors)
    g, h = grads[0], grads[1]
    s = grads[2] if leaves.s is not None else None
    return RawParamVector(g=g, h=h, s=s)

@dataclass
class FitResult:
    params: AdapterParams
    losses: List[float]
    """Objective before each step, then after the last one"""
    best_iteration: int

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def best_loss(self) -> float:
        return self.losses[self.best_iteration]

def fit_with_trace(img: RawImage, cfg: FitConfig) -> FitResult:
    torch.manual_seed(cfg.seed)
    thumb = make_thumbnail(img, cfg.thumbnail)
    raw = RawParamVector.zeros(cfg.use_dct)
    trainable = raw.trainable(cfg)
    for tensor in trainable:
        tensor.requires_grad_(True)

    losses: List[float] = []
    best = raw.detached()
    best_iteration = 0
    logger.info(f"Fitting {img.width}x{img.height} on a {cfg.thumbnail}px thumbnail: "
                f"Q={cfg.quality}, {cfg.iterations} iterations, dct={cfg.use_dct}")
    if cfg.iterations > 0:
        optimizer = torch.optim.Adam(trainable, lr=cfg.step_size, betas=cfg.moment_decays,
                                     weight_decay=cfg.weight_decay)
        scheduler: Optional[torch.optim.lr_scheduler.LRScheduler] = None
        if cfg.schedule == Schedule.Cosine:
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.iterations,
                                                                   eta_min=cfg.min_step_size)
        for iteration in range(cfg.iterations):
            optimizer.zero_grad()
            value = objective(raw, thumb, cfg)
            if not math.isfinite(value.item()):
                raise FitDivergedError(f"Non-finite loss {value.item()} at iteration {iteration}")
            losses.append(value.item())
            if losses[-1] < losses[best_iteration]:
                best = raw.detached()
                best_iteration = iteration
            if iteration % cfg.log_every == 0:
                logger.debug(f"Iteration {iteration}: loss {losses[-1]:.6f}")
            value.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()

    with torch.no_grad():
        final = objective(raw, thumb, cfg).item()
    if not math.isfinite(final):
        raise FitDivergedError(f"Non-finite loss {final} after {cfg.iterations} iterations")
    losses.append(final)
    if final < losses[best_iteration]:
        best = raw.detached()
        best_iteration = len(losses) - 1
    logger.info(f"Fit done: loss {losses[0]:.6f} -> {losses[-1]:.6f}, best {losses[best_iteration]:.6f} "
                f"at iteration {best_iteration}")
    params = quantize(constrain(best).detached())
    return FitResult(params=params, losses=losses, best_iteration=best_iteration)

def fit(img: RawImage, cfg: FitConfig) -> AdapterParams:
    return fit_with_trace(img, cfg).params

class Preset(ABC):
    name: str

    @abstractmethod
    def params(self, use_dct: bool = False) -> AdapterParams:
        pass

class IdentityPreset(Preset):
    name = "identity"

    def params(self, use_dct: bool = False) -> AdapterParams:
        return AdapterParams.identity(use_dct)

class FixedGammaPreset(Preset):
    """Encode raises samples to 1/gamma, brightening the shadows"""
    gamma: float

    def __init__(self, gamma: float) -> None:
        if not (math.isfinite(gamma) and gamma > 0):
            raise PresetError(f"Gamma must be positive, got {gamma}")
        exponent = 1.0 / gamma
        if not math.exp(-GAMMA_LOG_BOUND) <= exponent <= math.exp(GAMMA_LOG_BOUND):
            raise PresetError(f"Gamma {gamma} is outside the representable range "
                              f"[{math.exp(-GAMMA_LOG_BOUND):.3f}, {math.exp(GAMMA_LOG_BOUND):.3f}]")
        self.gamma = gamma
        self.name = f"gamma{gamma:g}"

    def params(self, use_dct: bool = False) -> AdapterParams:
        params = AdapterParams.identity(use_dct)
        params.gamma = GammaGrid.constant(1.0 / self.gamma)
        return params

class SrgbPreset(Preset):
    name = "srgb"
    color: ColorTransform

    def __init__(self, color: ColorTransform) -> None:
        self.color = color

    def params(self, use_dct: bool = False) -> AdapterParams:
        params = AdapterParams.identity(use_dct)
        params.color = copy.deepcopy(self.color)
        return params

def preset(kind: Preset, use_dct: bool = False) -> AdapterParams:
    try:
        return kind.params(use_dct)
    except ParamsValidationError as exn:
        raise PresetError(f"Preset {kind.name} yields invalid parameters: {exn}") from exn

def estimate_color_transform(img: RawImage, gamma: float = SRGB_GAMMA) -> ColorTransform:
    """Gray-world white balance relative to green, scaled so no gain exceeds 1"""
    means = img.data.reshape(-1, CHANNELS).mean(axis=0)
    if np.any(means <= np.finfo(np.float64).eps):
        logger.warning("Image has an empty channel, skipping white balance")
        gains = np.ones(CHANNELS)
    else:
        gains = means[1] / means
        gains = gains / gains.max()
    return ColorTransform(gains=gains, ccm=np.eye(CHANNELS), gamma=gamma)
