"""Differentiable approximation of a baseline JPEG round trip

Works on (3,H,W) float64 tensors in [0,1]; internally samples live in the
0..255 domain like a real codec. Soft rounding keeps gradients flowing
through the quantizer, hard rounding is the non-differentiable reference.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Tuple

import torch
import torch.nn.functional as F

from . import log
from .blockdct import BLOCK, dct_basis, pad_to_multiple, blockify, unblockify, forward_dct, inverse_dct

logger = log.getLogger(__name__)

DEFAULT_FOURIER_TERMS = 10

# ITU-T T.81 Annex K, tables K.1 and K.2
ANNEX_K_LUMA = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
]

ANNEX_K_CHROMA = [
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
]

# ITU-T T.871 full range, chroma centered at 0
RGB_TO_YCBCR = [
    [0.299, 0.587, 0.114],
    [-0.299 / 1.772, -0.587 / 1.772, 0.5],
    [0.5, -0.587 / 1.402, -0.114 / 1.402],
]

class SimulatorException(Exception):
    pass

class SimConfigError(SimulatorException):
    pass

class Rounding(Enum):
    Soft = "soft"
    Hard = "hard"

class Subsampling(Enum):
    S420 = "s420"
    Off  = "none"

@dataclass
class JpegSimConfig:
    quality: int = 50
    fourier_terms: int = DEFAULT_FOURIER_TERMS
    rounding: Rounding = Rounding.Soft
    subsampling: Subsampling = Subsampling.S420
    luma_table: torch.Tensor = field(default_factory=lambda: torch.tensor(ANNEX_K_LUMA, dtype=torch.float64))
    chroma_table: torch.Tensor = field(default_factory=lambda: torch.tensor(ANNEX_K_CHROMA, dtype=torch.float64))

    def __post_init__(self) -> None:
        quality_factor(self.quality)
        if self.fourier_terms < 1:
            raise SimConfigError(f"Fourier term count must be at least 1, got {self.fourier_terms}")
        for name in ("luma_table", "chroma_table"):
            table = torch.as_tensor(getattr(self, name), dtype=torch.float64)
            if tuple(table.shape) != (BLOCK, BLOCK):
                raise SimConfigError(f"{name} must be {BLOCK}x{BLOCK}, got {tuple(table.shape)}")
            if not (bool(torch.all(table == torch.round(table)))
                    and bool(torch.all((table >= 1) & (table <= 255)))):
                raise SimConfigError(f"{name} entries must be integers in [1, 255]")
            setattr(self, name, table)

def quality_factor(quality: int) -> float:
    if not isinstance(quality, int) or not 1 <= quality <= 100:
        raise SimConfigError(f"Quality must be an integer in [1, 100], got {quality!r}")
    if quality < 50:
        return 50.0 / quality
    return (200 - 2 * quality) / 100.0

def scaled_table(table: torch.Tensor, quality: int) -> torch.Tensor:
    """clamp(round(T·f(Q)), 1, 255) evaluated exactly on rationals"""
    quality_factor(quality)
    factor = Fraction(50, quality) if quality < 50 else Fraction(200 - 2 * quality, 100)
    half = Fraction(1, 2)
    scaled = [[min(255, max(1, math.floor(Fraction(int(entry)) * factor + half)))
               for entry in row]
              for row in table.tolist()]
    return torch.tensor(scaled, dtype=torch.float64)

@lru_cache(maxsize=None)
def _color_matrices() -> Tuple[torch.Tensor, torch.Tensor]:
    forward = torch.tensor(RGB_TO_YCBCR, dtype=torch.float64)
    return forward, torch.linalg.inv(forward)

def rgb_to_ycbcr(img: torch.Tensor) -> torch.Tensor:
    forward, _ = _color_matrices()
    return torch.einsum("ij,jhw->ihw", forward, img)

def ycbcr_to_rgb(img: torch.Tensor) -> torch.Tensor:
    _, inverse = _color_matrices()
    return torch.einsum("ij,jhw->ihw", inverse, img)

def subsample_420(plane: torch.Tensor) -> torch.Tensor:
    """2×2 box average of (C,H,W) planes with even H and W"""
    assert plane.shape[-2] % 2 == 0 and plane.shape[-1] % 2 == 0, f"Odd plane size {tuple(plane.shape)}"
    return F.avg_pool2d(plane.unsqueeze(0), kernel_size=2).squeeze(0)

def upsample_420(plane: torch.Tensor) -> torch.Tensor:
    """Twice-size bilinear upsampling with centered samples"""
    return F.interpolate(plane.unsqueeze(0), scale_factor=2, mode="bilinear",
                         align_corners=False).squeeze(0)

def round_half_away(z: torch.Tensor) -> torch.Tensor:
    return torch.sign(z) * torch.floor(torch.abs(z) + 0.5)

def soft_round(z: torch.Tensor, terms: int = DEFAULT_FOURIER_TERMS) -> torch.Tensor:
    """Truncated Fourier series of round(z); equals z at integers"""
    if terms < 1:
        raise SimConfigError(f"Fourier term count must be at least 1, got {terms}")
    # the periodic part only depends on z mod 1, and vanishes exactly at integers
    phase = z - torch.floor(z).detach()
    correction = torch.zeros_like(z)
    for n in range(1, terms + 1):
        sign = 1.0 if n % 2 == 1 else -1.0
        correction = correction + (sign / n) * torch.sin(2.0 * math.pi * n * phase)
    return z - correction / math.pi

def _rounder(rounding: Rounding, terms: int) -> Callable[[torch.Tensor], torch.Tensor]:
    if rounding == Rounding.Hard:
        return round_half_away
    return lambda z: soft_round(z, terms)

def _quantize_planes(planes: torch.Tensor, table: torch.Tensor,
                     round_fn: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    basis = dct_basis(BLOCK)
    coefficients = forward_dct(blockify(planes, BLOCK), basis)
    restored = round_fn(coefficients / table) * table
    return unblockify(inverse_dct(restored, basis))

def simulate_jpeg(img: torch.Tensor, cfg: JpegSimConfig) -> torch.Tensor:
    channels, height, width = img.shape
    assert channels == 3, f"Expected 3 channels, got {channels}"
    round_fn = _rounder(cfg.rounding, cfg.fourier_terms)
    luma_table = scaled_table(cfg.luma_table, cfg.quality)
    chroma_table = scaled_table(cfg.chroma_table, cfg.quality)
    subsampled = cfg.subsampling == Subsampling.S420

    x = pad_to_multiple(img, 2 * BLOCK if subsampled else BLOCK)
    ycc = rgb_to_ycbcr(x) * 255.0
    luma = ycc[0:1] - 128.0
    chroma = ycc[1:3]
    if subsampled:
        chroma = subsample_420(chroma)

    luma = _quantize_planes(luma, luma_table, round_fn) + 128.0
    chroma = _quantize_planes(chroma, chroma_table, round_fn)
    if subsampled:
        chroma = upsample_420(chroma)

    rgb = ycbcr_to_rgb(torch.cat([luma, chroma], dim=0) / 255.0)
    return rgb[:, :height, :width].clamp(0.0, 1.0)

def quantize8(img: torch.Tensor,
              rounding: Rounding = Rounding.Hard,
              terms: int = DEFAULT_FOURIER_TERMS) -> torch.Tensor:
    """8-bit sample quantization: round(255x)/255"""
    return (_rounder(rounding, terms)(img.clamp(0.0, 1.0) * 255.0) / 255.0).clamp(0.0, 1.0)
