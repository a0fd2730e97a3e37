"""The invertible adapter pipeline

Images are channel-first (3,H,W) float64 tensors. Every forward stage has an
exact inverse so that post_decode(pre_encode(x)) = x up to float error, with
the clamp after DCT scaling the only lossy point.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from . import log
from .blockdct import BLOCK, dct_basis, block_operator, blockify, unblockify, forward_dct, inverse_dct
from .image import resize_tensor

logger = log.getLogger(__name__)

LUT_SIZE = 128
CHANNELS = 3
GAMMA_GRID_SIZE = 100
GAMMA_LOG_BOUND = 2.0
DCT_LOG_BOUND = 0.7
GAMMA_MIN = math.exp(-GAMMA_LOG_BOUND)
GAMMA_MAX = math.exp(GAMMA_LOG_BOUND)
DCT_MIN = math.exp(-DCT_LOG_BOUND)
DCT_MAX = math.exp(DCT_LOG_BOUND)
# float slack on the exp() bounds
BOUND_TOLERANCE = 1e-12
MIN_CCM_DETERMINANT = 1e-12

TensorLike = Union[torch.Tensor, np.ndarray, Sequence[float], float]

class TransformException(Exception):
    pass

class ParamsValidationError(TransformException):
    pass

def as_tensor(values: TensorLike) -> torch.Tensor:
    return torch.as_tensor(values, dtype=torch.float64)

def _check_shape(name: str, values: torch.Tensor, shape: tuple) -> None:
    if tuple(values.shape) != shape:
        raise ParamsValidationError(f"{name} has shape {tuple(values.shape)}, expected {shape}")

def _check_bounds(name: str, values: torch.Tensor, low: float, high: float) -> None:
    with torch.no_grad():
        if not bool(torch.all(torch.isfinite(values))):
            raise ParamsValidationError(f"{name} contains non-finite values")
        below = values < low * (1.0 - BOUND_TOLERANCE)
        above = values > high * (1.0 + BOUND_TOLERANCE)
        if bool(torch.any(below | above)):
            raise ParamsValidationError(
                f"{name} outside [{low:.6g}, {high:.6g}]: "
                f"min {values.min().item():.6g}, max {values.max().item():.6g}")

@dataclass
class ChannelLut:
    """Per-channel tone curves, 3×128 strictly increasing entries from 0 to 1"""
    entries: torch.Tensor

    def __post_init__(self) -> None:
        self.entries = as_tensor(self.entries)
        _check_shape("LUT", self.entries, (CHANNELS, LUT_SIZE))
        with torch.no_grad():
            if not bool(torch.all(torch.isfinite(self.entries))):
                raise ParamsValidationError("LUT contains non-finite values")
            if not (bool(torch.all(self.entries[:, 0] == 0.0)) and bool(torch.all(self.entries[:, -1] == 1.0))):
                raise ParamsValidationError("LUT entries must start at 0 and end at 1")
            if not bool(torch.all(torch.diff(self.entries, dim=1) > 0)):
                raise ParamsValidationError("LUT entries must be strictly increasing")

    @staticmethod
    def identity() -> "ChannelLut":
        ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
        return ChannelLut(ramp.expand(CHANNELS, LUT_SIZE).clone())

@dataclass
class GammaGrid:
    values: torch.Tensor

    def __post_init__(self) -> None:
        self.values = as_tensor(self.values)
        _check_shape("Gamma grid", self.values, (GAMMA_GRID_SIZE, GAMMA_GRID_SIZE))
        _check_bounds("Gamma grid", self.values, GAMMA_MIN, GAMMA_MAX)

    @staticmethod
    def constant(value: float) -> "GammaGrid":
        return GammaGrid(torch.full((GAMMA_GRID_SIZE, GAMMA_GRID_SIZE), float(value), dtype=torch.float64))

@dataclass
class DctScale:
    values: torch.Tensor

    def __post_init__(self) -> None:
        self.values = as_tensor(self.values)
        _check_shape("DCT scale", self.values, (BLOCK, BLOCK))
        _check_bounds("DCT scale", self.values, DCT_MIN, DCT_MAX)

    @staticmethod
    def ones() -> "DctScale":
        return DctScale(torch.ones((BLOCK, BLOCK), dtype=torch.float64))

@dataclass
class ColorTransform:
    """White balance gains, color correction matrix and display gamma"""
    gains: torch.Tensor
    ccm: torch.Tensor
    gamma: float

    def __post_init__(self) -> None:
        self.gains = as_tensor(self.gains)
        self.ccm = as_tensor(self.ccm)
        self.gamma = float(self.gamma)
        _check_shape("Gains", self.gains, (CHANNELS,))
        _check_shape("CCM", self.ccm, (CHANNELS, CHANNELS))
        with torch.no_grad():
            if not bool(torch.all(torch.isfinite(self.gains))) or not bool(torch.all(self.gains > 0)):
                raise ParamsValidationError(f"Gains must be positive, got {self.gains.tolist()}")
            if not bool(torch.all(torch.isfinite(self.ccm))):
                raise ParamsValidationError("CCM contains non-finite values")
            if abs(torch.linalg.det(self.ccm).item()) <= MIN_CCM_DETERMINANT:
                raise ParamsValidationError("CCM is singular")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ParamsValidationError(f"Color gamma must be positive, got {self.gamma}")

    @staticmethod
    def neutral(gamma: float = 1.0) -> "ColorTransform":
        return ColorTransform(gains=torch.ones(CHANNELS, dtype=torch.float64),
                              ccm=torch.eye(CHANNELS, dtype=torch.float64),
                              gamma=gamma)

@dataclass
class AdapterParams:
    luts: ChannelLut
    gamma: GammaGrid
    dct: Optional[DctScale] = None
    color: Optional[ColorTransform] = None

    @property
    def has_dct(self) -> bool:
        return self.dct is not None

    @property
    def has_color(self) -> bool:
        return self.color is not None

    @staticmethod
    def identity(use_dct: bool = False) -> "AdapterParams":
        return AdapterParams(luts=ChannelLut.identity(),
                             gamma=GammaGrid.constant(1.0),
                             dct=DctScale.ones() if use_dct else None)

    def detached(self) -> "AdapterParams":
        """A copy without autograd history"""
        return AdapterParams(
            luts=ChannelLut(self.luts.entries.detach().clone()),
            gamma=GammaGrid(self.gamma.values.detach().clone()),
            dct=DctScale(self.dct.values.detach().clone()) if self.dct is not None else None,
            color=ColorTransform(self.color.gains.detach().clone(),
                                 self.color.ccm.detach().clone(),
                                 self.color.gamma) if self.color is not None else None)

def _safe_pow(x: torch.Tensor, exponent: Union[torch.Tensor, float]) -> torch.Tensor:
    """x^p with 0^p = 0 and finite gradients at 0"""
    positive = x > 0
    base = torch.where(positive, x, torch.ones_like(x))
    return torch.where(positive, base ** exponent, torch.zeros_like(x))

def apply_lut(img: torch.Tensor, luts: ChannelLut) -> torch.Tensor:
    channels, height, width = img.shape
    position = img.clamp(0.0, 1.0).reshape(channels, -1) * (LUT_SIZE - 1)
    index = position.detach().floor().clamp(0, LUT_SIZE - 2).long()
    fraction = position - index
    low = torch.gather(luts.entries, 1, index)
    high = torch.gather(luts.entries, 1, index + 1)
    out = low * (1.0 - fraction) + high * fraction
    return out.reshape(channels, height, width)

def invert_lut(img: torch.Tensor, luts: ChannelLut) -> torch.Tensor:
    channels, height, width = img.shape
    y = img.clamp(0.0, 1.0).reshape(channels, -1).contiguous()
    entries = luts.entries.contiguous()
    index = (torch.searchsorted(entries.detach(), y.detach(), right=True) - 1).clamp(0, LUT_SIZE - 2)
    low = torch.gather(entries, 1, index)
    high = torch.gather(entries, 1, index + 1)
    fraction = (y - low) / (high - low)
    out = (index + fraction) / (LUT_SIZE - 1)
    return out.reshape(channels, height, width)

def gamma_map(grid: GammaGrid, height: int, width: int) -> torch.Tensor:
    """The gamma grid resampled to H×W"""
    return resize_tensor(grid.values.unsqueeze(0), height, width).squeeze(0)

def apply_gamma(img: torch.Tensor, grid: GammaGrid) -> torch.Tensor:
    exponent = gamma_map(grid, img.shape[-2], img.shape[-1])
    return _safe_pow(img, exponent)

def invert_gamma(img: torch.Tensor, grid: GammaGrid) -> torch.Tensor:
    exponent = gamma_map(grid, img.shape[-2], img.shape[-1])
    return _safe_pow(img, 1.0 / exponent)

def _border_operator(scale: torch.Tensor, rows: int, cols: int) -> torch.Tensor:
    """Matrix of pad-replicate, scale and crop acting on a flattened rows×cols partial block"""
    size = rows * cols
    unit = torch.eye(size, dtype=torch.float64).reshape(size, 1, rows, cols)
    padded = F.pad(unit, (0, BLOCK - cols, 0, BLOCK - rows), mode="replicate")
    basis = dct_basis(BLOCK)
    scaled = inverse_dct(forward_dct(padded, basis) * scale, basis)
    return scaled[:, 0, :rows, :cols].reshape(size, size).T

def _scale_full_blocks(region: torch.Tensor, scale: torch.Tensor, inverse: bool) -> torch.Tensor:
    basis = dct_basis(BLOCK)
    coefficients = forward_dct(blockify(region, BLOCK), basis)
    coefficients = coefficients / scale if inverse else coefficients * scale
    return unblockify(inverse_dct(coefficients, basis))

def _scale_partial_blocks(region: torch.Tensor, scale: torch.Tensor,
                          rows: int, cols: int, inverse: bool) -> torch.Tensor:
    channels, height, width = region.shape
    block_rows, block_cols = height // rows, width // cols
    vectors = (region.reshape(channels, block_rows, rows, block_cols, cols)
               .permute(0, 1, 3, 2, 4)
               .reshape(-1, rows * cols))
    operator = _border_operator(scale, rows, cols)
    if inverse:
        try:
            out = torch.linalg.solve(operator, vectors.T).T
        except RuntimeError as exn:
            raise TransformException(f"Cannot invert DCT scaling on {rows}x{cols} border blocks: {exn}") from exn
    else:
        out = vectors @ operator.T
    return (out.reshape(channels, block_rows, block_cols, rows, cols)
            .permute(0, 1, 3, 2, 4)
            .reshape(channels, height, width))

def _blockwise_scale(img: torch.Tensor, dct: DctScale, inverse: bool) -> torch.Tensor:
    # Border blocks are edge-replicated to 8×8 and cropped back; their inverse
    # solves the resulting square linear map exactly.
    scale = dct.values
    _, height, width = img.shape
    full_h = height - height % BLOCK
    full_w = width - width % BLOCK
    rest_h = height - full_h
    rest_w = width - full_w

    top = []
    if full_h and full_w:
        top.append(_scale_full_blocks(img[:, :full_h, :full_w], scale, inverse))
    if full_h and rest_w:
        top.append(_scale_partial_blocks(img[:, :full_h, full_w:], scale, BLOCK, rest_w, inverse))
    bottom = []
    if rest_h and full_w:
        bottom.append(_scale_partial_blocks(img[:, full_h:, :full_w], scale, rest_h, BLOCK, inverse))
    if rest_h and rest_w:
        bottom.append(_scale_partial_blocks(img[:, full_h:, full_w:], scale, rest_h, rest_w, inverse))
    strips = [torch.cat(parts, dim=2) for parts in (top, bottom) if parts]
    return torch.cat(strips, dim=1)

def scale_dct(img: torch.Tensor, dct: DctScale) -> torch.Tensor:
    return _blockwise_scale(img, dct, inverse=False)

def unscale_dct(img: torch.Tensor, dct: DctScale) -> torch.Tensor:
    return _blockwise_scale(img, dct, inverse=True)

def apply_color(img: torch.Tensor, color: ColorTransform) -> torch.Tensor:
    balanced = img * color.gains.reshape(CHANNELS, 1, 1)
    corrected = torch.einsum("ij,jhw->ihw", color.ccm, balanced).clamp_min(0.0)
    return _safe_pow(corrected, 1.0 / color.gamma).clamp(0.0, 1.0)

def invert_color(img: torch.Tensor, color: ColorTransform) -> torch.Tensor:
    linear = _safe_pow(img, color.gamma)
    uncorrected = torch.einsum("ij,jhw->ihw", torch.linalg.inv(color.ccm), linear)
    return uncorrected / color.gains.reshape(CHANNELS, 1, 1)

def pre_encode(img: torch.Tensor, params: AdapterParams) -> torch.Tensor:
    x = img
    if params.color is not None:
        x = apply_color(x, params.color)
    x = apply_lut(x, params.luts)
    if params.dct is not None:
        x = scale_dct(x, params.dct)
    return apply_gamma(x.clamp(0.0, 1.0), params.gamma)

def post_decode(img: torch.Tensor, params: AdapterParams) -> torch.Tensor:
    x = invert_gamma(img.clamp(0.0, 1.0), params.gamma)
    if params.dct is not None:
        x = unscale_dct(x, params.dct)
    x = invert_lut(x, params.luts)
    if params.color is not None:
        x = invert_color(x, params.color)
    return x.clamp(0.0, 1.0)

# Decoding path for full-size images: no autograd, float32 working planes.

CODE_LEVELS = 256

def _log_code_table() -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.arange(CODE_LEVELS) / (CODE_LEVELS - 1.0)).astype(np.float32)

def _unscale_operator(dct: DctScale) -> np.ndarray:
    """Row-vector operator of forward DCT, division by S and inverse DCT on flattened blocks"""
    kron = block_operator(dct_basis(BLOCK))
    scale = dct.values.detach().reshape(-1)
    return (kron.T @ torch.diag(1.0 / scale) @ kron).numpy().astype(np.float32)

def _unscale_dct_planes(planes: np.ndarray, dct: DctScale) -> None:
    channels, height, width = planes.shape
    full_h = height - height % BLOCK
    full_w = width - width % BLOCK
    if full_h and full_w:
        view = planes[:, :full_h, :full_w].reshape(channels, full_h // BLOCK, BLOCK, full_w // BLOCK, BLOCK)
        assert np.may_share_memory(view, planes), "block view must alias the planes"
        blocks = view.transpose(0, 1, 3, 2, 4).reshape(-1, BLOCK * BLOCK)
        restored = blocks @ _unscale_operator(dct)
        view[...] = restored.reshape(channels, full_h // BLOCK, full_w // BLOCK, BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)

    scale = dct.values.detach()
    borders = []
    if full_h and width > full_w:
        borders.append((slice(0, full_h), slice(full_w, width), BLOCK, width - full_w))
    if height > full_h and full_w:
        borders.append((slice(full_h, height), slice(0, full_w), height - full_h, BLOCK))
    if height > full_h and width > full_w:
        borders.append((slice(full_h, height), slice(full_w, width), height - full_h, width - full_w))
    for rows, cols, block_rows, block_cols in borders:
        strip = torch.from_numpy(planes[:, rows, cols].astype(np.float64))
        planes[:, rows, cols] = _scale_partial_blocks(strip, scale, block_rows, block_cols, inverse=True).numpy()

def _invert_color_samples(samples: np.ndarray, color: ColorTransform) -> np.ndarray:
    linear = np.power(samples, color.gamma)
    uncorrected = linear @ np.linalg.inv(color.ccm.detach().numpy()).T
    return uncorrected / color.gains.detach().numpy()

def post_decode_codes(codes: np.ndarray, params: AdapterParams) -> np.ndarray:
    """post_decode of a decoder's H×W×3 uint8 output, as H×W×3 float64

    Agrees with post_decode(codes / 255) to float32 precision.
    """
    height, width, channels = codes.shape
    assert channels == CHANNELS, f"Expected {CHANNELS} channels, got {channels}"
    planes = _log_code_table()[np.ascontiguousarray(codes.transpose(2, 0, 1))]
    with torch.no_grad():
        exponent = resize_tensor(params.gamma.values.detach().to(torch.float32).unsqueeze(0), height, width)
        planes *= exponent.squeeze(0).reciprocal().numpy()
    # x^(1/Γ) = exp(ln x / Γ), with ln 0 = -inf giving 0
    np.exp(planes, out=planes)
    if params.dct is not None:
        _unscale_dct_planes(planes, params.dct)

    ramp = np.arange(LUT_SIZE) / (LUT_SIZE - 1.0)
    entries = params.luts.entries.detach().numpy()
    out = np.empty((height, width, CHANNELS))
    for channel in range(CHANNELS):
        out[:, :, channel] = np.interp(planes[channel], entries[channel], ramp)
    if params.color is not None:
        out = _invert_color_samples(out, params.color)
    return np.clip(out, 0.0, 1.0, out=out)
