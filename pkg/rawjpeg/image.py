import os
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from . import log
from .utils import to_unit_codes

logger = log.getLogger(__name__)

PNG16_MAX = 65535
PFM_HEADER = re.compile(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")

class ImageException(Exception):
    pass

class ImageReadError(ImageException):
    pass

class ImageWriteError(ImageException):
    pass

class ImageFormatError(ImageException):
    pass

class NormalizationError(ImageException):
    pass

class RawFormat(Enum):
    Png16 = "png16"
    Pfm   = "pfm"

    @staticmethod
    def from_path(path: str) -> "RawFormat":
        suffix = os.path.splitext(path)[1].lower()
        if suffix == ".png":
            return RawFormat.Png16
        elif suffix == ".pfm":
            return RawFormat.Pfm
        else:
            raise ImageFormatError(f"Cannot tell raw format from file name {path}, expected .png or .pfm")

@dataclass
class RawImage:
    """Linear-light RGB samples, H×W×3 float64, nominally in [0,1]"""
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ImageFormatError(f"Expected H×W×3 samples, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageFormatError(f"Image has no pixels: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ImageFormatError("Image contains non-finite samples")
        self.data = data

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def to_tensor(self) -> torch.Tensor:
        """Channel-first (3,H,W) float64 tensor sharing no memory with the image"""
        return torch.from_numpy(self.data.copy()).permute(2, 0, 1).contiguous()

    @staticmethod
    def from_tensor(tensor: torch.Tensor) -> "RawImage":
        assert tensor.dim() == 3 and tensor.shape[0] == 3, f"Expected (3,H,W) tensor, got {tuple(tensor.shape)}"
        return RawImage(tensor.detach().to(torch.float64).permute(1, 2, 0).cpu().numpy())

    def clamped(self) -> "RawImage":
        return RawImage(np.clip(self.data, 0.0, 1.0))

    @staticmethod
    def zeros(width: int, height: int) -> "RawImage":
        return RawImage(np.zeros((height, width, 3)))

@dataclass
class NormalizationSpec:
    black_level: float
    white_level: float

    def __post_init__(self) -> None:
        if not self.black_level >= 0:
            raise NormalizationError(f"Black level must be nonnegative, got {self.black_level}")
        if not self.white_level > self.black_level:
            raise NormalizationError(f"White level {self.white_level} must exceed black level {self.black_level}")

def normalize(counts: np.ndarray, spec: NormalizationSpec) -> RawImage:
    """Map sensor counts to [0,1] linear samples"""
    counts = np.asarray(counts, dtype=np.float64)
    scaled = (counts - spec.black_level) / (spec.white_level - spec.black_level)
    return RawImage(np.clip(scaled, 0.0, 1.0))

def _load_png16_counts(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ImageReadError(f"File {path} does not exist")
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageReadError(f"Cannot decode {path} as PNG")
    if data.dtype != np.uint16:
        raise ImageFormatError(f"{path} is not a 16-bit PNG (sample type {data.dtype})")
    if data.ndim != 3 or data.shape[2] != 3:
        channels = 1 if data.ndim == 2 else data.shape[2]
        raise ImageFormatError(f"{path} has {channels} channels, expected 3")
    # OpenCV is BGR
    return data[:, :, ::-1].astype(np.float64)

def _load_pfm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as file:
            contents = file.read()
    except OSError as exn:
        raise ImageReadError(f"Cannot read {path}: {exn}") from exn
    match = PFM_HEADER.match(contents)
    if not match:
        raise ImageFormatError(f"{path} does not start with a PFM header")
    kind, width, height, scale = match.groups()
    if kind != b"PF":
        raise ImageFormatError(f"{path} is a 1-channel PFM, expected 3 channels")
    width, height = int(width), int(height)
    try:
        scale_value = float(scale)
    except ValueError:
        raise ImageFormatError(f"{path} has invalid PFM scale {scale!r}")
    dtype = "<f4" if scale_value < 0 else ">f4"
    count = width * height * 3
    body = contents[match.end():]
    if len(body) < count * 4:
        raise ImageFormatError(f"{path} is truncated: expected {count * 4} sample bytes, got {len(body)}")
    samples = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    # rows are stored bottom to top
    return np.flipud(samples.reshape(height, width, 3))

def load_raw(path: str, format: Optional[RawFormat] = None,
             normalization: Optional[NormalizationSpec] = None) -> RawImage:
    """Load a raw image; with a normalization spec the file samples are sensor counts"""
    format = format or RawFormat.from_path(path)
    if format == RawFormat.Png16:
        samples = _load_png16_counts(path)
        if normalization is None:
            samples = samples / PNG16_MAX
    else:
        samples = _load_pfm(path)
    if normalization is not None:
        return normalize(samples, normalization)
    if not np.all(np.isfinite(samples)):
        raise ImageFormatError(f"{path} contains non-finite samples")
    logger.debug(f"Loaded {path}: {samples.shape[1]}x{samples.shape[0]} {format.value}")
    return RawImage(np.clip(samples, 0.0, 1.0))

def png16_bytes(img: RawImage) -> bytes:
    """The 16-bit PNG encoding of an image; the reference size for compression ratios"""
    codes = to_unit_codes(img.data, PNG16_MAX).astype(np.uint16)
    ok, encoded = cv2.imencode(".png", np.ascontiguousarray(codes[:, :, ::-1]))
    if not ok:
        raise ImageWriteError("PNG encoding failed")
    return encoded.tobytes()

def save_raw(img: RawImage, path: str, format: Optional[RawFormat] = None) -> None:
    format = format or RawFormat.from_path(path)
    if format == RawFormat.Png16:
        contents = png16_bytes(img)
    else:
        header = f"PF\n{img.width} {img.height}\n-1.0\n".encode("ascii")
        contents = header + np.flipud(img.data).astype("<f4").tobytes()
    try:
        with open(path, "wb") as file:
            file.write(contents)
    except OSError as exn:
        raise ImageWriteError(f"Cannot write {path}: {exn}") from exn
    logger.debug(f"Wrote {path}: {len(contents)} bytes")

def resize_tensor(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Align-corners bilinear resampling of a (C,H,W) tensor; differentiable"""
    if out_w < 1 or out_h < 1:
        raise ImageFormatError(f"Invalid target size {out_w}x{out_h}")
    if tuple(x.shape[-2:]) == (out_h, out_w):
        return x
    return F.interpolate(x.unsqueeze(0), size=(out_h, out_w),
                         mode="bilinear", align_corners=True).squeeze(0)

def resize_bilinear(img: RawImage, out_w: int, out_h: int) -> RawImage:
    return RawImage.from_tensor(resize_tensor(img.to_tensor(), out_h, out_w))

@dataclass
class SynthProfile:
    noise: float = 0.01
    blobs: int = 6
    rectangles: int = 4
    exposure: float = 0.85

PROFILES: Dict[str, SynthProfile] = {
    "default": SynthProfile(),
    "clean": SynthProfile(noise=0.0),
}

def _normalized(field: np.ndarray) -> np.ndarray:
    low, high = field.min(), field.max()
    if high - low <= 0:
        return np.zeros_like(field)
    return (field - low) / (high - low)

def _ramp(rng: np.random.Generator, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return _normalized(np.cos(angle) * u + np.sin(angle) * v)

def synth_raw(seed: int, width: int, height: int,
              profile: SynthProfile = PROFILES["default"]) -> RawImage:
    """Dark-skewed linear scene with a color cast: smooth blobs, flat patches, ramps and sensor noise"""
    if width < 1 or height < 1:
        raise ImageFormatError(f"Invalid synthetic image size {width}x{height}")
    rng = np.random.default_rng(seed)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    u = u / max(width - 1, 1)
    v = v / max(height - 1, 1)

    scene = rng.uniform(0.1, 0.4) * _ramp(rng, u, v)
    for _ in range(profile.blobs):
        cx, cy = rng.uniform(0.0, 1.0, size=2)
        sigma = rng.uniform(0.05, 0.25)
        amplitude = rng.uniform(0.2, 0.8)
        scene += amplitude * np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2.0 * sigma ** 2))
    for _ in range(profile.rectangles):
        x0, x1 = np.sort(rng.uniform(0.0, 1.0, size=2))
        y0, y1 = np.sort(rng.uniform(0.0, 1.0, size=2))
        inside = (u >= x0) & (u <= x1) & (v >= y0) & (v <= y1)
        scene[inside] = rng.uniform(0.0, 1.0) * scene.max()
    scene = _normalized(scene)

    # linear light: most of the mass in the shadows
    median = float(np.clip(np.median(scene), 1e-3, 1.0 - 1e-3))
    exponent = max(2.2, np.log(0.18) / np.log(median))
    luminance = profile.exposure * scene ** exponent

    cast = np.array([rng.uniform(0.3, 0.7), 1.0, rng.uniform(0.3, 0.7)])
    modulation = np.stack([0.85 + 0.15 * _ramp(rng, u, v) for _ in range(3)], axis=-1)
    data = luminance[:, :, None] * cast * modulation

    if profile.noise > 0:
        sigma = profile.noise * np.sqrt(np.maximum(data, 0.0)) + 0.1 * profile.noise
        data = data + rng.normal(0.0, 1.0, size=data.shape) * sigma
    return RawImage(np.clip(data, 0.0, 1.0))

def synth_corpus(seed: int, count: int, width: int, height: int,
                 profile: SynthProfile = PROFILES["default"]) -> List[RawImage]:
    return [synth_raw(seed + index, width, height, profile) for index in range(count)]
