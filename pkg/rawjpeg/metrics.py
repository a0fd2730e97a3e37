import csv
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import List, Optional, TextIO, Tuple

import numpy as np
import torch
from torchmetrics.functional import (structural_similarity_index_measure,
                                     multiscale_structural_similarity_index_measure)

from . import log
from .image import RawImage, PNG16_MAX
from .utils import to_unit_codes, format_table

logger = log.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = SSIM_WINDOW * 2 ** (len(MS_SSIM_WEIGHTS) - 1)

class MetricsException(Exception):
    pass

class DimensionMismatchError(MetricsException):
    pass

class ImageTooSmallError(MetricsException):
    pass

def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")

def _check_ssim_size(height: int, width: int) -> None:
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ImageTooSmallError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {width}x{height}")

@lru_cache(maxsize=None)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Normalized 2D Gaussian, size×size"""
    offsets = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    profile = torch.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    profile = profile / profile.sum()
    return torch.outer(profile, profile)

@lru_cache(maxsize=32)
def _window_spectrum(height: int, width: int) -> torch.Tensor:
    kernel = torch.zeros((height, width), dtype=torch.float64)
    kernel[:SSIM_WINDOW, :SSIM_WINDOW] = gaussian_window()
    return torch.fft.rfft2(kernel)

def _window_means(maps: torch.Tensor) -> torch.Tensor:
    """Gaussian-weighted means over every valid window of (..., H, W) maps"""
    height, width = maps.shape[-2:]
    spectrum = torch.fft.rfft2(maps) * _window_spectrum(height, width)
    # the circular wrap only reaches the first SSIM_WINDOW - 1 rows and columns
    full = torch.fft.irfft2(spectrum, s=(height, width))
    return full[..., SSIM_WINDOW - 1:, SSIM_WINDOW - 1:]

def _ssim_maps(a: torch.Tensor, b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Luminance and contrast-structure maps of (C,H,W) images over valid windows"""
    _check_ssim_size(a.shape[-2], a.shape[-1])
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a, mu_b, a2, b2, ab = _window_means(torch.stack([a, b, a * a, b * b, a * b])).unbind(0)
    var_a = a2 - mu_a * mu_a
    var_b = b2 - mu_b * mu_b
    covariance = ab - mu_a * mu_b
    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    contrast_structure = (2.0 * covariance + c2) / (var_a + var_b + c2)
    return luminance, contrast_structure

def ssim_tensor(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean single-scale SSIM of (C,H,W) tensors, differentiable; used as a fitting loss"""
    _check_same_shape(a, b)
    luminance, contrast_structure = _ssim_maps(a, b)
    return (luminance * contrast_structure).mean()

def psnr(a: RawImage, b: RawImage) -> float:
    """Peak 1.0; identical images give +inf"""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"Image shapes differ: {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)

def _batched(a: RawImage, b: RawImage) -> Tuple[torch.Tensor, torch.Tensor]:
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"Image shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.to_tensor().unsqueeze(0), b.to_tensor().unsqueeze(0)

def ssim(a: RawImage, b: RawImage) -> float:
    """Mean SSIM over valid 11×11 Gaussian windows, in [-1, 1]"""
    preds, target = _batched(a, b)
    _check_ssim_size(a.height, a.width)
    return float(structural_similarity_index_measure(
        preds, target, gaussian_kernel=True, sigma=SSIM_SIGMA, kernel_size=SSIM_WINDOW,
        data_range=1.0, k1=SSIM_K1, k2=SSIM_K2))

def ms_ssim(a: RawImage, b: RawImage) -> float:
    """Five-scale MS-SSIM with negative terms clipped to zero, in [0, 1]"""
    preds, target = _batched(a, b)
    if min(a.height, a.width) < MS_SSIM_MIN_SIDE:
        raise ImageTooSmallError(f"MS-SSIM needs at least {MS_SSIM_MIN_SIDE} pixels per side, "
                                 f"got {a.width}x{a.height}")
    return float(multiscale_structural_similarity_index_measure(
        preds, target, gaussian_kernel=True, sigma=SSIM_SIGMA, kernel_size=SSIM_WINDOW,
        data_range=1.0, k1=SSIM_K1, k2=SSIM_K2, betas=MS_SSIM_WEIGHTS, normalize="relu"))

def bpp(file_bytes: int, width: int, height: int) -> float:
    if width < 1 or height < 1:
        raise MetricsException(f"Invalid image size {width}x{height}")
    if file_bytes <= 0:
        raise MetricsException(f"File size must be positive, got {file_bytes}")
    return 8.0 * file_bytes / (width * height)

def cr(reference_bytes: int, file_bytes: int) -> float:
    if reference_bytes <= 0 or file_bytes <= 0:
        raise MetricsException(f"Sizes must be positive, got {reference_bytes} and {file_bytes}")
    return reference_bytes / file_bytes

def count_unique_triples(img: RawImage) -> int:
    """Distinct RGB triples on the 16-bit lattice"""
    codes = to_unit_codes(img.data, PNG16_MAX).astype(np.uint64).reshape(-1, 3)
    packed = (codes[:, 0] << np.uint64(32)) | (codes[:, 1] << np.uint64(16)) | codes[:, 2]
    return int(np.unique(packed).size)

def wbpp(bits_per_pixel: float, img: RawImage) -> float:
    return bits_per_pixel / math.log2(1 + count_unique_triples(img))

@dataclass
class MetricsReport:
    """ssim lies in [-1, 1] and goes negative on anticorrelated structure; ms_ssim stays in [0, 1]"""
    psnr: float
    ssim: float
    ms_ssim: float
    bpp: float
    wbpp: float
    cr: float
    unique_triples: int
    file_bytes: int

REPORT_FIELDS = [f.name for f in fields(MetricsReport)]

def evaluate(original: RawImage, reconstruction: RawImage,
             file_bytes: int, reference_bytes: int) -> MetricsReport:
    """Full report; MS-SSIM is NaN for images below its minimum size"""
    if original.data.shape != reconstruction.data.shape:
        raise DimensionMismatchError(f"Image shapes differ: {original.data.shape} vs {reconstruction.data.shape}")
    try:
        ms_ssim_value = ms_ssim(original, reconstruction)
    except ImageTooSmallError as exn:
        logger.warning(f"Skipping MS-SSIM: {exn}")
        ms_ssim_value = math.nan
    bits = bpp(file_bytes, original.width, original.height)
    return MetricsReport(psnr=psnr(original, reconstruction),
                         ssim=ssim(original, reconstruction),
                         ms_ssim=ms_ssim_value,
                         bpp=bits,
                         wbpp=wbpp(bits, reconstruction),
                         cr=cr(reference_bytes, file_bytes),
                         unique_triples=count_unique_triples(reconstruction),
                         file_bytes=file_bytes)

def mean_report(reports: List[MetricsReport]) -> MetricsReport:
    if not reports:
        raise MetricsException("Cannot average an empty set of reports")
    def mean(name: str) -> float:
        return float(np.mean([getattr(report, name) for report in reports]))
    return MetricsReport(psnr=mean("psnr"), ssim=mean("ssim"), ms_ssim=mean("ms_ssim"),
                         bpp=mean("bpp"), wbpp=mean("wbpp"), cr=mean("cr"),
                         unique_triples=int(round(mean("unique_triples"))),
                         file_bytes=int(round(mean("file_bytes"))))

@dataclass
class ReportRow:
    label: str
    method: str
    quality: Optional[int]
    report: MetricsReport

CSV_HEADER = ["image", "method", "quality"] + REPORT_FIELDS

def _format_value(value: float) -> str:
    if isinstance(value, int):
        return str(value)
    if math.isinf(value):
        return "inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.6f}"

def row_cells(row: ReportRow) -> List[str]:
    return ([row.label, row.method, "" if row.quality is None else str(row.quality)]
            + [_format_value(getattr(row.report, name)) for name in REPORT_FIELDS])

def write_csv(rows: List[ReportRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row_cells(row))

def format_report_table(rows: List[ReportRow]) -> str:
    return format_table(CSV_HEADER, [row_cells(row) for row in rows])
