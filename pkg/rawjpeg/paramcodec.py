"""Adapter parameter payload carried in a JPEG COM segment

Body (little-endian):

    "RJA1" | version u8 | flags u8 | gamma log-min f32 | gamma log-max f32
    | gamma grid 100×100 u16 | LUTs 3×128 u16
    | [flags & 1] DCT scale 8×8 f32
    | [flags & 2] gains 3 f32, ccm 3×3 f32, gamma f32

The body is zlib-compressed, Base64-encoded and prefixed with "RJA:".
"""
import base64
import binascii
import struct
import zlib
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch

from . import log
from .blockdct import BLOCK
from .transform import (AdapterParams, ChannelLut, GammaGrid, DctScale, ColorTransform,
                        ParamsValidationError, LUT_SIZE, CHANNELS, GAMMA_GRID_SIZE,
                        DCT_MIN, DCT_MAX)

logger = log.getLogger(__name__)

MAGIC = b"RJA1"
VERSION = 1
PREFIX = "RJA:"
FLAG_DCT = 0x01
FLAG_COLOR = 0x02
KNOWN_FLAGS = FLAG_DCT | FLAG_COLOR
MAX_COM_BODY = 65533
U16_MAX = 65535
# float error allowance in reported quantization bounds
FLOAT_SLACK = 1e-12

HEADER = struct.Struct("<4sBBff")
GAMMA_CODES = GAMMA_GRID_SIZE * GAMMA_GRID_SIZE
LUT_CODES = CHANNELS * LUT_SIZE
DCT_VALUES = BLOCK * BLOCK
COLOR_VALUES = CHANNELS + CHANNELS * CHANNELS + 1

class PayloadException(Exception):
    pass

class PayloadFormatError(PayloadException):
    pass

class UnsupportedVersionError(PayloadException):
    pass

class PayloadTooLargeError(PayloadException):
    pass

class PayloadValidationError(PayloadException):
    pass

@dataclass
class ComPayload:
    text: str

    def to_bytes(self) -> bytes:
        return self.text.encode("ascii")

    @property
    def size(self) -> int:
        return len(self.text)

    @staticmethod
    def from_bytes(data: bytes) -> "ComPayload":
        try:
            return ComPayload(data.decode("ascii"))
        except UnicodeDecodeError as exn:
            raise PayloadFormatError(f"Payload is not ASCII: {exn}") from exn

    def compressed(self) -> bytes:
        if not self.text.startswith(PREFIX):
            raise PayloadFormatError(f"Payload does not start with {PREFIX}")
        try:
            return base64.b64decode(self.text[len(PREFIX):], validate=True)
        except (binascii.Error, ValueError) as exn:
            raise PayloadFormatError(f"Invalid Base64 in payload: {exn}") from exn

    def body(self) -> bytes:
        try:
            return zlib.decompress(self.compressed())
        except zlib.error as exn:
            raise PayloadFormatError(f"Cannot decompress payload: {exn}") from exn

@dataclass
class PayloadHeader:
    magic: bytes
    version: int
    flags: int
    has_dct: bool
    has_color: bool
    text_bytes: int
    compressed_bytes: int
    body_bytes: int

    def summary(self) -> str:
        def yes_no(flag: bool) -> str:
            return "yes" if flag else "no"
        return (f"{self.magic.decode('ascii', 'replace')} v{self.version}, "
                f"dct={yes_no(self.has_dct)}, color={yes_no(self.has_color)}, "
                f"payload {self.text_bytes} bytes")

def _f32(value: float) -> float:
    return float(np.float32(value))

def _f32_inside(low: float, high: float) -> Tuple[float, float]:
    """The float32 interval closest to [low, high] that lies within it"""
    low32 = np.float32(low)
    if float(low32) < low:
        low32 = np.nextafter(low32, np.float32(np.inf))
    high32 = np.float32(high)
    if float(high32) > high:
        high32 = np.nextafter(high32, np.float32(-np.inf))
    return float(low32), float(high32)

def _gamma_codes(grid: GammaGrid) -> Tuple[float, float, np.ndarray]:
    # extremes map to codes 0 and 65535, so decoded grids re-encode to the same bytes
    logs = np.log(grid.values.detach().cpu().numpy().astype(np.float64))
    log_min = _f32(float(logs.min()))
    log_max = _f32(float(logs.max()))
    span = log_max - log_min
    if span <= 0:
        return log_min, log_max, np.zeros(logs.shape, dtype=np.uint16)
    codes = np.rint((np.clip(logs, log_min, log_max) - log_min) / span * U16_MAX)
    return log_min, log_max, codes.astype(np.uint16)

def _gamma_values(log_min: float, log_max: float, codes: np.ndarray) -> np.ndarray:
    span = log_max - log_min
    return np.exp(log_min + codes.astype(np.float64) * (span / U16_MAX))

def repair_monotone(codes: np.ndarray) -> np.ndarray:
    """Force each row to start at 0, end at 65535 and increase by at least one"""
    codes = codes.astype(np.int64)
    length = codes.shape[-1]
    steps = np.arange(length)
    codes[..., 0] = 0
    codes[..., -1] = U16_MAX
    offset = np.maximum.accumulate(codes - steps, axis=-1)
    offset = np.minimum(offset, U16_MAX - (length - 1))
    return (offset + steps).astype(np.uint16)

def _lut_codes(luts: ChannelLut) -> np.ndarray:
    entries = luts.entries.detach().cpu().numpy().astype(np.float64)
    return np.rint(np.clip(entries, 0.0, 1.0) * U16_MAX)

def _dct_values(dct: DctScale) -> np.ndarray:
    values = dct.values.detach().cpu().numpy().astype(np.float64)
    low, high = _f32_inside(DCT_MIN, DCT_MAX)
    return np.clip(values.astype(np.float32), np.float32(low), np.float32(high))

def _color_values(color: ColorTransform) -> np.ndarray:
    return np.concatenate([color.gains.detach().cpu().numpy().ravel(),
                           color.ccm.detach().cpu().numpy().ravel(),
                           [color.gamma]]).astype(np.float32)

def encode_body(params: AdapterParams) -> bytes:
    flags = (FLAG_DCT if params.has_dct else 0) | (FLAG_COLOR if params.has_color else 0)
    log_min, log_max, gamma_codes = _gamma_codes(params.gamma)
    lut_codes = repair_monotone(_lut_codes(params.luts))
    parts = [HEADER.pack(MAGIC, VERSION, flags, log_min, log_max),
             gamma_codes.astype("<u2").tobytes(),
             lut_codes.astype("<u2").tobytes()]
    if params.dct is not None:
        parts.append(_dct_values(params.dct).astype("<f4").tobytes())
    if params.color is not None:
        parts.append(_color_values(params.color).astype("<f4").tobytes())
    return b"".join(parts)

def _take(body: bytes, offset: int, count: int, dtype: str) -> Tuple[np.ndarray, int]:
    size = count * np.dtype(dtype).itemsize
    if offset + size > len(body):
        raise PayloadFormatError(f"Truncated payload body: need {offset + size} bytes, have {len(body)}")
    return np.frombuffer(body, dtype=dtype, count=count, offset=offset), offset + size

def decode_body(body: bytes) -> AdapterParams:
    if len(body) < HEADER.size:
        raise PayloadFormatError(f"Truncated payload header: {len(body)} bytes")
    magic, version, flags, log_min, log_max = HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise PayloadFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported payload version {version}, expected {VERSION}")
    if flags & ~KNOWN_FLAGS:
        raise PayloadFormatError(f"Unknown flags 0x{flags:02x}")
    if not (np.isfinite(log_min) and np.isfinite(log_max) and log_min <= log_max):
        raise PayloadValidationError(f"Invalid gamma log range [{log_min}, {log_max}]")
    offset = HEADER.size
    gamma_codes, offset = _take(body, offset, GAMMA_CODES, "<u2")
    lut_codes, offset = _take(body, offset, LUT_CODES, "<u2")
    dct_values: Optional[np.ndarray] = None
    color_values: Optional[np.ndarray] = None
    if flags & FLAG_DCT:
        dct_values, offset = _take(body, offset, DCT_VALUES, "<f4")
    if flags & FLAG_COLOR:
        color_values, offset = _take(body, offset, COLOR_VALUES, "<f4")
    if offset != len(body):
        raise PayloadFormatError(f"{len(body) - offset} trailing bytes after payload body")

    try:
        gamma = _gamma_values(log_min, log_max, gamma_codes.reshape(GAMMA_GRID_SIZE, GAMMA_GRID_SIZE))
        luts = lut_codes.reshape(CHANNELS, LUT_SIZE).astype(np.float64) / U16_MAX
        color = None
        if color_values is not None:
            values = color_values.astype(np.float64)
            color = ColorTransform(gains=values[0:CHANNELS],
                                   ccm=values[CHANNELS:CHANNELS + 9].reshape(CHANNELS, CHANNELS),
                                   gamma=float(values[-1]))
        return AdapterParams(
            luts=ChannelLut(torch.from_numpy(luts)),
            gamma=GammaGrid(torch.from_numpy(gamma)),
            dct=DctScale(torch.from_numpy(dct_values.astype(np.float64).reshape(BLOCK, BLOCK)))
                if dct_values is not None else None,
            color=color)
    except ParamsValidationError as exn:
        raise PayloadValidationError(f"Payload holds invalid parameters: {exn}") from exn

def serialize(params: AdapterParams) -> ComPayload:
    body = encode_body(params)
    text = PREFIX + base64.b64encode(zlib.compress(body, 9)).decode("ascii")
    assert len(text) <= MAX_COM_BODY, f"Payload of {len(text)} bytes exceeds the COM limit"
    logger.debug(f"Serialized parameters: body {len(body)} bytes, text {len(text)} bytes")
    return ComPayload(text)

def deserialize(payload: Union[ComPayload, str]) -> AdapterParams:
    if isinstance(payload, str):
        payload = ComPayload(payload)
    if payload.size > MAX_COM_BODY:
        raise PayloadTooLargeError(f"Payload of {payload.size} bytes exceeds the COM limit")
    return decode_body(payload.body())

def quantize(params: AdapterParams) -> AdapterParams:
    """The parameters a decoder will read back from serialize(params)"""
    return decode_body(encode_body(params))

def describe_payload(payload: ComPayload) -> PayloadHeader:
    compressed = payload.compressed()
    body = payload.body()
    if len(body) < HEADER.size:
        raise PayloadFormatError(f"Truncated payload header: {len(body)} bytes")
    magic, version, flags, _, _ = HEADER.unpack_from(body, 0)
    return PayloadHeader(magic=magic, version=version, flags=flags,
                         has_dct=bool(flags & FLAG_DCT),
                         has_color=bool(flags & FLAG_COLOR),
                         text_bytes=payload.size,
                         compressed_bytes=len(compressed),
                         body_bytes=len(body))

@dataclass
class QuantizationReport:
    gamma_log_error: float
    gamma_log_bound: float
    gamma_error: float
    lut_error_before_repair: float
    lut_error: float
    lut_bound: float
    dct_error: float
    color_error: float

    def within_bounds(self) -> bool:
        return (self.gamma_log_error <= self.gamma_log_bound
                and self.lut_error_before_repair <= self.lut_bound)

def quantization_roundtrip_bound(params: AdapterParams) -> QuantizationReport:
    """Per-field maximum absolute error introduced by storing params"""
    restored = quantize(params)
    log_min, log_max, _ = _gamma_codes(params.gamma)

    gamma = params.gamma.values.detach().numpy()
    gamma_restored = restored.gamma.values.numpy()
    entries = params.luts.entries.detach().numpy()
    unrepaired = _lut_codes(params.luts) / U16_MAX

    dct_error = 0.0
    if params.dct is not None and restored.dct is not None:
        dct_error = float(np.max(np.abs(params.dct.values.detach().numpy() - restored.dct.values.numpy())))
    color_error = 0.0
    if params.color is not None and restored.color is not None:
        color_error = max(float(np.max(np.abs(params.color.gains.detach().numpy() - restored.color.gains.numpy()))),
                          float(np.max(np.abs(params.color.ccm.detach().numpy() - restored.color.ccm.numpy()))),
                          abs(params.color.gamma - restored.color.gamma))
    # half a code step, plus the float32 rounding of the stored range
    bounds_rounding = float(np.spacing(np.float32(max(abs(log_min), abs(log_max))))) / 2.0
    return QuantizationReport(
        gamma_log_error=float(np.max(np.abs(np.log(gamma) - np.log(gamma_restored)))),
        gamma_log_bound=(log_max - log_min) / U16_MAX + bounds_rounding + FLOAT_SLACK,
        gamma_error=float(np.max(np.abs(gamma - gamma_restored))),
        lut_error_before_repair=float(np.max(np.abs(entries - unrepaired))),
        lut_error=float(np.max(np.abs(entries - restored.luts.entries.numpy()))),
        lut_bound=1.0 / U16_MAX,
        dct_error=dct_error,
        color_error=color_error)
