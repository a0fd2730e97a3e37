import io
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import log
from .image import RawImage
from .paramcodec import ComPayload, PREFIX, MAX_COM_BODY
from .utils import round_half_away

logger = log.getLogger(__name__)

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
COM = 0xFE
APP0 = 0xE0
APP15 = 0xEF
TEM = 0x01
RST0 = 0xD0
RST7 = 0xD7

MARKER_NAMES = {
    SOI: "SOI", EOI: "EOI", SOS: "SOS", COM: "COM",
    0xC0: "SOF0", 0xC1: "SOF1", 0xC2: "SOF2", 0xC4: "DHT", 0xDB: "DQT", 0xDD: "DRI",
}

class ContainerException(Exception):
    pass

class MarkerParseError(ContainerException):
    pass

class ComTooLargeError(ContainerException):
    pass

class CodecError(ContainerException):
    pass

def is_app(marker: int) -> bool:
    return APP0 <= marker <= APP15

def _standalone(marker: int) -> bool:
    return marker in (SOI, EOI, TEM) or RST0 <= marker <= RST7

def marker_name(marker: int) -> str:
    if is_app(marker):
        return f"APP{marker - APP0}"
    return MARKER_NAMES.get(marker, f"0x{marker:02X}")

@dataclass
class MarkerSegment:
    marker: int
    offset: int
    """Position of the 0xFF byte introducing the marker"""
    length: int
    """Value of the length field, which counts itself; 0 for standalone markers"""
    payload: bytes

    @property
    def name(self) -> str:
        return marker_name(self.marker)

    @property
    def end(self) -> int:
        """Offset just past the segment"""
        return self.offset + 2 + self.length

    @property
    def payload_length(self) -> int:
        return len(self.payload)

def scan_markers(data: bytes) -> List[MarkerSegment]:
    """Segments from SOI up to and including SOS (or EOI)"""
    if len(data) < 2 or data[0] != 0xFF or data[1] != SOI:
        raise MarkerParseError("Missing SOI marker")
    segments = [MarkerSegment(marker=SOI, offset=0, length=0, payload=b"")]
    position = 2
    while True:
        if position >= len(data):
            raise MarkerParseError(f"Truncated stream: no marker at offset {position}")
        if data[position] != 0xFF:
            raise MarkerParseError(f"Expected marker at offset {position}, found 0x{data[position]:02X}")
        # fill bytes
        while position + 1 < len(data) and data[position + 1] == 0xFF:
            position += 1
        if position + 1 >= len(data):
            raise MarkerParseError(f"Truncated marker at offset {position}")
        offset = position
        marker = data[position + 1]
        if _standalone(marker):
            segments.append(MarkerSegment(marker=marker, offset=offset, length=0, payload=b""))
            position += 2
            if marker == EOI:
                return segments
            continue
        if position + 4 > len(data):
            raise MarkerParseError(f"Truncated length field for {marker_name(marker)} at offset {offset}")
        (length,) = struct.unpack(">H", data[position + 2:position + 4])
        if length < 2:
            raise MarkerParseError(f"Malformed length {length} for {marker_name(marker)} at offset {offset}")
        if position + 2 + length > len(data):
            raise MarkerParseError(f"{marker_name(marker)} at offset {offset} runs past the end of the stream")
        segment = MarkerSegment(marker=marker, offset=offset, length=length,
                                payload=data[position + 4:position + 2 + length])
        segments.append(segment)
        if marker == SOS:
            return segments
        position = segment.end

def com_segment(payload: ComPayload) -> bytes:
    body = payload.to_bytes()
    if len(body) > MAX_COM_BODY:
        raise ComTooLargeError(f"COM body of {len(body)} bytes exceeds {MAX_COM_BODY}")
    return bytes([0xFF, COM]) + struct.pack(">H", len(body) + 2) + body

def insert_com(data: bytes, payload: ComPayload) -> bytes:
    """Insert a COM segment after the last APPn segment, or after SOI if there is none"""
    segments = scan_markers(data)
    apps = [segment for segment in segments if is_app(segment.marker)]
    position = apps[-1].end if apps else 2
    segment = com_segment(payload)
    logger.debug(f"Inserting {len(segment)}-byte COM at offset {position}")
    return data[:position] + segment + data[position:]

def is_adapter_segment(segment: MarkerSegment) -> bool:
    return segment.marker == COM and segment.payload.startswith(PREFIX.encode("ascii"))

def adapter_payloads(data: bytes) -> List[ComPayload]:
    """All COM payloads carrying adapter parameters, in file order"""
    payloads = []
    for segment in scan_markers(data):
        if is_adapter_segment(segment):
            payloads.append(ComPayload.from_bytes(segment.payload))
    return payloads

def extract_com(data: bytes) -> Optional[ComPayload]:
    """The first adapter COM payload"""
    payloads = adapter_payloads(data)
    if len(payloads) > 1:
        logger.warning(f"Found {len(payloads)} adapter payloads, using the first one")
    return payloads[0] if payloads else None

def to_8bit(img: RawImage) -> np.ndarray:
    return np.clip(round_half_away(img.data * 255.0), 0, 255).astype(np.uint8)

def encode_jpeg(img: RawImage, quality: int) -> bytes:
    """Baseline sequential JPEG, 4:2:0"""
    if not isinstance(quality, int) or not 1 <= quality <= 100:
        raise CodecError(f"Quality must be an integer in [1, 100], got {quality!r}")
    output = io.BytesIO()
    try:
        Image.fromarray(to_8bit(img)).save(
            output, format="JPEG", quality=quality, subsampling=2, optimize=False, progressive=False)
    except (OSError, ValueError) as exn:
        raise CodecError(f"JPEG encoding failed: {exn}") from exn
    return output.getvalue()

def decode_jpeg_codes(data: bytes) -> np.ndarray:
    """The decoder's 8-bit samples, H×W×3 uint8"""
    try:
        with Image.open(io.BytesIO(data)) as image:
            if image.format != "JPEG":
                raise CodecError(f"Expected a JPEG stream, got {image.format}")
            return np.array(image.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError) as exn:
        raise CodecError(f"JPEG decoding failed: {exn}") from exn

def decode_jpeg(data: bytes) -> RawImage:
    return RawImage(decode_jpeg_codes(data) / 255.0)
