from dataclasses import dataclass
from typing import Optional

import torch

from . import log
from .container import encode_jpeg, decode_jpeg_codes, insert_com, extract_com
from .image import RawImage
from .paramcodec import ComPayload, serialize, deserialize, quantize
from .transform import AdapterParams, pre_encode, post_decode_codes

logger = log.getLogger(__name__)

@dataclass
class EncodeResult:
    jpeg: bytes
    payload: ComPayload
    params: AdapterParams
    """The stored (quantized) parameters the encoder actually applied"""

@dataclass
class DecodeResult:
    image: RawImage
    params: Optional[AdapterParams]

def encode_raw(img: RawImage, params: AdapterParams, quality: int) -> EncodeResult:
    """pre_encode with the stored parameters, JPEG-encode and embed the payload"""
    stored = quantize(params)
    payload = serialize(stored)
    with torch.no_grad():
        adapted = RawImage.from_tensor(pre_encode(img.to_tensor(), stored))
    jpeg = insert_com(encode_jpeg(adapted, quality), payload)
    logger.debug(f"Encoded {img.width}x{img.height} at Q={quality}: {len(jpeg)} bytes, "
                 f"payload {payload.size} bytes")
    return EncodeResult(jpeg=jpeg, payload=payload, params=stored)

def decode_raw(jpeg: bytes) -> DecodeResult:
    """Decode and invert the adapter; files without a payload decode as plain JPEG"""
    codes = decode_jpeg_codes(jpeg)
    payload = extract_com(jpeg)
    if payload is None:
        logger.warning("No adapter payload found, returning the plain JPEG decode")
        return DecodeResult(image=RawImage(codes / 255.0), params=None)
    params = deserialize(payload)
    return DecodeResult(image=RawImage(post_decode_codes(codes, params)), params=params)
