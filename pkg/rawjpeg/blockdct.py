import math
from functools import lru_cache

import torch
import torch.nn.functional as F

BLOCK = 8

@lru_cache(maxsize=None)
def _basis(block: int) -> torch.Tensor:
    k = torch.arange(block, dtype=torch.float64).unsqueeze(1)
    i = torch.arange(block, dtype=torch.float64).unsqueeze(0)
    alpha = torch.full((block, 1), math.sqrt(2.0 / block), dtype=torch.float64)
    alpha[0, 0] = math.sqrt(1.0 / block)
    return alpha * torch.cos(math.pi / (2 * block) * (2 * i + 1) * k)

def dct_basis(block: int = BLOCK) -> torch.Tensor:
    """Orthonormal DCT-II matrix D, rows are frequencies: Y = D X Dᵀ"""
    if block < 1:
        raise ValueError(f"Block size must be positive, got {block}")
    return _basis(block).clone()

def pad_to_multiple(x: torch.Tensor, multiple: int) -> torch.Tensor:
    """Edge-replicate the bottom and right borders of (C,H,W) up to a multiple"""
    height, width = x.shape[-2:]
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    if pad_h == 0 and pad_w == 0:
        return x
    return F.pad(x.unsqueeze(0), (0, pad_w, 0, pad_h), mode="replicate").squeeze(0)

def blockify(x: torch.Tensor, block: int = BLOCK) -> torch.Tensor:
    """(C,H,W) with H,W multiples of block -> (C,H/B,W/B,B,B)"""
    channels, height, width = x.shape
    assert height % block == 0 and width % block == 0, f"{height}x{width} is not a multiple of {block}"
    return (x.reshape(channels, height // block, block, width // block, block)
            .permute(0, 1, 3, 2, 4))

def unblockify(blocks: torch.Tensor) -> torch.Tensor:
    channels, rows, cols, block, _ = blocks.shape
    return blocks.permute(0, 1, 3, 2, 4).reshape(channels, rows * block, cols * block)

def block_operator(basis: torch.Tensor) -> torch.Tensor:
    """D ⊗ D, the 2-D transform acting on row-major flattened blocks"""
    return torch.kron(basis, basis)

def _apply_flat(blocks: torch.Tensor, operator: torch.Tensor) -> torch.Tensor:
    size = blocks.shape[-1]
    flat = blocks.reshape(*blocks.shape[:-2], size * size)
    return (flat @ operator).reshape(blocks.shape)

def forward_dct(blocks: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    """Y = D X Dᵀ for every trailing B×B block"""
    return _apply_flat(blocks, block_operator(basis).T)

def inverse_dct(coefficients: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    return _apply_flat(coefficients, block_operator(basis))
