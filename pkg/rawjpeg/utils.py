from typing import Optional, TypeVar, Iterable, List

import numpy as np

T = TypeVar("T")

def get_optional(x: Optional[T], default: T) -> T:
    if x is None:
        return default
    else:
        return x

def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (np.rint ties to even)"""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)

def to_unit_codes(x: np.ndarray, maximum: int) -> np.ndarray:
    """Map [0,1] samples to integer codes 0..maximum"""
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * maximum + 0.5), 0, maximum)

def is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0

def format_table(header: List[str], rows: Iterable[List[str]]) -> str:
    """Left-aligned text table, columns padded to the widest cell"""
    all_rows = [header] + [list(row) for row in rows]
    widths = [max(len(row[column]) for row in all_rows) for column in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
             for row in all_rows]
    return "\n".join(lines)
