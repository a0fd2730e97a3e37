import math
import unittest

import numpy as np
import torch

from rawjpeg.blockdct import (BLOCK, dct_basis, pad_to_multiple, blockify, unblockify,
                              block_operator, forward_dct, inverse_dct)

def direct_dct(block: np.ndarray) -> np.ndarray:
    """2-D DCT-II by the defining double sum"""
    size = block.shape[0]
    out = np.zeros((size, size))
    def alpha(k: int) -> float:
        return math.sqrt(1.0 / size) if k == 0 else math.sqrt(2.0 / size)
    for u in range(size):
        for v in range(size):
            total = 0.0
            for x in range(size):
                for y in range(size):
                    total += (block[x, y]
                              * math.cos(math.pi * (2 * x + 1) * u / (2 * size))
                              * math.cos(math.pi * (2 * y + 1) * v / (2 * size)))
            out[u, v] = alpha(u) * alpha(v) * total
    return out

class TestBlockDct(unittest.TestCase):
    def __init__(self, method_name: str) -> None:
        super().__init__(method_name)
        self.longMessage = True

    def test_orthonormal(self) -> None:
        for block in (1, 2, 4, 8, 16):
            with self.subTest(block=block):
                basis = dct_basis(block)
                error = (basis @ basis.T - torch.eye(block, dtype=torch.float64)).abs().max().item()
                self.assertLessEqual(error, 1e-12)

    def test_small_bases(self) -> None:
        with self.subTest(block=1):
            np.testing.assert_array_equal(dct_basis(1).numpy(), [[1.0]])
        with self.subTest(block=2):
            h = 1 / math.sqrt(2)
            np.testing.assert_allclose(dct_basis(2).numpy(), [[h, h], [h, -h]], atol=1e-15)
        with self.subTest(block=0):
            with self.assertRaises(ValueError):
                dct_basis(0)

    def test_basis_is_a_copy(self) -> None:
        basis = dct_basis(8)
        basis[0, 0] = 42.0
        self.assertNotEqual(dct_basis(8)[0, 0].item(), 42.0)

    def test_direct_sum(self) -> None:
        block = np.random.default_rng(0).uniform(size=(BLOCK, BLOCK))
        coefficients = forward_dct(torch.from_numpy(block), dct_basis(BLOCK)).numpy()
        with self.subTest():
            np.testing.assert_allclose(coefficients, direct_dct(block), atol=1e-12)
        with self.subTest():
            ones = forward_dct(torch.ones(BLOCK, BLOCK, dtype=torch.float64), dct_basis(BLOCK))
            self.assertAlmostEqual(ones[0, 0].item(), 8.0, places=12)
            self.assertLessEqual(ones.flatten()[1:].abs().max().item(), 1e-12)

    def test_block_operator(self) -> None:
        basis = dct_basis(BLOCK)
        operator = block_operator(basis)
        with self.subTest(case="orthogonal"):
            self.assertEqual(tuple(operator.shape), (BLOCK * BLOCK, BLOCK * BLOCK))
            error = (operator @ operator.T - torch.eye(BLOCK * BLOCK, dtype=torch.float64)).abs().max().item()
            self.assertLessEqual(error, 1e-12)
        blocks = torch.rand(3, 2, 5, BLOCK, BLOCK, dtype=torch.float64)
        with self.subTest(case="matches per-block products"):
            expected = basis @ blocks @ basis.T
            self.assertLessEqual((forward_dct(blocks, basis) - expected).abs().max().item(), 1e-12)
        with self.subTest(case="inverse"):
            expected = basis.T @ blocks @ basis
            self.assertLessEqual((inverse_dct(blocks, basis) - expected).abs().max().item(), 1e-12)
        with self.subTest(case="gradient"):
            x = blocks.clone().requires_grad_(True)
            forward_dct(x, basis).sum().backward()
            assert x.grad is not None
            self.assertEqual(tuple(x.grad.shape), tuple(blocks.shape))

    def test_blocks(self) -> None:
        x = torch.rand(3, 16, 24, dtype=torch.float64)
        blocks = blockify(x)
        with self.subTest():
            self.assertEqual(tuple(blocks.shape), (3, 2, 3, 8, 8))
            self.assertTrue(torch.equal(blocks[1, 1, 2], x[1, 8:16, 16:24]))
        with self.subTest():
            self.assertTrue(torch.equal(unblockify(blocks), x))
        with self.subTest():
            basis = dct_basis()
            restored = unblockify(inverse_dct(forward_dct(blocks, basis), basis))
            self.assertLessEqual((restored - x).abs().max().item(), 1e-12)

    def test_pad(self) -> None:
        x = torch.arange(3 * 5 * 6, dtype=torch.float64).reshape(3, 5, 6)
        padded = pad_to_multiple(x, 8)
        with self.subTest():
            self.assertEqual(tuple(padded.shape), (3, 8, 8))
        with self.subTest():
            self.assertTrue(torch.equal(padded[:, :5, :6], x))
            self.assertTrue(torch.equal(padded[:, 7, 7], x[:, 4, 5]))
        with self.subTest():
            self.assertIs(pad_to_multiple(padded, 8), padded)

if __name__ == '__main__':
    unittest.main()
