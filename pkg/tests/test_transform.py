import math
import unittest

import numpy as np
import torch

from rawjpeg.transform import (LUT_SIZE, GAMMA_GRID_SIZE, DCT_MIN, DCT_MAX, GAMMA_MIN, GAMMA_MAX,
                               ChannelLut, GammaGrid, DctScale, ColorTransform, AdapterParams,
                               ParamsValidationError, apply_lut, invert_lut, apply_gamma, invert_gamma,
                               scale_dct, unscale_dct, apply_color, invert_color, pre_encode, post_decode,
                               post_decode_codes)

def random_luts(generator: torch.Generator) -> ChannelLut:
    steps = torch.rand(3, LUT_SIZE - 1, generator=generator, dtype=torch.float64) + 0.05
    entries = torch.cat([torch.zeros(3, 1, dtype=torch.float64), torch.cumsum(steps, dim=1)], dim=1)
    entries = entries / entries[:, -1:]
    entries[:, -1] = 1.0
    return ChannelLut(entries)

def random_grid(generator: torch.Generator, low: float = 0.3, high: float = 3.0) -> GammaGrid:
    return GammaGrid(low + (high - low) * torch.rand(GAMMA_GRID_SIZE, GAMMA_GRID_SIZE,
                                                     generator=generator, dtype=torch.float64))

def random_scale(generator: torch.Generator, low: float = DCT_MIN, high: float = DCT_MAX) -> DctScale:
    return DctScale(low + (high - low) * torch.rand(8, 8, generator=generator, dtype=torch.float64))

def random_image(generator: torch.Generator, height: int, width: int,
                 low: float = 0.0, high: float = 1.0) -> torch.Tensor:
    return low + (high - low) * torch.rand(3, height, width, generator=generator, dtype=torch.float64)

def max_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return (a - b).abs().max().item()

class TestTransform(unittest.TestCase):
    def __init__(self, method_name: str) -> None:
        super().__init__(method_name)
        self.longMessage = True

    def setUp(self) -> None:
        self.generator = torch.Generator().manual_seed(1234)

    def test_validation(self) -> None:
        with self.subTest(case="lut endpoints"):
            entries = ChannelLut.identity().entries.clone()
            entries[0, 0] = 0.001
            with self.assertRaises(ParamsValidationError):
                ChannelLut(entries)
        with self.subTest(case="lut monotone"):
            entries = ChannelLut.identity().entries.clone()
            entries[1, 10] = entries[1, 9]
            with self.assertRaises(ParamsValidationError):
                ChannelLut(entries)
        with self.subTest(case="lut shape"):
            with self.assertRaises(ParamsValidationError):
                ChannelLut(torch.linspace(0, 1, 64).expand(3, 64))
        with self.subTest(case="gamma bounds"):
            with self.assertRaises(ParamsValidationError):
                GammaGrid.constant(GAMMA_MAX * 1.01)
            with self.assertRaises(ParamsValidationError):
                GammaGrid.constant(GAMMA_MIN * 0.99)
            GammaGrid.constant(GAMMA_MAX)
        with self.subTest(case="dct bounds"):
            with self.assertRaises(ParamsValidationError):
                DctScale(torch.full((8, 8), 2.1, dtype=torch.float64))
            DctScale(torch.full((8, 8), DCT_MIN, dtype=torch.float64))
        with self.subTest(case="color"):
            with self.assertRaises(ParamsValidationError):
                ColorTransform(gains=[1.0, 0.0, 1.0], ccm=np.eye(3), gamma=2.2)
            with self.assertRaises(ParamsValidationError):
                ColorTransform(gains=[1.0, 1.0, 1.0], ccm=np.ones((3, 3)), gamma=2.2)
            with self.assertRaises(ParamsValidationError):
                ColorTransform(gains=[1.0, 1.0, 1.0], ccm=np.eye(3), gamma=0.0)
        with self.subTest(case="flags"):
            params = AdapterParams.identity(use_dct=True)
            self.assertTrue(params.has_dct)
            self.assertFalse(params.has_color)

    def test_lut(self) -> None:
        x = random_image(self.generator, 10, 10)
        identity = ChannelLut.identity()
        with self.subTest(case="identity"):
            self.assertLessEqual(max_error(apply_lut(x, identity), x), 1e-12)
            self.assertLessEqual(max_error(invert_lut(x, identity), x), 1e-12)
        with self.subTest(case="endpoints"):
            luts = random_luts(self.generator)
            ends = torch.tensor([0.0, 1.0], dtype=torch.float64).expand(3, 1, 2).clone()
            self.assertTrue(torch.equal(apply_lut(ends, luts), ends))
            self.assertTrue(torch.equal(invert_lut(ends, luts), ends))
        with self.subTest(case="gamma-shaped"):
            ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
            luts = ChannelLut((ramp ** (1 / 2.2)).expand(3, LUT_SIZE).clone())
            value = torch.full((3, 1, 1), 0.25, dtype=torch.float64)
            # dense oracle: the chord between the neighbouring entries
            position = 0.25 * (LUT_SIZE - 1)
            low = math.floor(position)
            fraction = position - low
            expected = ((low / 127) ** (1 / 2.2)) * (1 - fraction) + (((low + 1) / 127) ** (1 / 2.2)) * fraction
            self.assertAlmostEqual(apply_lut(value, luts)[0, 0, 0].item(), expected, places=12)
            self.assertLess(abs(apply_lut(value, luts)[0, 0, 0].item() - 0.25 ** (1 / 2.2)), 1e-3)
        with self.subTest(case="round trip"):
            luts = random_luts(self.generator)
            samples = torch.rand(3, 1, 1000, generator=self.generator, dtype=torch.float64)
            self.assertLessEqual(max_error(invert_lut(apply_lut(samples, luts), luts), samples), 1e-10)
        with self.subTest(case="monotone"):
            luts = random_luts(self.generator)
            ramp = torch.linspace(0, 1, 2000, dtype=torch.float64).expand(3, 1, 2000)
            self.assertTrue(bool(torch.all(torch.diff(apply_lut(ramp, luts), dim=-1) > 0)))

    def test_gamma(self) -> None:
        x = random_image(self.generator, 17, 23)
        with self.subTest(case="ones"):
            self.assertLessEqual(max_error(apply_gamma(x, GammaGrid.constant(1.0)), x), 1e-15)
            self.assertLessEqual(max_error(invert_gamma(x, GammaGrid.constant(1.0)), x), 1e-15)
        with self.subTest(case="constant 2"):
            half = torch.full((3, 4, 4), 0.5, dtype=torch.float64)
            self.assertLessEqual(max_error(apply_gamma(half, GammaGrid.constant(2.0)), half * half), 1e-15)
        with self.subTest(case="zero and one"):
            grid = random_grid(self.generator)
            ends = torch.zeros(3, 2, 2, dtype=torch.float64)
            ends[:, 1, :] = 1.0
            self.assertTrue(torch.equal(apply_gamma(ends, grid), ends))
            self.assertTrue(torch.equal(invert_gamma(ends, grid), ends))
        with self.subTest(case="oracle"):
            grid = random_grid(self.generator)
            out = apply_gamma(x, grid)
            for (i, j) in [(0, 0), (16, 22), (8, 5), (3, 19)]:
                y = i * 99 / 16
                z = j * 99 / 22
                y0, z0 = min(int(y), 98), min(int(z), 98)
                fy, fz = y - y0, z - z0
                g = grid.values
                exponent = ((1 - fy) * ((1 - fz) * g[y0, z0] + fz * g[y0, z0 + 1])
                            + fy * ((1 - fz) * g[y0 + 1, z0] + fz * g[y0 + 1, z0 + 1])).item()
                self.assertAlmostEqual(out[1, i, j].item(), x[1, i, j].item() ** exponent, places=12)
        with self.subTest(case="round trip"):
            grid = random_grid(self.generator, GAMMA_MIN, GAMMA_MAX)
            samples = random_image(self.generator, 31, 29, 0.01, 1.0)
            self.assertLessEqual(max_error(invert_gamma(apply_gamma(samples, grid), grid), samples), 1e-9)

    def test_dct_scale(self) -> None:
        with self.subTest(case="ones"):
            x = random_image(self.generator, 16, 16)
            self.assertLessEqual(max_error(scale_dct(x, DctScale.ones()), x), 1e-12)
        with self.subTest(case="constant block, unit DC"):
            values = random_scale(self.generator).values.clone()
            values[0, 0] = 1.0
            ones = torch.ones(3, 8, 8, dtype=torch.float64)
            self.assertLessEqual(max_error(scale_dct(ones, DctScale(values)), ones), 1e-12)
        with self.subTest(case="constant block, scaled DC"):
            values = torch.ones(8, 8, dtype=torch.float64)
            values[0, 0] = 1.5
            ones = torch.ones(3, 8, 8, dtype=torch.float64)
            self.assertLessEqual(max_error(scale_dct(ones, DctScale(values)), ones * 1.5), 1e-12)
        for size in [(16, 24), (13, 21), (5, 3), (8, 11)]:
            with self.subTest(case="round trip", size=size):
                aligned = size[0] % 8 == 0 and size[1] % 8 == 0
                scale = random_scale(self.generator) if aligned else random_scale(self.generator, 0.8, 1.25)
                x = random_image(self.generator, *size)
                scaled = scale_dct(x, scale)
                self.assertEqual(tuple(scaled.shape), (3,) + size)
                self.assertLessEqual(max_error(unscale_dct(scaled, scale), x), 1e-10)

    def test_dct_scale_border_is_replicated(self) -> None:
        scale = random_scale(self.generator)
        x = random_image(self.generator, 5, 6)
        padded = torch.nn.functional.pad(x.unsqueeze(0), (0, 2, 0, 3), mode="replicate").squeeze(0)
        self.assertLessEqual(max_error(scale_dct(x, scale), scale_dct(padded, scale)[:, :5, :6]), 1e-12)

    def test_color(self) -> None:
        x = random_image(self.generator, 6, 6)
        with self.subTest(case="neutral"):
            self.assertLessEqual(max_error(apply_color(x, ColorTransform.neutral()), x), 1e-15)
        with self.subTest(case="display gamma"):
            gray = torch.full((3, 1, 1), 0.25, dtype=torch.float64)
            out = apply_color(gray, ColorTransform.neutral(2.2))
            self.assertAlmostEqual(out[0, 0, 0].item(), 0.25 ** (1 / 2.2), places=12)
            self.assertAlmostEqual(out[0, 0, 0].item(), 0.5325, delta=1e-3)
        with self.subTest(case="round trip"):
            ccm = torch.tensor([[1.2, -0.1, -0.1], [-0.05, 1.1, -0.05], [0.0, -0.2, 1.2]], dtype=torch.float64)
            color = ColorTransform(gains=[0.6, 1.0, 0.7], ccm=ccm, gamma=2.2)
            # in gamut: ccm·(gains⊙x) stays inside [0,1]
            samples = random_image(self.generator, 20, 20, 0.3, 0.6)
            self.assertLessEqual(max_error(invert_color(apply_color(samples, color), color), samples), 1e-9)

    def test_pipeline(self) -> None:
        x = random_image(self.generator, 24, 20)
        with self.subTest(case="identity"):
            params = AdapterParams.identity()
            self.assertLessEqual(max_error(pre_encode(x, params), x), 1e-12)
            self.assertLessEqual(max_error(post_decode(x, params), x), 1e-12)
        with self.subTest(case="gamma only"):
            params = AdapterParams.identity()
            params.gamma = GammaGrid.constant(2.0)
            self.assertLessEqual(max_error(pre_encode(x, params), x * x), 1e-12)
        with self.subTest(case="composition"):
            params = AdapterParams(luts=random_luts(self.generator), gamma=random_grid(self.generator),
                                   dct=random_scale(self.generator, 0.95, 1.05))
            expected = apply_gamma(scale_dct(apply_lut(x, params.luts), params.dct).clamp(0, 1), params.gamma)
            self.assertLessEqual(max_error(pre_encode(x, params), expected), 1e-15)
        with self.subTest(case="round trip without dct"):
            for _ in range(100):
                params = AdapterParams(luts=random_luts(self.generator),
                                       gamma=random_grid(self.generator, GAMMA_MIN, GAMMA_MAX))
                sample = random_image(self.generator, 12, 9)
                self.assertLessEqual(max_error(post_decode(pre_encode(sample, params), params), sample), 1e-9)
        with self.subTest(case="round trip with dct"):
            params = AdapterParams(luts=ChannelLut.identity(), gamma=random_grid(self.generator),
                                   dct=random_scale(self.generator, 0.98, 1.02))
            sample = random_image(self.generator, 32, 27, 0.1, 0.9)
            self.assertLessEqual(max_error(post_decode(pre_encode(sample, params), params), sample), 1e-6)
        with self.subTest(case="round trip with dct over random pairs"):
            checked = 0
            for trial in range(100):
                params = AdapterParams(luts=random_luts(self.generator),
                                       gamma=random_grid(self.generator, GAMMA_MIN, GAMMA_MAX),
                                       dct=random_scale(self.generator, 0.98, 1.02))
                sample = random_image(self.generator, 16 + trial % 9, 16 + trial % 5, 0.2, 0.8)
                scaled = scale_dct(apply_lut(sample, params.luts), params.dct)
                if scaled.min().item() < 0.0 or scaled.max().item() > 1.0:
                    continue
                checked += 1
                self.assertLessEqual(max_error(post_decode(pre_encode(sample, params), params), sample), 1e-5,
                                     f"trial {trial}")
            self.assertGreaterEqual(checked, 50)
        with self.subTest(case="black and white survive"):
            params = AdapterParams(luts=random_luts(self.generator), gamma=random_grid(self.generator))
            ends = torch.zeros(3, 2, 2, dtype=torch.float64)
            ends[:, 0, :] = 1.0
            self.assertTrue(torch.equal(post_decode(pre_encode(ends, params), params), ends))

    def test_decode_codes(self) -> None:
        rng = np.random.default_rng(5)
        ccm = torch.tensor([[1.2, -0.1, -0.1], [-0.05, 1.1, -0.05], [0.0, -0.2, 1.2]], dtype=torch.float64)
        for height, width in [(24, 16), (21, 13), (8, 8), (5, 3)]:
            for variant in ("gamma", "dct", "color"):
                with self.subTest(size=(height, width), variant=variant):
                    params = AdapterParams(luts=random_luts(self.generator), gamma=random_grid(self.generator))
                    if variant != "gamma":
                        params.dct = random_scale(self.generator)
                    if variant == "color":
                        params.color = ColorTransform(gains=[0.6, 1.0, 0.7], ccm=ccm, gamma=2.2)
                    codes = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
                    expected = post_decode(torch.from_numpy(codes / 255.0).permute(2, 0, 1), params)
                    decoded = post_decode_codes(codes, params)
                    self.assertEqual(decoded.shape, (height, width, 3))
                    self.assertEqual(decoded.dtype, np.float64)
                    # the color inverse amplifies float32 rounding of the planes
                    tolerance = 5e-4 if variant == "color" else 1e-4
                    np.testing.assert_allclose(decoded, expected.permute(1, 2, 0).numpy(), rtol=0, atol=tolerance)
        with self.subTest(case="black and white"):
            params = AdapterParams(luts=random_luts(self.generator), gamma=random_grid(self.generator))
            codes = np.zeros((4, 4, 3), dtype=np.uint8)
            codes[2:] = 255
            decoded = post_decode_codes(codes, params)
            np.testing.assert_array_equal(decoded[:2], 0.0)
            np.testing.assert_allclose(decoded[2:], 1.0, rtol=0, atol=1e-6)

if __name__ == '__main__':
    unittest.main()
