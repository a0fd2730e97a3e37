import cmath
import math
import unittest
from dataclasses import replace

import numpy as np
import torch

from rawjpeg.image import RawImage, synth_raw
from rawjpeg.fitter import (FitConfig, LossWeights, RawParamVector, Schedule, Simulator,
                            FitConfigError, PresetError, IdentityPreset, FixedGammaPreset, SrgbPreset,
                            constrain, constrain_lut, loss, fft_loss, gradient, objective, make_thumbnail,
                            fit, fit_with_trace, preset, estimate_color_transform)
from rawjpeg.metrics import DimensionMismatchError
from rawjpeg.transform import (LUT_SIZE, GAMMA_MIN, GAMMA_MAX, DCT_MIN, DCT_MAX, ColorTransform,
                               pre_encode, post_decode)

def dft2(x: np.ndarray) -> np.ndarray:
    """Two-dimensional DFT by the defining sum"""
    height, width = x.shape
    out = np.zeros((height, width), dtype=complex)
    for u in range(height):
        for v in range(width):
            out[u, v] = sum(x[i, j] * cmath.exp(-2j * math.pi * (u * i / height + v * j / width))
                            for i in range(height) for j in range(width))
    return out

def small_config(**changes: object) -> FitConfig:
    return replace(FitConfig(thumbnail=16, iterations=10), **changes)

class TestFitter(unittest.TestCase):
    def __init__(self, method_name: str) -> None:
        super().__init__(method_name)
        self.longMessage = True

    def setUp(self) -> None:
        self.generator = torch.Generator().manual_seed(99)

    def test_config_validation(self) -> None:
        with self.subTest(case="defaults"):
            cfg = FitConfig()
            self.assertEqual((cfg.quality, cfg.iterations, cfg.thumbnail), (50, 200, 256))
            self.assertEqual((cfg.step_size, cfg.moment_decays), (0.05, (0.9, 0.999)))
            self.assertEqual(cfg.loss_weights, LossWeights(l1=1.0, ssim=0.1, fft=0.1))
        for changes in [dict(thumbnail=100), dict(thumbnail=8), dict(iterations=-1), dict(quality=0),
                        dict(step_size=0.0), dict(moment_decays=(1.0, 0.999)), dict(weight_decay=-1.0),
                        dict(loss_weights=LossWeights(l1=-1.0)), dict(fourier_terms=0), dict(log_every=0)]:
            with self.subTest(changes=changes):
                with self.assertRaises(FitConfigError):
                    replace(FitConfig(), **changes)

    def test_constrain(self) -> None:
        with self.subTest(case="zero"):
            params = constrain(RawParamVector.zeros(use_dct=True))
            self.assertTrue(torch.equal(params.gamma.values, torch.ones(100, 100, dtype=torch.float64)))
            assert params.dct is not None
            self.assertTrue(torch.equal(params.dct.values, torch.ones(8, 8, dtype=torch.float64)))
        with self.subTest(case="saturated"):
            raw = RawParamVector.zeros(use_dct=True)
            raw.g.fill_(50.0)
            raw.s = torch.full((8, 8), -50.0, dtype=torch.float64)
            params = constrain(raw)
            self.assertAlmostEqual(params.gamma.values.max().item(), GAMMA_MAX, places=12)
            self.assertAlmostEqual(GAMMA_MAX, 7.389, places=3)
            assert params.dct is not None
            self.assertAlmostEqual(params.dct.values.min().item(), math.exp(-0.7), places=12)
        with self.subTest(case="equal increments"):
            entries = constrain_lut(torch.full((3, LUT_SIZE), 0.7, dtype=torch.float64))
            ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
            self.assertLessEqual((entries - ramp).abs().max().item(), 1e-14)
        with self.subTest(case="extreme inputs stay valid"):
            for scale in (1.0, 30.0, 1000.0):
                raw = RawParamVector(g=scale * torch.randn(100, 100, generator=self.generator, dtype=torch.float64),
                                     h=scale * torch.randn(3, LUT_SIZE, generator=self.generator, dtype=torch.float64),
                                     s=scale * torch.randn(8, 8, generator=self.generator, dtype=torch.float64))
                params = constrain(raw)
                self.assertTrue(bool(torch.all(torch.diff(params.luts.entries, dim=1) > 0)))
        with self.subTest(case="gamma range over 1e5 inputs"):
            for trial in range(10):
                raw = RawParamVector.zeros(use_dct=False)
                raw.g = 10.0 ** (trial % 4) * torch.randn(100, 100, generator=self.generator, dtype=torch.float64)
                values = constrain(raw).gamma.values
                self.assertGreaterEqual(values.min().item(), GAMMA_MIN - 1e-12)
                self.assertLessEqual(values.max().item(), GAMMA_MAX + 1e-12)
                self.assertGreaterEqual(values.min().item(), 0.13)
                self.assertLessEqual(values.max().item(), 7.4)
        with self.subTest(case="dct range over 1e5 inputs"):
            raw = RawParamVector.zeros(use_dct=True)
            for trial in range(1563):
                raw.s = 10.0 ** (trial % 4) * torch.randn(8, 8, generator=self.generator, dtype=torch.float64)
                params = constrain(raw)
                assert params.dct is not None
                self.assertGreaterEqual(params.dct.values.min().item(), DCT_MIN - 1e-12)
                self.assertLessEqual(params.dct.values.max().item(), DCT_MAX + 1e-12)

    def test_loss(self) -> None:
        target = torch.rand(3, 16, 16, generator=self.generator, dtype=torch.float64)
        with self.subTest(case="identical"):
            self.assertAlmostEqual(loss(target, target, LossWeights()).item(), 0.0, places=12)
        with self.subTest(case="l1 offset"):
            shifted = target * 0.8 + 0.1
            self.assertAlmostEqual(loss(shifted + 0.1, shifted, LossWeights(1.0, 0.0, 0.0)).item(), 0.1, places=12)
        with self.subTest(case="fft oracle"):
            small = torch.rand(3, 8, 8, generator=self.generator, dtype=torch.float64)
            rolled = torch.roll(small, shifts=1, dims=2)
            expected_real = []
            expected_imag = []
            for channel in range(3):
                difference = dft2(rolled[channel].numpy()) - dft2(small[channel].numpy())
                expected_real.append(np.abs(difference.real))
                expected_imag.append(np.abs(difference.imag))
            expected = float(np.mean(expected_real) + np.mean(expected_imag))
            self.assertAlmostEqual(loss(rolled, small, LossWeights(0.0, 0.0, 1.0)).item(), expected, places=9)
            self.assertAlmostEqual(fft_loss(rolled, small).item(), expected, places=9)
        with self.subTest(case="mismatch"):
            with self.assertRaises(DimensionMismatchError):
                loss(target, target[:, :8, :], LossWeights())

    def test_gradient_at_optimum(self) -> None:
        thumb = torch.rand(3, 16, 16, generator=self.generator, dtype=torch.float64)
        cfg = small_config(simulator=Simulator.Off)
        grads = gradient(RawParamVector.zeros(use_dct=True), thumb, cfg)
        for tensor in grads.tensors():
            with self.subTest(shape=tuple(tensor.shape)):
                self.assertLessEqual(tensor.abs().max().item(), 1e-9)

    def test_gradient_finite_differences(self) -> None:
        cfg = small_config()
        step = 1e-5
        names = ["g", "h", "s"]
        passed = checked = 0
        for trial in range(10):
            thumb = make_thumbnail(synth_raw(4 + trial, 48, 48), 16)
            raw = RawParamVector(g=0.3 * torch.randn(100, 100, generator=self.generator, dtype=torch.float64),
                                 h=0.3 * torch.randn(3, LUT_SIZE, generator=self.generator, dtype=torch.float64),
                                 s=0.1 * torch.randn(8, 8, generator=self.generator, dtype=torch.float64))
            grads = gradient(raw, thumb, cfg)
            # a 16x16 thumbnail only reads a few gamma cells; the rest have zero weight
            support = {name: torch.nonzero(getattr(grads, name).reshape(-1).abs() > 1e-8).flatten() for name in names}
            with self.subTest(trial=trial):
                self.assertGreater(support["g"].numel(), 0)
            for sample in range(20):
                name = names[sample % 3]
                candidates = support[name]
                index = int(candidates[int(torch.randint(0, candidates.numel(), (1,), generator=self.generator))])
                plus, minus = raw.detached(), raw.detached()
                getattr(plus, name).view(-1)[index] += step
                getattr(minus, name).view(-1)[index] -= step
                with torch.no_grad():
                    numeric = (objective(plus, thumb, cfg) - objective(minus, thumb, cfg)).item() / (2 * step)
                analytic = getattr(grads, name).reshape(-1)[index].item()
                scale = max(abs(numeric), abs(analytic), 1e-7)
                checked += 1
                if abs(numeric - analytic) / scale <= 1e-4:
                    passed += 1
        self.assertEqual(checked, 200)
        self.assertGreaterEqual(passed / checked, 0.95)

    def test_gradient_linear_in_weights(self) -> None:
        thumb = torch.rand(3, 16, 16, generator=self.generator, dtype=torch.float64)
        raw = RawParamVector(g=0.2 * torch.randn(100, 100, generator=self.generator, dtype=torch.float64),
                             h=0.2 * torch.randn(3, LUT_SIZE, generator=self.generator, dtype=torch.float64))
        single = gradient(raw, thumb, small_config(loss_weights=LossWeights(1.0, 0.0, 0.0)))
        double = gradient(raw, thumb, small_config(loss_weights=LossWeights(2.0, 0.0, 0.0)))
        for one, two in zip(single.tensors(), double.tensors()):
            with self.subTest(shape=tuple(one.shape)):
                self.assertLessEqual((two - 2.0 * one).abs().max().item(), 1e-12)

    def test_fit_without_iterations(self) -> None:
        img = synth_raw(5, 32, 32)
        params = fit(img, small_config(iterations=0, use_dct=True))
        ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
        with self.subTest(part="gamma"):
            self.assertTrue(torch.equal(params.gamma.values, torch.ones(100, 100, dtype=torch.float64)))
        with self.subTest(part="dct"):
            assert params.dct is not None
            self.assertTrue(torch.equal(params.dct.values, torch.ones(8, 8, dtype=torch.float64)))
        with self.subTest(part="lut"):
            self.assertLessEqual((params.luts.entries - ramp).abs().max().item(), 1 / 65535)

    def test_fit_descends(self) -> None:
        img = synth_raw(6, 64, 64)
        result = fit_with_trace(img, replace(FitConfig(), thumbnail=32, iterations=30))
        with self.subTest():
            self.assertEqual(len(result.losses), 31)
        with self.subTest():
            self.assertLess(result.best_loss, result.initial_loss)
        with self.subTest():
            self.assertEqual(result.best_loss, min(result.losses))

    def test_fit_deterministic(self) -> None:
        img = synth_raw(7, 32, 32)
        cfg = small_config(iterations=5, schedule=Schedule.Cosine, weight_decay=1e-3)
        first = fit(img, cfg)
        second = fit(img, cfg)
        with self.subTest(part="gamma"):
            self.assertTrue(torch.equal(first.gamma.values, second.gamma.values))
        with self.subTest(part="lut"):
            self.assertTrue(torch.equal(first.luts.entries, second.luts.entries))
        with self.subTest(part="dct"):
            assert first.dct is not None and second.dct is not None
            self.assertTrue(torch.equal(first.dct.values, second.dct.values))

    def test_fit_ablations(self) -> None:
        img = synth_raw(8, 32, 32)
        with self.subTest(case="lut only"):
            params = fit(img, small_config(iterations=5, learn_gamma=False, use_dct=False))
            self.assertTrue(torch.equal(params.gamma.values, torch.ones(100, 100, dtype=torch.float64)))
            self.assertIsNone(params.dct)
        with self.subTest(case="gamma only"):
            params = fit(img, small_config(iterations=5, learn_lut=False, use_dct=False))
            ramp = torch.arange(LUT_SIZE, dtype=torch.float64) / (LUT_SIZE - 1)
            self.assertLessEqual((params.luts.entries - ramp).abs().max().item(), 1 / 65535)
        with self.subTest(case="8-bit simulator"):
            result = fit_with_trace(img, small_config(iterations=5, simulator=Simulator.Quantize8))
            self.assertLessEqual(result.best_loss, result.initial_loss)

    def test_presets(self) -> None:
        x = 0.05 + 0.9 * torch.rand(3, 12, 12, generator=self.generator, dtype=torch.float64)
        with self.subTest(kind="identity"):
            params = preset(IdentityPreset())
            self.assertLessEqual((pre_encode(x, params) - x).abs().max().item(), 1e-12)
        with self.subTest(kind="gamma2.2"):
            kind = FixedGammaPreset(2.2)
            self.assertEqual(kind.name, "gamma2.2")
            params = preset(kind)
            quarter = torch.full((3, 2, 2), 0.25, dtype=torch.float64)
            self.assertAlmostEqual(pre_encode(quarter, params)[0, 0, 0].item(), 0.25 ** (1 / 2.2), places=12)
            self.assertLessEqual((post_decode(pre_encode(x, params), params) - x).abs().max().item(), 1e-9)
        with self.subTest(kind="gamma out of range"):
            with self.assertRaises(PresetError):
                FixedGammaPreset(0.1)
            with self.assertRaises(PresetError):
                FixedGammaPreset(-2.2)
        with self.subTest(kind="srgb"):
            params = preset(SrgbPreset(ColorTransform.neutral(2.2)))
            self.assertTrue(params.has_color)
            self.assertFalse(params.has_dct)

    def test_estimate_color_transform(self) -> None:
        data = np.empty((4, 4, 3))
        data[:, :] = [0.2, 0.4, 0.1]
        color = estimate_color_transform(RawImage(data))
        with self.subTest():
            np.testing.assert_allclose(color.gains.numpy(), [0.5, 0.25, 1.0], atol=1e-12)
        with self.subTest():
            self.assertTrue(torch.equal(color.ccm, torch.eye(3, dtype=torch.float64)))
            self.assertEqual(color.gamma, 2.2)
        with self.subTest(case="empty channel"):
            data[:, :, 0] = 0.0
            np.testing.assert_array_equal(estimate_color_transform(RawImage(data)).gains.numpy(), [1.0, 1.0, 1.0])

if __name__ == '__main__':
    unittest.main()
