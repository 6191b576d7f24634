import math
from unittest import mock

import numpy as np
import torch
from django.test import SimpleTestCase

from karl.base_tokenizer import decode2d, encode2d
from karl.exceptions import EvaluationError, InputError
from karl.metrics import (
    ThresholdReport, eval_fixed_tokens, eval_variable_tokens, pixel_l1, psnr, ssim, ssim_per_image,
    threshold_satisfaction, validation_l1,
)
from karl.model import decode, encode, per_image_l1, quantize, reconstruct
from karl.types import Image, stack_images

from .factories import tiny_base, tiny_config, tiny_images, tiny_model, tiny_suite


def reference_ssim(a, b, window=7, c1=0.01 ** 2, c2=0.03 ** 2):
    """Window-by-window SSIM over C x H x W arrays."""
    channels, height, width = a.shape
    values = []
    for c in range(channels):
        for i in range(height - window + 1):
            for j in range(width - window + 1):
                x = a[c, i:i + window, j:j + window]
                y = b[c, i:i + window, j:j + window]
                mx, my = x.mean(), y.mean()
                vx, vy = x.var(), y.var()
                cov = ((x - mx) * (y - my)).mean()
                values.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(values))


class PixelMetricTests(SimpleTestCase):

    def test_l1(self):
        a = torch.zeros(1, 3, 4, 4)
        self.assertEqual(pixel_l1(a, a), 0.0)
        self.assertAlmostEqual(pixel_l1(a, torch.full_like(a, 0.25)), 0.25)

    def test_l1_accepts_image_records(self):
        pixels = np.full((4, 4, 3), 0.5, dtype=np.float32)
        self.assertAlmostEqual(pixel_l1(Image(pixels, 'a'), Image(pixels * 0.5, 'b')), 0.25)

    def test_psnr(self):
        a = torch.zeros(1, 3, 4, 4)
        self.assertEqual(psnr(a, a), math.inf)
        self.assertAlmostEqual(psnr(a, torch.full_like(a, 0.1)), 20.0, places=6)

    def test_shape_mismatch(self):
        with self.assertRaises(InputError):
            pixel_l1(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5))


class SsimTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.a = rng.random((3, 10, 9))
        self.b = np.clip(self.a + rng.normal(0, 0.1, self.a.shape), 0, 1)

    def test_identical_images(self):
        self.assertAlmostEqual(ssim(self.a, self.a), 1.0, places=12)

    def test_negative_is_dissimilar(self):
        self.assertLess(ssim(self.a, 1.0 - self.a), 1.0)

    def test_matches_windowed_reference(self):
        self.assertAlmostEqual(ssim(self.a, self.b), reference_ssim(self.a, self.b), delta=1e-6)

    def test_per_image_values(self):
        batch_a = np.stack([self.a, self.a])
        batch_b = np.stack([self.a, self.b])
        values = ssim_per_image(batch_a, batch_b)
        self.assertAlmostEqual(values[0], 1.0, places=12)
        self.assertAlmostEqual(values[1], reference_ssim(self.a, self.b), delta=1e-6)

    def test_window_larger_than_image(self):
        with self.assertRaises(InputError):
            ssim(np.zeros((3, 5, 5)), np.zeros((3, 5, 5)))


class EvaluationTests(SimpleTestCase):

    def setUp(self):
        self.cfg = tiny_config()
        self.base = tiny_base(self.cfg)
        self.model = tiny_model(self.cfg, self.base).eval()
        self.images = tiny_suite(self.cfg)

    def test_fixed_tokens(self):
        reports = eval_fixed_tokens(self.model, self.base, self.images, (2, 4), batch_size=3)
        self.assertEqual(sorted(reports), [2, 4])
        for t, report in reports.items():
            self.assertEqual(report.tokens_used, t)
            self.assertEqual(report.n_images, len(self.images))
            self.assertEqual(report.runs, (1.0, 1.0))
            self.assertGreaterEqual(report.l1_x10, 0.0)
            self.assertLessEqual(report.ssim, 1.0)
        self.assertEqual(reports[2].as_dict()['label'], 2)

    def test_fixed_tokens_decode_prefixes_of_one_encoding(self):
        self.model.run_counts.clear()
        reports = eval_fixed_tokens(self.model, self.base, self.images, (2, 4))
        n = len(self.images)
        self.assertEqual(dict(self.model.run_counts), {'encoder': n, 'decoder': 2 * n})
        self.assertEqual(reports[2].runs, (1.0, 1.0))

        batch = stack_images(self.images).to(next(self.model.parameters()).dtype)
        z, _ = encode(self.model, encode2d(self.base, batch), self.cfg.t_max, self.model.loss_table.condition(0))
        z, _ = quantize(self.model, z)
        for t in (2, 4):
            recon = decode2d(self.base, decode(self.model, z.with_active(z.prefix_mask([t] * n))))
            expected = 10.0 * per_image_l1(recon.double(), batch.double()).mean().item()
            self.assertAlmostEqual(reports[t].l1_x10, expected, places=5)

    def test_variable_tokens_rejects_extra_passes(self):
        def twice(*args, **kwargs):
            reconstruct(*args, **kwargs)
            return reconstruct(*args, **kwargs)

        with mock.patch('karl.metrics.reconstruct', side_effect=twice):
            with self.assertRaises(EvaluationError):
                eval_variable_tokens(self.model, self.base, self.images, (0.05,))

    def test_fixed_tokens_outside_grid(self):
        with self.assertRaises(InputError):
            eval_fixed_tokens(self.model, self.base, self.images, (3,))

    def test_variable_tokens(self):
        reports = eval_variable_tokens(self.model, self.base, self.images, (0.03, 0.09), batch_size=4)
        for report in reports.values():
            self.assertEqual(report.runs, (1.0, 1.0))
            self.assertTrue(1 <= report.tokens_used <= self.cfg.t_max)
            self.assertEqual(report.n_images, len(self.images))

    def test_threshold_satisfaction(self):
        reports = threshold_satisfaction(self.model, self.base, self.images, (0.01, 0.05))
        for eps, report in reports.items():
            self.assertEqual(report.eps, eps)
            self.assertEqual(report.n_images, len(self.images))
            self.assertLessEqual(report.n_masked, len(self.images))
            self.assertTrue(report.is_nested())
            self.assertIn('exceed_0.00', report.as_dict())

    def test_threshold_report_nesting(self):
        self.assertTrue(ThresholdReport(0.05, {0.0: 0.5, 0.01: 0.2, 0.02: 0.2}).is_nested())
        self.assertFalse(ThresholdReport(0.05, {0.0: 0.1, 0.01: 0.2}).is_nested())

    def test_validation_l1(self):
        value = validation_l1(self.model, self.base, self.images, batch_size=4)
        self.assertTrue(0.0 <= value <= 1.0)

    def test_empty_dataset(self):
        with self.assertRaises(InputError):
            eval_fixed_tokens(self.model, self.base, [], (2,))
        with self.assertRaises(InputError):
            eval_variable_tokens(self.model, self.base, [], (0.05,))


class RecordInputTests(SimpleTestCase):

    def test_image_records_evaluate_from_numpy(self):
        cfg = tiny_config()
        base = tiny_base(cfg)
        model = tiny_model(cfg, base).eval()
        images = tiny_images(cfg, kind='checkerboard')
        reports = eval_fixed_tokens(model, base, images, (4,))
        self.assertEqual(reports[4].n_images, len(images))
        self.assertTrue(torch.isfinite(torch.tensor(reports[4].psnr)))
