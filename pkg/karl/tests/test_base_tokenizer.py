import torch
from django.test import SimpleTestCase

from karl.base_tokenizer import BaseTokenizer, decode2d, encode2d, fit_base, pixel_error
from karl.constants import DISCRETE
from karl.exceptions import ConfigError, InputError
from karl.types import Grid2D

from .factories import tiny_config, tiny_images


class EncodeDecodeTests(SimpleTestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.base = BaseTokenizer(channels=3, image_size=64, patch_size=8, base_dim=16, hidden=8).eval()

    def test_grid_shape(self):
        grid = encode2d(self.base, torch.rand(2, 3, 64, 64))
        self.assertEqual(tuple(grid.tokens.shape), (2, 64, 16))
        self.assertEqual(grid.size, 64)
        self.assertIsNone(grid.code_indices)

    def test_round_trip_shape_and_range(self):
        images = torch.rand(2, 3, 64, 64)
        with torch.no_grad():
            recon = decode2d(self.base, encode2d(self.base, images))
        self.assertEqual(recon.shape, images.shape)
        self.assertGreaterEqual(float(recon.min()), 0.0)
        self.assertLessEqual(float(recon.max()), 1.0)

    def test_identical_images_give_identical_grids(self):
        image = torch.rand(1, 3, 64, 64)
        a = encode2d(self.base, image)
        b = encode2d(self.base, image.clone())
        self.assertTrue(torch.equal(a.tokens, b.tokens))

    def test_zero_grid_decodes_to_valid_image(self):
        with torch.no_grad():
            recon = decode2d(self.base, Grid2D(tokens=torch.zeros(1, 64, 16)))
        self.assertTrue(bool(((recon >= 0) & (recon <= 1)).all()))

    def test_wrong_token_count(self):
        with self.assertRaises(InputError):
            decode2d(self.base, Grid2D(tokens=torch.zeros(1, 63, 16)))

    def test_wrong_image_shape(self):
        with self.assertRaises(InputError):
            encode2d(self.base, torch.rand(1, 3, 32, 32))

    def test_non_divisible_image(self):
        with self.assertRaises(ConfigError):
            BaseTokenizer(image_size=30, patch_size=4)

    def test_discrete_indices_in_range(self):
        base = BaseTokenizer(image_size=16, patch_size=4, base_dim=8, hidden=8, mode=DISCRETE, codebook_size=32)
        grid = encode2d(base, torch.rand(3, 3, 16, 16))
        self.assertEqual(tuple(grid.code_indices.shape), (3, 16))
        self.assertGreaterEqual(int(grid.code_indices.min()), 0)
        self.assertLess(int(grid.code_indices.max()), 32)
        torch.testing.assert_close(grid.tokens, base.codebook(grid.code_indices))

    def test_accepts_image_records(self):
        cfg = tiny_config()
        base = BaseTokenizer.from_config(cfg)
        grid = encode2d(base, tiny_images(cfg)[:3])
        self.assertEqual(tuple(grid.tokens.shape), (3, cfg.grid_size, cfg.base_dim))


class FitBaseTests(SimpleTestCase):

    def setUp(self):
        self.cfg = tiny_config(batch_size=4, base_lr=5e-3)
        self.images = tiny_images(self.cfg, kind='constant', size=22)

    def test_loss_decreases_on_constant_images(self):
        base = fit_base(self.images, self.cfg, epochs=5, seed=0)
        self.assertEqual(len(base.loss_history), 5)
        self.assertLess(base.loss_history[-1], base.loss_history[0])

    def test_round_trip_error_on_simple_images(self):
        cfg = tiny_config(batch_size=8, base_dim=8, base_hidden=32, base_lr=1e-2)
        images = tiny_images(cfg, kind='constant', size=16) + tiny_images(cfg, kind='gradient', size=16)
        base = fit_base(images, cfg, epochs=80, seed=0)
        self.assertLessEqual(pixel_error(base, images), 0.05)

    def test_returns_frozen_module(self):
        base = fit_base(self.images, self.cfg, epochs=1)
        self.assertFalse(base.training)
        self.assertFalse(any(p.requires_grad for p in base.parameters()))

    def test_same_seed_same_parameters(self):
        a = fit_base(self.images, self.cfg, epochs=2, seed=7).state_dict()
        b = fit_base(self.images, self.cfg, epochs=2, seed=7).state_dict()
        for key in a:
            self.assertTrue(torch.equal(a[key], b[key]), key)

    def test_discrete_mode_trains(self):
        cfg = tiny_config(batch_size=4, base_mode=DISCRETE, base_codebook_size=16)
        base = fit_base(self.images, cfg, epochs=1)
        self.assertEqual(base.codebook_size, 16)

    def test_empty_dataset(self):
        with self.assertRaises(InputError):
            fit_base([], self.cfg)
