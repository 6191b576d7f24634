import dataclasses
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image as PILImage
from scipy import stats

from karl.data import DatasetSpec, load_dataset, load_folder, make_loader, make_synthetic
from karl.exceptions import DataError, InputError

from .factories import tiny_config


class SyntheticSuiteTests(SimpleTestCase):

    def setUp(self):
        self.spec = DatasetSpec(resolution=16, size=8, seed=1)

    def test_constant_has_zero_variance(self):
        for img in make_synthetic('constant', self.spec):
            self.assertEqual(float(img.pixels.var()), 0.0)

    def test_checkerboard_has_two_values(self):
        for img in make_synthetic('checkerboard', self.spec):
            self.assertEqual(len(np.unique(img.pixels)), 2)

    def test_noise_is_uniform(self):
        spec = DatasetSpec(resolution=32, size=6, seed=0)
        pixels = np.concatenate([img.pixels.ravel() for img in make_synthetic('noise', spec)])
        self.assertGreaterEqual(pixels.size, 10_000)
        self.assertLess(stats.kstest(pixels, 'uniform').statistic, 0.05)

    def test_pixels_in_range_and_shape(self):
        for kind in ('constant', 'gradient', 'checkerboard', 'noise', 'mandelbrot'):
            for img in make_synthetic(kind, self.spec):
                self.assertEqual(img.pixels.shape, (16, 16, 3))
                self.assertGreaterEqual(img.pixels.min(), 0.0)
                self.assertLessEqual(img.pixels.max(), 1.0)

    def test_reproducible(self):
        first = [img.pixels for img in make_synthetic('mandelbrot', self.spec)]
        second = [img.pixels for img in make_synthetic('mandelbrot', self.spec)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_seed_changes_images(self):
        other = DatasetSpec(resolution=16, size=8, seed=2)
        a = next(make_synthetic('gradient', self.spec)).pixels
        b = next(make_synthetic('gradient', other)).pixels
        self.assertFalse(np.array_equal(a, b))

    def test_unknown_kind(self):
        with self.assertRaises(InputError):
            list(make_synthetic('spiral', self.spec))

    def test_splits_are_disjoint(self):
        cfg = tiny_config()
        train = load_dataset(DatasetSpec.from_config(cfg, 'train'))
        val = load_dataset(DatasetSpec.from_config(cfg, 'val'))
        self.assertFalse({img.id for img in train} & {img.id for img in val})
        self.assertEqual(len(val), 5)
        self.assertEqual(len(train), 25)
        self.assertEqual(train[0].family, 'constant')


class FolderTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        rng = np.random.default_rng(0)
        for index in range(10):
            array = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
            PILImage.fromarray(array).save(self.root / f"img{index:02d}.png")
        self.spec = DatasetSpec(source='folder', path=str(self.root), resolution=8, val_fraction=0.2)

    def tearDown(self):
        self.tmp.cleanup()

    def test_center_crop_resize_and_range(self):
        images = list(load_folder(self.root, self.spec))
        self.assertEqual(len(images), 8)
        for img in images:
            self.assertEqual(img.pixels.shape, (8, 8, 3))
            self.assertGreaterEqual(img.pixels.min(), 0.0)
            self.assertLessEqual(img.pixels.max(), 1.0)

    def test_split_is_stable_and_disjoint(self):
        val_spec = dataclasses.replace(self.spec, split='val')
        train = [img.id for img in load_folder(self.root, self.spec)]
        val = [img.id for img in load_folder(self.root, val_spec)]
        self.assertEqual(train, [img.id for img in load_folder(self.root, self.spec)])
        self.assertFalse(set(train) & set(val))
        self.assertEqual(len(train) + len(val), 10)

    def test_unreadable_file_is_skipped(self):
        (self.root / 'broken.png').write_bytes(b'not an image')
        all_train = dataclasses.replace(self.spec, val_fraction=0.0)
        with self.assertLogs('karl.data', level='WARNING') as logs:
            images = list(load_folder(self.root, all_train))
        self.assertEqual(len(images), 10)
        self.assertIn('broken.png', logs.output[0])

    def test_empty_or_missing_folder(self):
        with tempfile.TemporaryDirectory() as empty:
            with self.assertRaises(DataError):
                list(load_folder(empty, self.spec))
        with self.assertRaises(DataError):
            list(load_folder(self.root / 'missing', self.spec))


class LoaderTests(SimpleTestCase):

    def test_order_depends_on_seed_and_epoch_only(self):
        cfg = tiny_config()
        images = load_dataset(DatasetSpec.from_config(cfg, 'train'))

        def order(seed, epoch):
            return [i for _, ids in make_loader(images, 4, seed=seed, epoch=epoch) for i in ids]

        self.assertEqual(order(0, 0), order(0, 0))
        self.assertNotEqual(order(0, 0), order(0, 1))
        self.assertEqual(sorted(order(0, 0)), sorted(img.id for img in images))
