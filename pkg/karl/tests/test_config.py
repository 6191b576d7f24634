import os
import tempfile
from pathlib import Path
from unittest import mock

from django.test import SimpleTestCase, override_settings

from karl.config import TrainConfig, load_config
from karl.constants import DEFAULT_LOSS_TABLE
from karl.exceptions import ConfigError

from .factories import tiny_config, write_config


class LoadConfigTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_reads_values_and_lists(self):
        path = write_config(self.root / 'exp.env', image_size=16, patch_size=4, t_max=32, budget_step=8,
                            loss_table='0.0,0.1,0.2', synthetic_kinds='constant,noise', mode_1d='continuous')
        cfg = load_config(path)
        self.assertEqual(cfg.image_size, 16)
        self.assertEqual(cfg.grid_size, 16)
        self.assertEqual(cfg.budget_grid, (8, 16, 24, 32))
        self.assertEqual(cfg.loss_table, (0.0, 0.1, 0.2))
        self.assertEqual(cfg.synthetic_kinds, ('constant', 'noise'))
        self.assertEqual(cfg.mode_1d, 'continuous')

    def test_defaults(self):
        cfg = load_config(write_config(self.root / 'empty.env', seed=3))
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.loss_table, DEFAULT_LOSS_TABLE)
        self.assertEqual(cfg.threshold, 0.75)
        self.assertEqual(cfg.budget_grid, (16, 32, 48, 64))

    def test_overrides_win(self):
        cfg = load_config(write_config(self.root / 'exp.env', seed=3), seed=9)
        self.assertEqual(cfg.seed, 9)

    def test_environment_does_not_override_file(self):
        path = write_config(self.root / 'exp.env', seed=3)
        with mock.patch.dict(os.environ, {'seed': '99', 'lr': '0.5'}):
            cfg = load_config(path)
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.lr, TrainConfig().lr)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.root / 'nope.env')

    def test_unknown_key(self):
        with self.assertRaisesMessage(ConfigError, 'colour'):
            load_config(write_config(self.root / 'exp.env', colour='red'))

    def test_unparsable_value(self):
        with self.assertRaises(ConfigError):
            load_config(write_config(self.root / 'exp.env', batch_size='many'))

    def test_round_trip_through_file(self):
        cfg = tiny_config(loss_table=(0.0, 0.05, 0.3), threshold=0.6)
        path = cfg.to_file(self.root / 'out' / 'config.env')
        self.assertEqual(load_config(path), cfg)


class ValidationTests(SimpleTestCase):

    def test_rejects_non_divisible_image(self):
        with self.assertRaises(ConfigError):
            TrainConfig(image_size=30, patch_size=4)

    def test_rejects_unknown_mode(self):
        with self.assertRaises(ConfigError):
            TrainConfig(base_mode='fuzzy')

    def test_rejects_empty_budget_grid(self):
        with self.assertRaises(ConfigError):
            TrainConfig(t_max=8, budget_step=16)

    def test_rejects_unsorted_loss_table(self):
        with self.assertRaises(ConfigError):
            TrainConfig(loss_table=(0.0, 0.2, 0.1))
        with self.assertRaises(ConfigError):
            TrainConfig(loss_table=(0.01, 0.2))

    def test_rejects_threshold_outside_unit_interval(self):
        for threshold in (0.0, 1.0, 1.5):
            with self.assertRaises(ConfigError):
                TrainConfig(threshold=threshold)

    def test_rejects_width_not_divisible_by_heads(self):
        with self.assertRaises(ConfigError):
            TrainConfig(encoder_width=30, heads=4)


class DigestTests(SimpleTestCase):

    def test_digest_tracks_model_fields(self):
        cfg = tiny_config()
        self.assertEqual(cfg.model_digest, tiny_config().model_digest)
        self.assertNotEqual(cfg.model_digest, tiny_config(codebook_size=16).model_digest)
        self.assertEqual(cfg.base_digest, tiny_config(codebook_size=16).base_digest)
        self.assertNotEqual(cfg.base_digest, tiny_config(base_dim=8).base_digest)

    def test_threshold_and_outputs_do_not_change_digest(self):
        cfg = tiny_config()
        self.assertEqual(cfg.model_digest, tiny_config(threshold=0.5, run_dir='/tmp/x').model_digest)

    def test_default_run_dir_uses_digest(self):
        with tempfile.TemporaryDirectory() as tmp, override_settings(KARL_RUNS_ROOT=Path(tmp)):
            cfg = tiny_config()
            self.assertEqual(cfg.resolved_run_dir(), Path(tmp) / f"tiny-{cfg.model_digest[:8]}")
            self.assertEqual(cfg.resolved_checkpoint().name, 'karl.ckpt')
            self.assertEqual(cfg.resolved_base_checkpoint().name, 'base.ckpt')
