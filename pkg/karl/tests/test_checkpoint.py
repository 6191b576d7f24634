import tempfile
from pathlib import Path

import torch
from django.test import SimpleTestCase

from karl.checkpoint import load_base, load_karl, read_checkpoint, save_base, save_karl
from karl.exceptions import CheckpointMismatch

from .factories import tiny_base, tiny_config, tiny_model


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.cfg = tiny_config()
        self.base = tiny_base(self.cfg)
        self.base.loss_history = [0.5, 0.25]

    def tearDown(self):
        self.tmp.cleanup()

    def assertSameState(self, a, b):
        sa, sb = a.state_dict(), b.state_dict()
        self.assertEqual(set(sa), set(sb))
        for key in sa:
            self.assertTrue(torch.equal(sa[key].cpu(), sb[key].cpu()), key)

    def test_base_round_trip(self):
        path = save_base(self.root / 'base.ckpt', self.base, self.cfg)
        loaded = load_base(path, self.cfg)
        self.assertSameState(self.base, loaded)
        self.assertEqual(loaded.loss_history, [0.5, 0.25])
        self.assertFalse(loaded.training)
        self.assertFalse(any(p.requires_grad for p in loaded.parameters()))

    def test_base_survives_unrelated_config_change(self):
        path = save_base(self.root / 'base.ckpt', self.base, self.cfg)
        load_base(path, self.cfg.replace(codebook_size=16, threshold=0.5))

    def test_karl_round_trip_and_threshold(self):
        model = tiny_model(self.cfg, self.base)
        path = save_karl(self.root / 'karl.ckpt', model, self.cfg, metrics=[{'stage': 1}])
        loaded = load_karl(path, self.cfg.replace(threshold=0.6), self.base)
        self.assertSameState(model, loaded)
        self.assertEqual(loaded.threshold, 0.6)
        self.assertEqual(read_checkpoint(path, 'karl', self.cfg.model_digest)['extra']['metrics'], [{'stage': 1}])

    def test_digest_mismatch(self):
        path = save_karl(self.root / 'karl.ckpt', tiny_model(self.cfg, self.base), self.cfg)
        with self.assertRaisesMessage(CheckpointMismatch, 'digest'):
            load_karl(path, self.cfg.replace(codebook_size=16), self.base)

    def test_kind_mismatch(self):
        path = save_base(self.root / 'base.ckpt', self.base, self.cfg)
        with self.assertRaises(CheckpointMismatch):
            read_checkpoint(path, 'karl', self.cfg.base_digest)

    def test_version_mismatch(self):
        path = self.root / 'old.ckpt'
        torch.save({'format_version': 0, 'kind': 'base', 'digest': self.cfg.base_digest}, path)
        with self.assertRaisesMessage(CheckpointMismatch, 'format version'):
            load_base(path, self.cfg)

    def test_missing_and_unreadable(self):
        with self.assertRaises(CheckpointMismatch):
            load_base(self.root / 'missing.ckpt', self.cfg)
        garbage = self.root / 'garbage.ckpt'
        garbage.write_bytes(b'not a checkpoint')
        with self.assertRaises(CheckpointMismatch):
            load_base(garbage, self.cfg)
