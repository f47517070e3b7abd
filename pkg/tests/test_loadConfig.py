# tests/test_loadConfig.py
import os
import sys
import shutil
import tempfile
import unittest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigError
from src.loadConfig import (
    Hyperparams,
    apply_overrides,
    dump_config,
    load_config,
    load_config_text,
    parse_config_text,
)


class TestLoadConfig(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _write(self, text, name="run.cfg"):
        path = os.path.join(self.test_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_empty_file_gives_defaults(self):
        hp = load_config(self._write(""))
        self.assertEqual(hp, Hyperparams())
        self.assertEqual(hp.th_init, 1.25)
        self.assertEqual(hp.tau, 3.75)
        self.assertEqual(hp.s, 1.5)
        self.assertEqual(hp.current_decay, 0.75)
        self.assertEqual(hp.voltage_decay, 0.97)

    def test_no_path_gives_defaults(self):
        self.assertEqual(load_config(None), Hyperparams())

    def test_lr_th_zero_is_baseline(self):
        hp = load_config(self._write("lr_th = 0\n"))
        self.assertEqual(hp, Hyperparams(lr_th=0.0))
        self.assertTrue(hp.baseline)
        self.assertFalse(Hyperparams().baseline)

    def test_invalid_voltage_decay_names_key(self):
        path = self._write("voltage_decay = 1.2\n")
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertEqual(ctx.exception.key, "voltage_decay")
        self.assertIn("voltage_decay", str(ctx.exception))

    def test_comments_and_blank_lines(self):
        text = "# a comment\n\nth_init = 0.5   # trailing\n  epochs=3\n"
        hp = load_config(self._write(text))
        self.assertEqual(hp.th_init, 0.5)
        self.assertEqual(hp.epochs, 3)

    def test_malformed_line(self):
        with self.assertRaises(ConfigError):
            load_config(self._write("th_init 1.0\n"))

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write("threshold = 1.0\n"))
        self.assertEqual(ctx.exception.key, "threshold")

    def test_bad_value_type(self):
        with self.assertRaises(ConfigError):
            parse_config_text("epochs = many")
        with self.assertRaises(ConfigError):
            parse_config_text("epochs = 2.5")
        with self.assertRaises(ConfigError):
            parse_config_text("save_optimizer_state = maybe")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.test_dir, "missing.cfg"))

    def test_invariants(self):
        bad = {
            "current_decay": "1.0",
            "tau": "0",
            "s": "-1",
            "th_init": "0",
            "false_rate": "0.5",
            "time_steps": "0",
            "lr_w": "-0.1",
            "architecture": "34x34x2--10",
            "dtype": "float16",
            "dead_window": "sample",
            "synthetic_active": "21",
            "synthetic_rate": "0",
        }
        for key, value in bad.items():
            with self.subTest(key=key):
                with self.assertRaises(ConfigError) as ctx:
                    load_config(self._write(f"{key} = {value}\n"))
                self.assertEqual(ctx.exception.key, key)

    def test_th_clamp_min_optional(self):
        self.assertIsNone(load_config(self._write("th_clamp_min = none\n")).th_clamp_min)
        self.assertEqual(load_config(self._write("th_clamp_min = 0.1\n")).th_clamp_min, 0.1)

    def test_dump_then_load_is_identity(self):
        hp = Hyperparams(th_init=0.25, tau=3.0, s=3.0, lr_th=0.0, th_clamp_min=0.05,
                         architecture="20-16-2", save_optimizer_state=True)
        self.assertEqual(load_config_text(dump_config(hp)), hp)
        path = self._write(dump_config(hp))
        self.assertEqual(load_config(path), hp)

    def test_overrides(self):
        hp = apply_overrides(Hyperparams(), ["lr_th=0", "time_steps = 50", "architecture=20-16-2"])
        self.assertEqual(hp.lr_th, 0.0)
        self.assertEqual(hp.time_steps, 50)
        self.assertEqual(hp.architecture, "20-16-2")

    def test_override_errors(self):
        with self.assertRaises(ConfigError):
            apply_overrides(Hyperparams(), ["lr_th"])
        with self.assertRaises(ConfigError):
            apply_overrides(Hyperparams(), ["voltage_decay=1.2"])

    def test_shipped_configs(self):
        configs = os.path.join(os.path.dirname(__file__), '..', 'configs')
        for name in sorted(os.listdir(configs)):
            with self.subTest(name=name):
                load_config(os.path.join(configs, name))
        sparse = load_config(os.path.join(configs, "synthetic_high_threshold.cfg"))
        self.assertEqual((sparse.synthetic_active, sparse.batch_size), (1, 3))

    def test_replace_validates(self):
        self.assertEqual(Hyperparams().replace(th_init=2.0).th_init, 2.0)
        with self.assertRaises(ConfigError):
            Hyperparams().replace(tau=-1.0)


if __name__ == '__main__':
    unittest.main()
