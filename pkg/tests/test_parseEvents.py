# tests/test_parseEvents.py
import os
import sys
import shutil
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import DataError
from src.loadConfig import Hyperparams
from src.parseEvents import (
    NEUTRAL_EVENT,
    NEUTRAL_HEADER,
    Event,
    EventStream,
    count_dataset_files,
    decode_neutral,
    encode_neutral,
    encode_nmnist,
    gen_synthetic,
    list_sample_files,
    load_dataset_dir,
    parse_nmnist,
    raster_to_stream,
    rasterize,
    read_neutral,
    split_synthetic,
    write_neutral,
)
from tests.mocks.mock_nmnist import write_mock_nmnist_tree


def nmnist_stream(events, label=3):
    x, y, p, t = (np.array(col, dtype=np.int64) for col in zip(*events)) if events else ([], [], [], [])
    return EventStream(34, 34, 2, label, x, y, p, t)


def hamming(a, b):
    return int(np.count_nonzero(a != b))


def raw_neutral(width, height, polarities, events, label=0):
    """Neutral-format bytes written field by field, without the encoder's checks."""
    header = NEUTRAL_HEADER.pack(b"REVT", 1, width, height, polarities, 0, label, len(events))
    body = np.zeros(len(events), dtype=NEUTRAL_EVENT)
    for i, (x, y, p, t) in enumerate(events):
        body[i] = (x, y, p, 0, t)
    return header + body.tobytes()


class TestParseNmnist(unittest.TestCase):

    def test_single_record(self):
        stream = parse_nmnist(bytes([0x01, 0x02, 0x80, 0x00, 0x0A]), label=4)
        self.assertEqual(stream.events, [Event(x=1, y=2, polarity=1, timestamp=10)])
        self.assertEqual(stream.label, 4)
        self.assertEqual(stream.geometry, (34, 34, 2))

    def test_empty(self):
        stream = parse_nmnist(b"", label=0)
        self.assertEqual(len(stream), 0)

    def test_bad_length(self):
        with self.assertRaises(DataError) as ctx:
            parse_nmnist(bytes(7), label=0)
        self.assertIn("length not divisible by 5", str(ctx.exception))

    def test_address_out_of_range(self):
        with self.assertRaises(DataError):
            parse_nmnist(bytes([34, 0, 0, 0, 1]), label=0)

    def test_23_bit_timestamp_and_off_polarity(self):
        stream = parse_nmnist(bytes([0x05, 0x06, 0x7F, 0xFF, 0xFF]), label=0)
        self.assertEqual(stream.events, [Event(5, 6, 0, (1 << 23) - 1)])

    def test_sorted_by_timestamp(self):
        data = bytes([0, 0, 0, 0, 50]) + bytes([1, 1, 0, 0, 20]) + bytes([2, 2, 0x80, 0, 20])
        stream = parse_nmnist(data, label=0)
        self.assertEqual(list(stream.t), [20, 20, 50])
        # stable for equal timestamps
        self.assertEqual(list(stream.x), [1, 2, 0])

    def test_encode_round_trip(self):
        stream = nmnist_stream([(0, 0, 0, 5), (33, 33, 1, 70000), (10, 20, 1, 70000)])
        self.assertEqual(parse_nmnist(encode_nmnist(stream), label=3), stream)


class TestNeutralFormat(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.stream = nmnist_stream([(1, 2, 1, 10), (3, 4, 0, 2500), (33, 0, 1, 299000)], label=7)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_round_trip(self):
        self.assertEqual(decode_neutral(encode_neutral(self.stream)), self.stream)

    def test_file_round_trip(self):
        path = write_neutral(self.stream, os.path.join(self.test_dir, "a", "sample.revt"))
        self.assertEqual(read_neutral(path), self.stream)

    def test_empty_stream(self):
        empty = nmnist_stream([], label=2)
        self.assertEqual(decode_neutral(encode_neutral(empty)), empty)

    def test_bad_magic(self):
        data = b"XXXX" + encode_neutral(self.stream)[4:]
        with self.assertRaises(DataError) as ctx:
            decode_neutral(data)
        self.assertIn("bad magic", str(ctx.exception))

    def test_version_mismatch(self):
        data = bytearray(encode_neutral(self.stream))
        data[4] = 9
        with self.assertRaises(DataError) as ctx:
            decode_neutral(bytes(data))
        self.assertIn("version mismatch", str(ctx.exception))

    def test_truncated(self):
        data = encode_neutral(self.stream)
        with self.assertRaises(DataError):
            decode_neutral(data[:-1])
        with self.assertRaises(DataError):
            decode_neutral(data[:NEUTRAL_HEADER.size - 2])

    def test_rejects_events_outside_geometry(self):
        bad = EventStream(4, 4, 1, 0, [5], [0], [0], [1])
        with self.assertRaises(DataError):
            encode_neutral(bad)

    def test_decode_rejects_address_outside_geometry(self):
        # x=5 on a 4-wide sensor would land on pixel (1, 1) after flattening
        data = raw_neutral(4, 4, 1, [(5, 0, 0, 1)])
        with self.assertRaises(DataError) as ctx:
            decode_neutral(data)
        self.assertIn("x out of range", str(ctx.exception))

    def test_decode_rejects_unsorted_timestamps(self):
        data = raw_neutral(4, 4, 1, [(0, 0, 0, 50), (1, 1, 0, 10)])
        with self.assertRaises(DataError) as ctx:
            decode_neutral(data)
        self.assertIn("not sorted", str(ctx.exception))

    def test_read_neutral_names_bad_file(self):
        path = os.path.join(self.test_dir, "bad.revt")
        with open(path, "wb") as f:
            f.write(raw_neutral(4, 4, 1, [(0, 0, 3, 1)]))
        with self.assertRaises(DataError) as ctx:
            read_neutral(path)
        self.assertIn("bad.revt", str(ctx.exception))

    def test_format_transparency(self):
        data = encode_nmnist(self.stream)
        direct = rasterize(parse_nmnist(data, 7), T=300, bin_width=1000)
        path = write_neutral(parse_nmnist(data, 7), os.path.join(self.test_dir, "s.revt"))
        via_neutral = rasterize(read_neutral(path), T=300, bin_width=1000)
        np.testing.assert_array_equal(direct, via_neutral)


class TestRasterize(unittest.TestCase):

    def test_single_event_first_bin(self):
        stream = nmnist_stream([(1, 2, 1, 10)])
        raster = rasterize(stream, T=300, bin_width=1000)
        self.assertEqual(raster.shape, (2312, 300))
        self.assertEqual(raster.dtype, np.uint8)
        index = 1 * 34 * 34 + 2 * 34 + 1
        self.assertEqual(raster[index, 0], 1)
        self.assertEqual(int(raster.sum()), 1)

    def test_same_bin_collapses(self):
        stream = nmnist_stream([(1, 2, 1, 10), (1, 2, 1, 900)])
        raster = rasterize(stream, T=300, bin_width=1000)
        self.assertEqual(int(raster.sum()), 1)

    def test_late_event_dropped(self):
        stream = nmnist_stream([(1, 2, 1, 400000)])
        raster = rasterize(stream, T=300, bin_width=1000)
        self.assertFalse(raster.any())

    def test_invalid_arguments(self):
        stream = nmnist_stream([])
        with self.assertRaises(ValueError):
            rasterize(stream, T=0, bin_width=1000)
        with self.assertRaises(ValueError):
            rasterize(stream, T=10, bin_width=0)

    def test_raster_to_stream_round_trip(self):
        raster = (np.random.default_rng(0).random((12, 9)) < 0.3).astype(np.uint8)
        stream = raster_to_stream(raster, label=1, bin_width=1000)
        np.testing.assert_array_equal(rasterize(stream, T=9, bin_width=1000), raster)


class TestSynthetic(unittest.TestCase):

    def test_deterministic(self):
        a = gen_synthetic(2, 20, 50, 0.0, 7)
        b = gen_synthetic(2, 20, 50, 0.0, 7)
        self.assertEqual(len(a), len(b))
        for (ra, la), (rb, lb) in zip(a, b):
            self.assertEqual(la, lb)
            np.testing.assert_array_equal(ra, rb)

    def test_noiseless_samples_equal_template(self):
        samples = gen_synthetic(2, 20, 50, 0.0, 7, samples_per_class=5)
        for label in (0, 1):
            rasters = [r for r, l in samples if l == label]
            self.assertEqual(len(rasters), 5)
            for raster in rasters[1:]:
                np.testing.assert_array_equal(raster, rasters[0])
        # each template: half the neurons active, 5 spikes each
        self.assertEqual(int(samples[0][0].sum()), 10 * 5)

    def test_sparse_template(self):
        samples = gen_synthetic(2, 20, 50, 0.0, 7, samples_per_class=3, rate=0.02, active=1)
        for raster, _ in samples:
            # one input neuron, one spike
            self.assertEqual(int(raster.sum()), 1)
            self.assertEqual(int(raster.any(axis=1).sum()), 1)
        with self.assertRaises(ValueError):
            gen_synthetic(2, 20, 50, 0.0, 7, active=21)

    def test_classes_are_separable(self):
        samples = gen_synthetic(2, 20, 50, 0.1, 7, samples_per_class=20)
        intra, inter = [], []
        for i in range(len(samples)):
            for j in range(i + 1, len(samples)):
                (a, la), (b, lb) = samples[i], samples[j]
                (intra if la == lb else inter).append(hamming(a, b))
        self.assertGreater(np.mean(inter), np.mean(intra))

    def test_seed_changes_dataset(self):
        a = gen_synthetic(2, 20, 50, 0.1, 7, samples_per_class=2)
        b = gen_synthetic(2, 20, 50, 0.1, 8, samples_per_class=2)
        self.assertFalse(all(np.array_equal(x[0], y[0]) for x, y in zip(a, b)))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            gen_synthetic(1, 20, 50, 0.1, 7)
        with self.assertRaises(ValueError):
            gen_synthetic(5, 3, 50, 0.1, 7)

    def test_split(self):
        samples = gen_synthetic(3, 12, 20, 0.1, 7, samples_per_class=5)
        train, test = split_synthetic(samples, 3)
        self.assertEqual(len(train), 9)
        self.assertEqual(len(test), 6)
        self.assertEqual(sorted(l for _, l in test), [0, 0, 1, 1, 2, 2])


class TestDatasetDirectory(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.hp = Hyperparams(time_steps=50, bin_width=1000)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_nmnist_tree(self):
        write_mock_nmnist_tree(self.test_dir, classes=3, per_class=2)
        self.assertEqual(count_dataset_files(self.test_dir), {"train": 6, "test": 6})

        samples = load_dataset_dir(self.test_dir, "train", self.hp, show_progress=False)
        self.assertEqual(len(samples), 6)
        self.assertEqual(sorted(l for _, l in samples), [0, 0, 1, 1, 2, 2])
        for raster, _ in samples:
            self.assertEqual(raster.shape, (2312, 50))

    def test_threaded_load_matches_serial(self):
        write_mock_nmnist_tree(self.test_dir, classes=2, per_class=3)
        serial = load_dataset_dir(self.test_dir, "test", self.hp, show_progress=False)
        threaded = load_dataset_dir(self.test_dir, "test", self.hp, workers=3, show_progress=False)
        for (a, la), (b, lb) in zip(serial, threaded):
            self.assertEqual(la, lb)
            np.testing.assert_array_equal(a, b)

    def test_subset(self):
        write_mock_nmnist_tree(self.test_dir, classes=2, per_class=4)
        samples = load_dataset_dir(self.test_dir, "train", self.hp, max_samples=3, show_progress=False)
        self.assertEqual(len(samples), 3)

    def test_missing_split(self):
        with self.assertRaises(DataError):
            list_sample_files(self.test_dir, "train")

    def test_negative_label_directory(self):
        write_neutral(nmnist_stream([(1, 1, 0, 5)], label=0),
                      os.path.join(self.test_dir, "train", "-1", "00000.revt"))
        with self.assertRaises(DataError) as ctx:
            list_sample_files(self.test_dir, "train")
        self.assertIn("negative class label", str(ctx.exception))

    def test_corrupt_file(self):
        write_mock_nmnist_tree(self.test_dir, classes=1, per_class=1)
        path, _ = list_sample_files(self.test_dir, "train")[0]
        with open(path, "ab") as f:
            f.write(b"\x00\x00")
        with self.assertRaises(DataError):
            load_dataset_dir(self.test_dir, "train", self.hp, show_progress=False)


if __name__ == '__main__':
    unittest.main()
