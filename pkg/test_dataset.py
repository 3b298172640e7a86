import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt
import pandas as pd

from dataset import (
    FeatureVariant,
    SampleWindow,
    WindowSpec,
    build_windows,
    decode_predictions,
    encode,
    fit_normalizer,
    load_dataset,
    save_dataset,
    save_targets_csv,
    split,
    window_features,
)
from errors import ConfigurationError, DomainError
from geometry import Pose2, Vec2
from rdw_engine import TraceFrame


def synthetic_frames(n_ticks, users=1):
    """Physical x = 1 + 0.01 t (+ user), virtual x = 100 t so leads are easy to spot"""
    frames = []
    for t in range(n_ticks):
        for u in range(users):
            physical = Pose2(Vec2(1.0 + 0.01 * t + u, 2.0 + 0.02 * t), 0.0)
            virtual = Pose2(Vec2(100.0 * t, -50.0 * t + 1000.0 * u), 0.0)
            frames.append(TraceFrame(t, u, physical, virtual))
    return frames


def spaced_windows(n, user=0, gap=25, history=20, horizon=1):
    return [SampleWindow(inputs=np.zeros((history, 2)), target=np.zeros(2), user=user, t=history - 1 + gap * k,
                         variant=FeatureVariant.BASELINE, horizon=horizon,
                         physical_anchor=np.zeros(2), virtual_anchor=np.zeros(2))
            for k in range(n)]


class TestBuildWindows(unittest.TestCase):
    def test_counts(self):
        spec = WindowSpec(history_len=20, horizon=1, stride=1)
        self.assertEqual(len(build_windows(synthetic_frames(30), spec, FeatureVariant.BASELINE)), 10)
        two = build_windows(synthetic_frames(30, users=2), spec, FeatureVariant.BASELINE)
        self.assertEqual(len(two), 20)
        self.assertEqual(sorted({w.user for w in two}), [0, 1])

    def test_short_trace_gives_nothing(self):
        self.assertEqual(build_windows(synthetic_frames(20), WindowSpec(), FeatureVariant.VIRTUAL), [])

    def test_dimensions(self):
        frames = synthetic_frames(30)
        baseline = build_windows(frames, WindowSpec(), FeatureVariant.BASELINE)
        virtual = build_windows(frames, WindowSpec(), FeatureVariant.VIRTUAL)
        self.assertEqual(baseline[0].inputs.shape, (20, 2))
        self.assertEqual(virtual[0].inputs.shape, (20, 4))

    def test_virtual_lead_alignment(self):
        frames = synthetic_frames(40, users=2)
        lookup = {(f.user, f.tick): f for f in frames}
        for w in build_windows(frames, WindowSpec(history_len=5, horizon=2, stride=3), FeatureVariant.VIRTUAL):
            for k, row in enumerate(w.inputs):
                tick = w.t - len(w.inputs) + 1 + k
                p, v = lookup[(w.user, tick)].physical.position, lookup[(w.user, tick + 1)].virtual.position
                npt.assert_array_equal(row, [p.x, p.y, v.x, v.y])
            target = lookup[(w.user, w.t + 2)].physical.position
            npt.assert_array_equal(w.target, [target.x, target.y])

    def test_stride(self):
        windows = build_windows(synthetic_frames(40), WindowSpec(history_len=5, horizon=1, stride=4),
                                FeatureVariant.BASELINE)
        self.assertEqual([w.t for w in windows], [4, 8, 12, 16, 20, 24, 28, 32, 36])

    def test_invalid_spec(self):
        with self.assertRaises(ConfigurationError):
            build_windows(synthetic_frames(30), WindowSpec(history_len=1), FeatureVariant.BASELINE)


class TestNormalizer(unittest.TestCase):
    def test_room_absolute(self):
        windows = build_windows(synthetic_frames(30), WindowSpec(frame="absolute"), FeatureVariant.BASELINE)
        normalizer = fit_normalizer(windows, mode="room", frame="absolute", room_side=7.5)
        npt.assert_allclose(normalizer.normalize(np.array([3.75, 3.75])), [0.5, 0.5])

    def test_round_trip(self):
        windows = build_windows(synthetic_frames(60), WindowSpec(), FeatureVariant.VIRTUAL)
        for mode in ("room", "minmax"):
            normalizer = fit_normalizer(windows, mode=mode)
            p = np.array([[1.234, 6.5], [0.0, 7.5]])
            npt.assert_allclose(normalizer.denormalize(normalizer.normalize(p)), p, atol=1e-12)

    def test_minmax_degenerate_axis(self):
        frames = [TraceFrame(t, 0, Pose2(Vec2(1.0 + 0.01 * t, 2.0), 0.0), Pose2(Vec2(0.1 * t, 0.0), 0.0))
                  for t in range(30)]
        windows = build_windows(frames, WindowSpec(frame="absolute"), FeatureVariant.BASELINE)
        with self.assertLogs("dataset", level="WARNING"):
            normalizer = fit_normalizer(windows, mode="minmax", frame="absolute")
        self.assertEqual(normalizer.scale[1], 1.0)
        self.assertEqual(normalizer.offset[1], 0.0)

    def test_empty(self):
        with self.assertRaises(DomainError):
            fit_normalizer([])

    def test_encode_decode(self):
        windows = build_windows(synthetic_frames(40, users=2), WindowSpec(), FeatureVariant.VIRTUAL)
        normalizer = fit_normalizer(windows, mode="minmax")
        x, y = encode(windows, normalizer)
        self.assertEqual(x.shape, (len(windows), 20, 4))
        self.assertTrue(np.all(x >= -1e-12) and np.all(x <= 1 + 1e-12))
        decoded = decode_predictions(y, windows, normalizer)
        npt.assert_allclose(decoded, np.stack([w.target for w in windows]), atol=1e-12)

    def test_relative_frame_anchors(self):
        windows = build_windows(synthetic_frames(30), WindowSpec(), FeatureVariant.VIRTUAL)
        inputs, target = window_features(windows[0], "relative")
        npt.assert_allclose(inputs[-1, :2], [0.0, 0.0], atol=1e-15)
        npt.assert_allclose(inputs[-1, 2:], [100.0, -50.0])
        npt.assert_allclose(target, [0.01, 0.02], atol=1e-12)


class TestSplit(unittest.TestCase):
    def test_fraction(self):
        parts = split(spaced_windows(100), 0.8)
        self.assertEqual((len(parts.train), len(parts.test), parts.dropped), (80, 20, 0))
        self.assertLess(max(w.t for w in parts.train), min(w.t for w in parts.test))

    def test_per_user_chronology(self):
        windows = spaced_windows(10, user=0) + spaced_windows(10, user=1)
        parts = split(list(reversed(windows)), 0.5)
        for user in (0, 1):
            train_t = [w.t for w in parts.train if w.user == user]
            test_t = [w.t for w in parts.test if w.user == user]
            self.assertLess(max(train_t), min(test_t))

    def test_boundary_windows_dropped(self):
        frames = synthetic_frames(300)
        windows = build_windows(frames, WindowSpec(history_len=20, horizon=1), FeatureVariant.BASELINE)
        parts = split(windows, 0.8)
        self.assertEqual(parts.dropped, 20)
        last_train = max(w.t for w in parts.train)
        for w in parts.test:
            self.assertGreater(w.t - 19, last_train + 1)

    def test_empty_side(self):
        with self.assertRaises(ConfigurationError):
            split(spaced_windows(3), 0.2)
        with self.assertRaises(ConfigurationError):
            split(spaced_windows(10), 1.0)
        with self.assertRaises(DomainError):
            split([], 0.5)


class TestExport(unittest.TestCase):
    def test_dataset_and_targets(self):
        windows = build_windows(synthetic_frames(30, users=2), WindowSpec(), FeatureVariant.VIRTUAL)
        normalizer = fit_normalizer(windows)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "dataset.json")
            save_dataset(path, windows, WindowSpec(), FeatureVariant.VIRTUAL, normalizer)
            loaded, spec, variant, loaded_normalizer = load_dataset(path)
            csv_path = os.path.join(tmp, "targets.csv")
            save_targets_csv(csv_path, windows)
            table = pd.read_csv(csv_path)
        self.assertEqual(spec, WindowSpec())
        self.assertIs(variant, FeatureVariant.VIRTUAL)
        npt.assert_array_equal(loaded_normalizer.scale, normalizer.scale)
        self.assertEqual(len(loaded), len(windows))
        npt.assert_array_equal(loaded[3].inputs, windows[3].inputs)
        self.assertEqual(list(table.columns), ["user", "t", "target_x", "target_y"])
        self.assertEqual(len(table), len(windows))


if __name__ == "__main__":
    unittest.main()
