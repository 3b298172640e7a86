import math
import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from errors import ConfigurationError, DomainError
from geometry import Vec2
from virtual_motion import (
    VirtualMotionConfig,
    VirtualTrajectory,
    displacement,
    generate,
    generate_all,
    load_csv,
    save_csv,
)


class TestGenerate(unittest.TestCase):
    def test_frame_count(self):
        traj = generate(VirtualMotionConfig(seed=3, duration=3600.0, tick_rate=10.0), 0)
        self.assertEqual(len(traj), 36000)
        self.assertEqual(len(traj.frames), 36000)

    def test_deterministic(self):
        cfg = VirtualMotionConfig(seed=5, duration=60.0)
        a, b = generate(cfg, 1), generate(cfg, 1)
        npt.assert_array_equal(a.positions, b.positions)
        npt.assert_array_equal(a.headings, b.headings)

    def test_users_have_independent_streams(self):
        cfg = VirtualMotionConfig(seed=5, duration=60.0)
        two, three = generate_all(cfg, 2), generate_all(cfg, 3)
        for k in range(2):
            npt.assert_array_equal(two[k].positions, three[k].positions)
        self.assertFalse(np.allclose(three[0].positions, three[1].positions))

    def test_stationary_when_speed_zero(self):
        traj = generate(VirtualMotionConfig(seed=1, duration=20.0, mean_speed=0.0), 0)
        npt.assert_array_equal(traj.positions, np.zeros_like(traj.positions))

    def test_bounded_speed_and_threshold_gap(self):
        cfg = VirtualMotionConfig(seed=9, duration=300.0)
        traj = generate(cfg, 0)
        speeds = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1) * cfg.tick_rate
        self.assertTrue(np.all(speeds <= 3.0 * cfg.mean_speed + 1e-12))
        moving = speeds[speeds > 0]
        self.assertTrue(np.all(moving > 0.1))
        self.assertGreater(np.count_nonzero(speeds == 0), 0)

    def test_headings_in_range(self):
        traj = generate(VirtualMotionConfig(seed=2, duration=600.0), 0)
        self.assertTrue(np.all(traj.headings >= -math.pi))
        self.assertTrue(np.all(traj.headings < math.pi))

    def test_invalid_config(self):
        with self.assertRaises(ConfigurationError):
            generate(VirtualMotionConfig(tick_rate=0.0), 0)
        problems = VirtualMotionConfig(duration=-1.0, mean_speed=-1.0).violations()
        self.assertEqual(len(problems), 2)


class TestDisplacement(unittest.TestCase):
    def setUp(self):
        positions = np.array([[0.0, 0.0], [0.1, 0.0], [0.1, 0.0]])
        self.traj = VirtualTrajectory(positions=positions, headings=np.zeros(3), tick_rate=10.0)

    def test_values(self):
        d = displacement(self.traj, 0)
        self.assertAlmostEqual(d.x, 0.1)
        self.assertAlmostEqual(d.y, 0.0)
        self.assertEqual(displacement(self.traj, 1), Vec2(0.0, 0.0))

    def test_last_valid_index(self):
        displacement(self.traj, len(self.traj) - 2)
        with self.assertRaises(DomainError):
            displacement(self.traj, len(self.traj) - 1)
        with self.assertRaises(DomainError):
            displacement(self.traj, -1)


class TestCsv(unittest.TestCase):
    def test_save_and_load(self):
        traj = generate(VirtualMotionConfig(seed=4, duration=10.0), 0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "user0.csv")
            save_csv(traj, path)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), "tick,x,y,heading")
            loaded = load_csv(path, traj.tick_rate)
        self.assertEqual(len(loaded), len(traj))
        npt.assert_allclose(loaded.positions, traj.positions, rtol=1e-8, atol=1e-8)


if __name__ == "__main__":
    unittest.main()
