"""Synthetic scenarios, the portable PRNG and export round trips."""

import hashlib
import math

import numpy as np
import pytest

from dmtrack import synth
from dmtrack.errors import DataError
from dmtrack.prng import SplitMix64, derive_seed, fnv1a64
from dmtrack.synth import MotionScenario, ObjectProgram, Segment


def single_object(segments, num_frames, **kw):
    obj = ObjectProgram(x=640.0, y=360.0, heading=0.3, speed=5.0, height=20.0, aspect=1.0, segments=segments)
    for k, v in kw.items():
        setattr(obj, k, v)
    return obj


def noise_free(objects, num_frames):
    return MotionScenario(num_frames=num_frames, objects=objects, sigma_det=0.0, p_miss=0.0, fp_rate=0.0, seed=3)


class TestPrng:
    def test_reference_stream(self):
        r = SplitMix64(0)
        assert [r.next_u64() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_fnv1a_reference(self):
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C

    def test_uniform_range_and_resolution(self):
        r = SplitMix64(7)
        u = [r.uniform() for _ in range(10_000)]
        assert min(u) >= 0.0 and max(u) < 1.0
        assert abs(np.mean(u) - 0.5) < 0.01

    def test_normal_moments(self):
        r = SplitMix64(11)
        z = np.array([r.normal() for _ in range(20_000)])
        assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03

    def test_poisson_mean(self):
        r = SplitMix64(5)
        assert abs(np.mean([r.poisson(2.0) for _ in range(20_000)]) - 2.0) < 0.05

    def test_integer_inclusive(self):
        r = SplitMix64(1)
        assert set(r.integer(3, 5) for _ in range(1000)) == {3, 4, 5}

    def test_derived_streams_differ(self):
        assert derive_seed(0, "synth.detections") != derive_seed(0, "train.shuffle")
        assert derive_seed(0, "x") != derive_seed(1, "x")
        assert derive_seed(42, "x") == derive_seed(42, "x")


class TestGenerate:
    def test_noise_free_limit(self):
        sc = synth.make_scenario("linear", 4, sigma_det=0.0, p_miss=0.0, fp_rate=0.0)
        seq = synth.generate(sc)
        np.testing.assert_array_equal(seq.detections[:, :5], seq.gt[:, [0, 2, 3, 4, 5]])
        assert np.all(seq.det_source == seq.gt[:, 1])

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            synth.export(synth.generate(synth.make_scenario("uav-mix", 9)), tmp_path / name)
        for f in ("gt.txt", "det.txt", "scenario.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_different_seed_differs(self):
        a = synth.generate(synth.make_scenario("turns", 1)).gt
        b = synth.generate(synth.make_scenario("turns", 2)).gt
        assert a.shape != b.shape or not np.array_equal(a, b)

    def test_miss_rate_concentration(self):
        objs = [single_object([Segment("cv", 1000)], 1000, heading=0.0, speed=0.0) for _ in range(10)]
        sc = MotionScenario(num_frames=1000, objects=objs, sigma_det=1.0, p_miss=0.3, fp_rate=0.0, seed=17)
        seq = synth.generate(sc)
        assert len(seq.gt) == 10_000
        miss = 1 - len(seq.detections) / len(seq.gt)
        assert abs(miss - 0.3) <= 0.02

    def test_confidence_ranges(self):
        seq = synth.generate(synth.make_scenario("crowd", 2, fp_rate=3.0))
        conf, src = seq.detections[:, 5], seq.det_source
        assert np.all((conf[src > 0] >= 0.7) & (conf[src > 0] <= 1.0))
        assert np.all((conf[src < 0] >= 0.1) & (conf[src < 0] <= 0.5))
        assert np.any(src < 0)

    def test_detections_trace_to_ground_truth(self):
        seq = synth.generate(synth.make_scenario("uav-mix", 5))
        gt_keys = {(int(f), int(i)) for f, i in seq.gt[:, :2]}
        for row, src in zip(seq.detections, seq.det_source):
            assert src == -1 or (int(row[0]), int(src)) in gt_keys

    def test_zero_frames_rejected(self):
        with pytest.raises(DataError):
            synth.generate(MotionScenario(num_frames=0))

    def test_segment_sum_checked(self):
        with pytest.raises(DataError, match="sum"):
            synth.generate(noise_free([single_object([Segment("cv", 5)], 10)], 10))

    def test_unknown_preset_lists_valid(self):
        with pytest.raises(DataError, match="uav-mix"):
            synth.make_scenario("city", 0)


class TestMotion:
    def test_turn_segment_is_circular_arc(self):
        obj = single_object([Segment("cv", 5), Segment("turn", 40, math.radians(6)), Segment("cv", 5)], 50)
        traj = synth.integrate(obj, 50, 1280, 720, 12.0)
        step = np.diff(traj[5:45, :2], axis=0)
        speed = np.hypot(step[:, 0], step[:, 1])
        assert np.ptp(speed) <= 1e-9
        turn = np.diff(np.unwrap(np.arctan2(step[:, 1], step[:, 0])))
        np.testing.assert_allclose(turn, math.radians(6), atol=1e-9)

    @pytest.mark.parametrize("preset", synth.PRESETS)
    def test_no_teleport_and_inside_image(self, preset):
        sc = synth.make_scenario(preset, 8)
        seq = synth.generate(sc)
        for k in range(len(sc.objects)):
            step = np.diff(seq.trajectories[k, :, :2], axis=0)
            assert np.hypot(step[:, 0], step[:, 1]).max() <= sc.v_max + 1e-9
        g = seq.gt
        assert np.all(g[:, 2] >= -1e-9) and np.all(g[:, 3] >= -1e-9)
        assert np.all(g[:, 2] + g[:, 4] <= sc.width + 1e-9) and np.all(g[:, 3] + g[:, 5] <= sc.height + 1e-9)

    def test_occluded_frames_have_no_detection(self):
        obj = single_object([Segment("cv", 60)], 60, speed=0.0, occlusions=[(20, 10)])
        seq = synth.generate(noise_free([obj], 60))
        frames = seq.detections[:, 0].astype(int)
        assert set(range(20, 30)).isdisjoint(frames)
        assert len(frames) == 50
        assert not set(range(20, 30)) & set(seq.frames_of(1))


class TestPresets:
    def test_turn_rates_bounded(self):
        for seed in range(5):
            for o in synth.make_scenario("turns", seed).objects:
                for s in o.segments:
                    assert s.kind != "turn" or abs(s.rate) <= math.radians(15) + 1e-12

    def test_occlusion_gaps(self):
        for o in synth.make_scenario("occlusion", 3).objects:
            assert len(o.occlusions) == 2
            assert all(10 <= length <= 20 for _, length in o.occlusions)

    def test_crowd_size(self):
        assert len(synth.make_scenario("crowd", 0).objects) == 20

    def test_uav_mix_has_gap_in_gt(self):
        gt = synth.generate(synth.make_scenario("uav-mix", 1)).gt
        gaps = 0
        for tid in np.unique(gt[:, 1]):
            frames = np.sort(gt[gt[:, 1] == tid, 0])
            gaps += int(np.any(np.diff(frames) > 1))
        assert gaps >= 1


class TestExport:
    def test_round_trip(self, tmp_path):
        seq = synth.generate(synth.make_scenario("uav-mix", 2))
        synth.export(seq, tmp_path)
        back = synth.load_sequence(tmp_path)
        assert np.array_equal(back.gt, seq.gt)
        assert np.array_equal(back.detections, seq.detections)
        assert back.scenario == seq.scenario

    def test_gt_line_count(self, tmp_path):
        seq = synth.generate(synth.make_scenario("occlusion", 2))
        paths = synth.export(seq, tmp_path)
        visible = 0
        for o in seq.scenario.objects:
            hidden = {f for start, length in o.occlusions for f in range(start, start + length)}
            visible += len(set(range(1, seq.scenario.num_frames + 1)) - hidden)
        assert len(paths["gt"].read_text().splitlines()) == visible

    def test_gt_line_format(self, tmp_path):
        seq = synth.generate(synth.make_scenario("linear", 2))
        paths = synth.export(seq, tmp_path)
        first = paths["gt"].read_text().splitlines()[0].split(",")
        assert len(first) == 9 and first[6:] == ["1", "1", "1.0"]
        det = paths["det"].read_text().splitlines()[0].split(",")
        assert len(det) == 10 and det[1] == "-1" and det[7:] == ["-1", "-1", "-1"]

    def test_empty_scenario(self, tmp_path):
        seq = synth.generate(MotionScenario(num_frames=10, fp_rate=0.0))
        paths = synth.export(seq, tmp_path)
        assert paths["gt"].read_bytes() == b""

    def test_linear_checksum_stable(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            paths = synth.export(synth.generate(synth.make_scenario("linear", 1)), tmp_path / name)
            digests.append(hashlib.sha256(paths["gt"].read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError, match="file"):
            synth.export(synth.generate(synth.make_scenario("linear", 1)), blocker / "sub")
