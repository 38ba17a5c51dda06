import numpy as np
import pytest

from edgesync import drift_stream as ds
from edgesync.core_types import ValidationError


def test_generation_is_deterministic():
    a = ds.benchmark_streams(3, 5, duration=200)
    b = ds.benchmark_streams(3, 5, duration=200)
    assert all(x.equals(y) for x, y in zip(a, b))
    assert not a[0].equals(ds.benchmark_streams(3, 6, duration=200)[0])


def test_arrival_times_follow_rate():
    s = ds.benchmark_streams(1, 0, duration=100, rate=2.0)[0]
    assert len(s) == 200
    assert np.allclose(s.times, (np.arange(200) + 1) / 2.0)


def test_catalog_cycles_over_edges():
    streams = ds.benchmark_streams(7, 1, duration=60)
    assert [s.name for s in streams] == [ds.CATALOG[e % 5] for e in range(7)]


def test_history_tag_draws_different_scenes():
    a = ds.benchmark_streams(2, 1, duration=60)
    b = ds.benchmark_streams(2, 1, duration=60, tag="history-")
    assert not a[0].equals(b[0])


def test_unknown_schedule():
    geo = ds.Geometry.create(0)
    with pytest.raises(ValidationError):
        ds.catalog_schedule("sunny", geo, 0)


def test_blend_interpolates():
    m0, m1 = np.zeros((2, 2)), np.ones((2, 2))
    sched = ds.DriftSchedule("x", [ds.Phase(10, m0), ds.Phase(10, m1, transition=ds.BLEND, blend_s=4)])
    assert np.allclose(sched.state_at(12)[0], 0.5)
    assert np.allclose(sched.state_at(15)[0], 1.0)
    assert np.allclose(sched.state_at(5)[0], 0.0)


def test_abrupt_shift_hurts_a_fixed_classifier():
    geo = ds.Geometry.create(3)
    sched = ds.catalog_schedule("abrupt_shift", geo, 3)
    before, after = sched.phases
    x = ds.generate(sched, 3)
    half = len(x) // 2
    rule = lambda s: ds.bayes_predict(before.means, before.priors, before.shift, before.noise_scale, s.features)
    first = np.mean(rule(x.slice(0, half)) == x.labels[:half])
    second = np.mean(rule(x.slice(half, len(x))) == x.labels[half:])
    assert first > second + 0.2


def test_file_round_trip(tmp_path):
    s = ds.benchmark_streams(1, 2, duration=30)[0]
    path = str(tmp_path / "s.stream")
    ds.save_stream(s, path)
    back = ds.load_feature_file(path)
    assert np.array_equal(back.features, s.features)
    assert np.array_equal(back.labels, s.labels)
    assert np.array_equal(back.times, s.times)


@pytest.mark.parametrize("body,where", [
    ("EDGESYNC-STREAM v1 C=2 D=1 rate=1.0 n=2\n1.0,0,0.5\n", "truncated"),
    ("EDGESYNC-STREAM v1 C=2 D=1 rate=1.0 n=2\n1.0,0,0.5\n0.5,1,0.1\n", ":3:"),
    ("EDGESYNC-STREAM v1 C=2 D=1 rate=1.0 n=1\n1.0,2,0.5\n", ":2:"),
    ("EDGESYNC-STREAM v2 C=2 D=1 rate=1.0 n=1\n1.0,0,0.5\n", "version"),
    ("EDGESYNC-STREAM v1 C=2 D=1 rate=1.0 n=1\n1.0,0\n", ":2:"),
])
def test_malformed_files(tmp_path, body, where):
    path = tmp_path / "bad.stream"
    path.write_text(body)
    with pytest.raises(ds.StreamFormatError, match=where):
        ds.load_feature_file(str(path))


@pytest.mark.parametrize("clip", [None, 30.0])
def test_partition_conserves_samples(clip):
    base = ds.benchmark_streams(3, 4, duration=120)
    for parts in (1, 2, 3):
        out = ds.partition_corpus(base, parts, clip, seed=1)
        assert len(out) == parts
        assert len({len(s) for s in out}) == 1
        got = np.concatenate([s.features for s in out])
        want = np.concatenate([s.features for s in base])
        assert sorted(map(tuple, got)) == sorted(map(tuple, want))


def test_partition_without_clips_is_contiguous():
    base = ds.benchmark_streams(2, 4, duration=60)
    out = ds.partition_corpus(base, 1)
    assert np.array_equal(out[0].labels, np.concatenate([s.labels for s in base]))


def test_stream_validation():
    with pytest.raises(ValidationError):
        ds.FeatureStream(np.array([1.0, 1.0]), np.array([0, 0]), np.zeros((2, 1)), 1.0, 2)
    with pytest.raises(ValidationError):
        ds.FeatureStream(np.array([1.0]), np.array([3]), np.zeros((1, 1)), 1.0, 2)
