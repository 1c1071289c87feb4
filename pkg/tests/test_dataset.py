import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from chronolapse import dataset as ds
from chronolapse.config import AugmentConfig
from chronolapse.errors import EmptyDatasetError, InsufficientFramesError, ManifestError


# -- normalize_timestamp ------------------------------------------------------


@pytest.mark.parametrize(
    "stamp, offset, expected",
    [
        ("2019-01-01T06:00:00Z", 0, 0.25),
        ("2019-01-01T00:00:00Z", 0, 0.0),
        ("2019-01-01T23:30:00Z", 60, 0.5 / 24),
        ("2019-01-01T12:00:00+02:00", 0, 10 / 24),
        ("2019-01-01T03:00:00", -240, 23 / 24),
    ],
)
def test_normalize_timestamp(stamp, offset, expected):
    assert ds.normalize_timestamp(stamp, offset) == pytest.approx(expected, abs=1e-12)


@given(
    st.integers(0, 23), st.integers(0, 59), st.integers(0, 59), st.integers(0, 999_999),
    st.integers(-840, 840), st.integers(-3, 3),
)
def test_normalize_timestamp_periodic_in_offset(h, m, s, us, offset, days):
    stamp = f"2020-03-01T{h:02d}:{m:02d}:{s:02d}.{us:06d}Z"
    t = ds.normalize_timestamp(stamp, offset)
    assert 0.0 <= t < 1.0
    assert ds.normalize_timestamp(stamp, offset + 1440 * days) == t


def test_normalize_timestamp_last_microsecond_stays_below_one():
    assert ds.normalize_timestamp("2020-01-01T23:59:59.999999Z", 0) < 1.0


# -- manifests ----------------------------------------------------------------


def _write_png(path, size=(12, 10), mode="RGB", value=100):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new(mode, size, value if mode != "RGB" else (value, value // 2, 30)).save(path)


def _manifest(tmp_path, entries):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(entries))
    return p


def _entry(sid, cam, frames, domain="labeled", offset=0):
    return {"sequence_id": sid, "camera_id": cam, "utc_offset_minutes": offset, "domain": domain,
            "frames": frames}


def test_load_manifest_three_sequences(tmp_path):
    entries = []
    for s in range(3):
        frames = []
        for k in range(4):
            rel = f"s{s}/{k}.png"
            _write_png(tmp_path / rel)
            frames.append({"path": rel, "wall_clock": f"2019-01-01T{k + 6:02d}:00:00Z"})
        entries.append(_entry(f"s{s}", f"c{s}", frames))
    idx = ds.load_manifest(_manifest(tmp_path, entries))
    assert len(idx) == 3
    assert idx.stats.num_frames == 12
    assert idx.stats.dropped_frames == 0
    assert idx.records[0].times[0] == 0.25


def test_missing_frame_is_dropped_and_counted(tmp_path):
    _write_png(tmp_path / "a.png")
    _write_png(tmp_path / "b.png")
    frames = [{"path": p, "wall_clock": "2019-01-01T06:00:00Z"} for p in ("a.png", "missing.png", "b.png")]
    idx = ds.load_manifest(_manifest(tmp_path, [_entry("s", "c", frames)]))
    assert len(idx) == 1
    assert [f.path for f in idx.records[0].frames] == ["a.png", "b.png"]
    assert idx.stats.dropped_frames == 1


def test_grayscale_and_zero_byte_frames_are_dropped(tmp_path):
    _write_png(tmp_path / "ok.png")
    _write_png(tmp_path / "gray.png", mode="L")
    (tmp_path / "empty.png").write_bytes(b"")
    frames = [{"path": p, "wall_clock": None} for p in ("ok.png", "gray.png", "empty.png")]
    idx = ds.load_manifest(_manifest(tmp_path, [_entry("v", "c", frames, domain="unlabeled")]))
    assert idx.stats.dropped_frames == 2
    assert idx.records[0].times == (None,)


def test_mismatched_frame_size_is_dropped(tmp_path):
    _write_png(tmp_path / "a.png", size=(12, 10))
    _write_png(tmp_path / "b.png", size=(20, 10))
    frames = [{"path": p, "wall_clock": None} for p in ("a.png", "b.png")]
    idx = ds.load_manifest(_manifest(tmp_path, [_entry("v", "c", frames, domain="unlabeled")]))
    assert idx.stats.dropped_frames == 1


@pytest.mark.parametrize("text", ["{not json", json.dumps({"a": 1}), json.dumps([{"frames": []}])])
def test_malformed_manifest(tmp_path, text):
    p = tmp_path / "manifest.json"
    p.write_text(text)
    with pytest.raises(ManifestError):
        ds.load_manifest(p)


def test_labeled_sequence_needs_every_wall_clock(tmp_path):
    _write_png(tmp_path / "a.png")
    p = _manifest(tmp_path, [_entry("s", "c", [{"path": "a.png", "wall_clock": None}])])
    with pytest.raises(ManifestError):
        ds.load_manifest(p)


def test_all_frames_missing_is_empty_dataset(tmp_path):
    p = _manifest(tmp_path, [_entry("s", "c", [{"path": "gone.png", "wall_clock": "2019-01-01T00:00:00Z"}])])
    with pytest.raises(EmptyDatasetError):
        ds.load_manifest(p)


def test_duplicate_sequence_ids_rejected(tmp_path):
    _write_png(tmp_path / "a.png")
    e = _entry("s", "c", [{"path": "a.png", "wall_clock": "2019-01-01T00:00:00Z"}])
    with pytest.raises(ManifestError):
        ds.load_manifest(_manifest(tmp_path, [e, e]))


def test_split_by_camera_is_disjoint(toy_corpus, rng):
    idx = ds.load_manifest(toy_corpus)
    train, test = ds.split_by_camera(idx, 0.3, rng)
    assert {r.camera_id for r in train.records}.isdisjoint({r.camera_id for r in test.records})
    assert len(train) + len(test) == len(idx)
    assert test.split is ds.Split.TEST


# -- sampling -----------------------------------------------------------------


def test_sample_frameset_single_sequence(toy_corpus, rng):
    idx = ds.load_manifest(toy_corpus)
    fs = ds.sample_frameset(idx, 8, rng)
    assert len(fs) == 8
    rec = next(r for r in idx.records if r.sequence_id == fs.sequence_id)
    assert len(set(fs.indices)) == 8
    for frame, i in zip(fs.frames, fs.indices):
        assert frame.time == rec.times[i]
        assert 0.0 <= frame.time < 1.0


def test_sample_frameset_sixteen_from_forty(tmp_path, rng):
    ds.generate_synthetic_corpus(tmp_path, 1, 40, 16, rng)
    fs = ds.sample_frameset(ds.load_manifest(tmp_path), 16, rng)
    assert len(fs) == 16 and len(set(fs.indices)) == 16


def test_sample_frameset_exhaustive_on_two_frames(tmp_path, rng):
    ds.generate_synthetic_corpus(tmp_path, 1, 2, 16, rng)
    fs = ds.sample_frameset(ds.load_manifest(tmp_path), 2, rng)
    assert fs.indices == (0, 1)


def test_short_sequence_samples_with_replacement(tmp_path, rng):
    ds.generate_synthetic_corpus(tmp_path, 1, 3, 16, rng)
    fs = ds.sample_frameset(ds.load_manifest(tmp_path), 8, rng)
    assert len(fs) == 8 and set(fs.indices) <= {0, 1, 2}


def test_sampling_is_deterministic(toy_corpus):
    idx = ds.load_manifest(toy_corpus)
    aug = AugmentConfig(36, 32)
    a = ds.sample_frameset(idx, 6, np.random.default_rng(7), aug)
    b = ds.sample_frameset(idx, 6, np.random.default_rng(7), aug)
    assert a.sequence_id == b.sequence_id and a.transform == b.transform
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.times, b.times)


def test_sample_without_labeled_sequences(toy_unlabeled, rng):
    with pytest.raises(EmptyDatasetError):
        ds.sample_frameset(ds.load_manifest(toy_unlabeled), 4, rng)


def test_augmentation_is_shared_across_the_set(toy_corpus, rng):
    idx = ds.load_manifest(toy_corpus)
    aug = AugmentConfig(36, 32, (-20, 20), (0.8, 1.2), (-10, 10), 0.5)
    for _ in range(5):
        fs = ds.sample_frameset(idx, 5, rng, aug)
        rec = next(r for r in idx.records if r.sequence_id == fs.sequence_id)
        for frame, i in zip(fs.frames, fs.indices):
            assert frame.image.shape == (32, 32, 3)
            raw = ds.load_frame(rec.resolve(rec.frames[i]))
            np.testing.assert_array_equal(fs.transform.apply(raw), frame.image)


def test_identity_augment_is_resize_only(toy_corpus, rng):
    idx = ds.load_manifest(toy_corpus)
    fs = ds.sample_frameset(idx, 2, rng, AugmentConfig.identity(36))
    rec = next(r for r in idx.records if r.sequence_id == fs.sequence_id)
    np.testing.assert_array_equal(fs.frames[0].image, ds.load_frame(rec.resolve(rec.frames[fs.indices[0]])))


def test_sample_window_is_contiguous(toy_unlabeled, rng):
    w = ds.sample_window(ds.load_manifest(toy_unlabeled), 5, rng)
    assert len(w) == 5
    assert w.indices == tuple(range(w.indices[0], w.indices[0] + 5))


# -- negative pairs -----------------------------------------------------------


def _frameset(n):
    frames = tuple(ds.TimedFrame(np.full((4, 4, 3), i, np.float32), i / n) for i in range(n))
    return ds.FrameSet(frames, "s", tuple(range(n)))


def test_negative_pairs_exhaustive_for_four(rng):
    neg = ds.make_negative_pairs(_frameset(4), 12, rng)
    assert sorted(neg.index_pairs) == [(i, j) for i in range(4) for j in range(4) if i != j]


def test_negative_pairs_for_two(rng):
    neg = ds.make_negative_pairs(_frameset(2), 2, rng)
    assert sorted(neg.index_pairs) == [(0, 1), (1, 0)]


def test_negative_pairs_sixteen_against_enumeration(rng):
    fs = _frameset(16)
    mismatched = {(i, j) for i, j in itertools.product(range(16), repeat=2) if i != j}
    neg = ds.make_negative_pairs(fs, 16, rng)
    assert len(set(neg.index_pairs)) == 16
    assert set(neg.index_pairs) <= mismatched
    for (i, j), img, t in zip(neg.index_pairs, neg.images, neg.times):
        assert img[0, 0, 0] == i and t == j / 16


@given(st.integers(2, 12), st.data())
def test_negative_pairs_never_matched(n, data):
    k = data.draw(st.integers(0, n * (n - 1)))
    neg = ds.make_negative_pairs(_frameset(n), k, np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
    assert len(set(neg.index_pairs)) == k
    assert all(i != j for i, j in neg.index_pairs)


def test_negative_pairs_need_two_frames(rng):
    with pytest.raises(InsufficientFramesError):
        ds.make_negative_pairs(_frameset(1), 1, rng)


def test_negative_pairs_default_k_is_n(rng):
    assert len(ds.make_negative_pairs(_frameset(5), None, rng)) == 5


@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_derangement_has_no_fixed_points(n, seed):
    p = ds.derangement(n, np.random.default_rng(seed))
    assert sorted(p) == list(range(n)) and not np.any(p == np.arange(n))


# -- synthetic corpus ---------------------------------------------------------


def test_synthetic_luminance_follows_curve(tmp_path, rng):
    ds.generate_synthetic_corpus(tmp_path, 1, 24, 32, rng)
    idx = ds.load_manifest(tmp_path)
    curve = ds.load_tone_curves(tmp_path)["seq_0000"]
    rec = idx.records[0]
    for frame, t, (t_s, level) in zip(rec.frames, rec.times, curve["curve_samples"]):
        assert t == t_s
        lum = ds.mean_luminance(ds.read_image(rec.resolve(frame)))
        # 8-bit quantization of each pixel moves the mean by at most half a level
        assert abs(lum - level) <= 0.5 / 255 + 1e-9
        assert level == ds.tone_curve(t, curve["amplitude"], curve["phase"])


def test_synthetic_zero_amplitude_frames_identical(tmp_path, rng):
    ds.generate_synthetic_corpus(tmp_path, 1, 6, 16, rng, amplitude=(0.0, 0.0))
    rec = ds.load_manifest(tmp_path).records[0]
    first = ds.read_image(rec.resolve(rec.frames[0]))
    for f in rec.frames[1:]:
        np.testing.assert_array_equal(ds.read_image(rec.resolve(f)), first)


def test_synthetic_manifest_roundtrip(tmp_path, rng):
    idx = ds.generate_synthetic_corpus(tmp_path, 3, 5, 16, rng)
    text = (tmp_path / "manifest.json").read_text()
    loaded = ds.load_manifest(tmp_path)
    assert loaded.to_manifest() == idx.to_manifest() == json.loads(text)
    out = tmp_path / "again.json"
    ds.write_manifest(loaded, out)
    assert out.read_text() == text
    for a, b in zip(loaded.records, idx.records):
        assert a.times == b.times


def test_synthetic_needs_eight_pixels(tmp_path, rng):
    with pytest.raises(ValueError):
        ds.generate_synthetic_corpus(tmp_path, 1, 2, 4, rng)


def test_synthetic_unlabeled_has_no_timestamps(toy_unlabeled):
    idx = ds.load_manifest(toy_unlabeled, "unlabeled")
    assert all(t is None for r in idx.records for t in r.times)
    assert len(idx.times()) == 0


def test_image_io_roundtrip(tmp_path):
    img = np.linspace(-1, 1, 5 * 7 * 3, dtype=np.float32).reshape(5, 7, 3)
    ds.write_image(tmp_path / "x.png", img)
    back = ds.read_image(tmp_path / "x.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 127.5 + 1e-6
    assert math.isclose(float(ds.to_unit(np.array([255], np.uint8))[0]), 1.0)
