import numpy as np
import pytest

from samcal import data as D
from samcal.mlp import MlpSpec, forward
from samcal.optim import TrainConfig, train


def nearest_mean_accuracy(ds, means):
    pred = np.argmax(ds.features @ means.T, axis=1)
    return float((pred == ds.labels).mean())


def test_blobs_deterministic_and_validated():
    a = D.gen_blobs(4, 8, 200, 0.3, 0.1, seed=5)
    b = D.gen_blobs(4, 8, 200, 0.3, 0.1, seed=5)
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert np.bincount(D.gen_blobs(4, 8, 200, 0.3, 0.0, seed=5).labels).tolist() == [50] * 4
    with pytest.raises(ValueError):
        D.gen_blobs(3, 4, 10, -0.1)
    with pytest.raises(ValueError):
        D.gen_blobs(3, 4, 10, 0.1, label_noise=0.5)


def test_blobs_zero_overlap_linearly_separable():
    ds = D.gen_blobs(5, 6, 500, 0.0, 0.0, seed=1)
    means = np.stack([ds.features[ds.labels == k].mean(0) for k in range(5)])
    assert nearest_mean_accuracy(ds, means) >= 0.99


def test_blobs_label_noise_caps_accuracy():
    K = 4
    clean = D.gen_blobs(K, 8, 20000, 0.4, 0.0, seed=2)
    noisy = D.gen_blobs(K, 8, 20000, 0.4, 0.2, seed=2)
    means = np.stack([clean.features[clean.labels == k].mean(0) for k in range(K)])
    assert np.array_equal(clean.features, noisy.features)
    flipped = clean.labels != noisy.labels
    assert abs(flipped.mean() - 0.2) < 0.01
    assert nearest_mean_accuracy(noisy, means) <= 0.8 * nearest_mean_accuracy(clean, means) + 0.2 / K + 0.01


def test_moons_balanced_and_reproducible():
    for n in (10, 11, 200):
        ds = D.gen_two_moons(n, 0.1, seed=3)
        c = np.bincount(ds.labels, minlength=2)
        assert abs(int(c[0]) - int(c[1])) <= 1 and ds.d == 2 and ds.K == 2
    a, b = D.gen_two_moons(50, 0.2, seed=4), D.gen_two_moons(50, 0.2, seed=4)
    assert np.array_equal(a.features, b.features)


def test_clean_moons_fit_by_mlp():
    ds = D.gen_two_moons(200, 0.0, seed=0)
    params, _ = train(MlpSpec((2, 32, 32, 2), seed=0), ds.features, ds.labels,
                      TrainConfig(epochs=150, batch_size=20, lr=0.1))
    assert (forward(params, ds.features).argmax(1) == ds.labels).mean() == 1.0


def test_shift():
    ds = D.gen_blobs(3, 4, 60, 0.3, seed=0)
    for kind in D.SHIFT_KINDS:
        for s in (1, 5):
            out = D.apply_shift(ds, D.ShiftSpec(kind, s), seed=1)
            assert np.array_equal(out.labels, ds.labels) and out.n == ds.n
            again = D.apply_shift(ds, D.ShiftSpec(kind, s), seed=1)
            assert np.array_equal(out.features, again.features)
    with pytest.raises(ValueError):
        D.ShiftSpec("gaussian_noise", 0)
    scaled = D.apply_shift(ds, D.ShiftSpec("feature_scale", 2), seed=0)
    assert np.allclose(scaled.features, ds.features * 1.3)
    rot = D.apply_shift(ds, D.ShiftSpec("feature_rotate", 5), seed=0)
    assert np.allclose(np.linalg.norm(rot.features[:, :2], axis=1), np.linalg.norm(ds.features[:, :2], axis=1))
    assert np.array_equal(rot.features[:, 2:], ds.features[:, 2:])
    noise = [np.std(D.apply_shift(ds, D.ShiftSpec("gaussian_noise", s), seed=0).features - ds.features)
             for s in range(1, 6)]
    assert all(b > a for a, b in zip(noise, noise[1:]))


def test_split_sizes_and_partition():
    ds = D.gen_blobs(2, 2, 100, 0.5, seed=0)
    tr, va, te = D.split(ds, (0.8, 0.1, 0.1), seed=1)
    assert (tr.n, va.n, te.n) == (80, 10, 10)
    joined = np.concatenate([tr.features, va.features, te.features])
    assert sorted(map(tuple, joined)) == sorted(map(tuple, ds.features))
    tr2, _, _ = D.split(ds, (0.8, 0.1, 0.1), seed=1)
    assert np.array_equal(tr.features, tr2.features)
    with pytest.raises(ValueError):
        D.split(ds, (0.9, 0.2, -0.1))
    with pytest.raises(ValueError):
        D.split(D.gen_blobs(2, 2, 5, 0.5), (0.98, 0.01, 0.01))


def test_csv_roundtrip(tmp_path):
    ds = D.gen_blobs(3, 5, 40, 0.7, seed=9)
    D.write_csv_dataset(ds, tmp_path / "d.csv")
    back = D.read_csv_dataset(tmp_path / "d.csv")
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)


def test_csv_hand_file(tmp_path):
    (tmp_path / "h.csv").write_text("f0,f1,label\n0.5,-1,0\n2,3.25,1\n0,0,2\n")
    ds = D.read_csv_dataset(tmp_path / "h.csv")
    assert np.array_equal(ds.features, [[0.5, -1.0], [2.0, 3.25], [0.0, 0.0]])
    assert ds.labels.tolist() == [0, 1, 2]
    (tmp_path / "l.csv").write_text("l0,l1,label\n1.0,0.0,0\n0.0,0.0,1\n-2,2,1\n")
    preds = D.read_logits_csv(tmp_path / "l.csv")
    assert np.array_equal(preds.logits, [[1.0, 0.0], [0.0, 0.0], [-2.0, 2.0]])
    assert preds.probs[1].tolist() == [0.5, 0.5]


def test_csv_errors(tmp_path):
    (tmp_path / "a.csv").write_text("f0,g1,label\n1,2,0\n")
    with pytest.raises(D.CsvFormatError, match="g1"):
        D.read_csv_dataset(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("f0,f1,label\n1,2,0\n1,oops,1\n")
    with pytest.raises(D.CsvFormatError, match="row 3"):
        D.read_csv_dataset(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("f0,f1,label\n1,2\n")
    with pytest.raises(D.CsvFormatError):
        D.read_csv_dataset(tmp_path / "c.csv")
