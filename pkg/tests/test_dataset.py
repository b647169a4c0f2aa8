import json
import warnings

import numpy as np
import pytest

from mvpvae.dataset import (
    MultiViewDataset,
    build_fingerprint,
    gen_masks,
    gen_synthetic,
    incomplete_count,
    load_csv,
    read_fingerprint,
    write_csv,
    write_fingerprint,
)
from mvpvae.errors import ContractViolation, DataFormatError, FingerprintError
from mvpvae.permutation import is_cyclic


class TestSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(50, 3, 3, 4, seed=5)
        b = gen_synthetic(50, 3, 3, 4, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.views, b.views))
        assert np.array_equal(a.labels, b.labels)

    def test_balanced_labels(self):
        ds = gen_synthetic(101, 4, 2, 3, seed=0)
        counts = np.bincount(ds.labels)
        assert counts.max() - counts.min() <= 1

    def test_single_cluster_no_noise(self):
        ds = gen_synthetic(20, 1, 2, 3, noise_sigma=0.0, jitter=0.0, seed=1)
        for v in ds.views:
            assert np.allclose(v, v[0])

    def test_shapes(self):
        ds = gen_synthetic(30, 2, 3, (2, 5, 7), seed=0)
        assert ds.view_dims == (2, 5, 7) and ds.N == 30 and ds.L == 3
        assert ds.masks.all()

    def test_errors(self):
        with pytest.raises(ContractViolation):
            gen_synthetic(10, 2, 1, 3)
        with pytest.raises(ContractViolation):
            gen_synthetic(10, 0, 2, 3)
        with pytest.raises(ContractViolation):
            gen_synthetic(10, 2, 3, (2, 2))


class TestDatasetType:
    def test_rejects_empty_mask_row(self):
        with pytest.raises(ContractViolation):
            MultiViewDataset([np.zeros((2, 1)), np.zeros((2, 1))], np.array([[1, 0], [0, 0]]))

    def test_rejects_row_mismatch(self):
        with pytest.raises(ContractViolation):
            MultiViewDataset([np.zeros((2, 1)), np.zeros((3, 1))])

    def test_masked_views_zeroed(self):
        ds = MultiViewDataset([np.ones((2, 2)), np.ones((2, 1))], np.array([[1, 0], [1, 1]]))
        mv = ds.masked_views()
        assert mv[1][0, 0] == 0.0 and mv[1][1, 0] == 1.0 and mv[0].all()


class TestMasks:
    def test_exact_incomplete_count(self):
        m = gen_masks(10, 3, 0.5, 0)
        assert (~m.all(axis=1)).sum() == 5

    def test_eta_zero(self):
        assert gen_masks(20, 4, 0.0, 0).all()

    def test_l2_one_view_left(self):
        m = gen_masks(100, 2, 1.0, 3)
        assert (m.sum(axis=1) == 1).all()

    def test_floor_is_decimal_exact(self):
        assert incomplete_count(100, 0.29) == 29
        assert incomplete_count(1000, 0.3) == 300
        assert incomplete_count(7, 0.5) == 3

    def test_properties(self):
        for eta in (0.1, 0.3, 0.5, 0.7):
            m = gen_masks(1000, 5, eta, 1)
            incomplete = ~m.all(axis=1)
            assert incomplete.sum() == int(eta * 1000 + 1e-9)
            assert m.any(axis=1).all()

    def test_drop_counts_cover_range(self):
        m = gen_masks(2000, 5, 1.0, 2)
        assert set(5 - m.sum(axis=1)) == {1, 2, 3, 4}

    def test_deterministic(self):
        assert np.array_equal(gen_masks(50, 3, 0.4, 7), gen_masks(50, 3, 0.4, 7))

    def test_errors(self):
        with pytest.raises(ContractViolation):
            gen_masks(10, 1, 0.5, 0)
        with pytest.raises(ContractViolation):
            gen_masks(10, 3, 1.5, 0)


class TestFingerprint:
    def test_mask_01101(self):
        fp = build_fingerprint(np.array([[0, 1, 1, 0, 1]]), 0, pool=3)
        for bundle in fp.bundles[0]:
            for m in bundle.as_lists():
                assert m[0] == 1 and m[3] == 4
                assert is_cyclic(m, {2, 3, 5})

    def test_l2_full(self):
        fp = build_fingerprint(np.ones((1, 2)), 0)
        assert fp.bundle(0).as_lists() == [[2, 1], [2, 1]]

    def test_single_view_identity(self):
        fp = build_fingerprint(np.array([[0, 0, 1]]), 0)
        assert fp.bundle(0).as_lists() == [[1, 2, 3]] * 3

    def test_pool_cycles(self):
        fp = build_fingerprint(np.ones((1, 4)), 1, pool=3)
        assert fp.bundle(0, 4) == fp.bundle(0, 1)
        arr = fp.perms_array([0], 2)
        assert arr.shape == (1, 4, 4)
        assert (arr[0] + 1).tolist() == fp.bundle(0, 2).as_lists()

    def test_roundtrip_byte_identical(self, tmp_path):
        masks = gen_masks(200, 5, 0.5, 3)
        fp = build_fingerprint(masks, 3, eta=0.5)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_fingerprint(fp, p1)
        back = read_fingerprint(p1)
        write_fingerprint(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(back.masks, masks)
        assert back.bundles == fp.bundles

    def test_header_fields(self, tmp_path):
        fp = build_fingerprint(gen_masks(5, 3, 0.4, 0), 0, pool=2, eta=0.4)
        path = tmp_path / "f.jsonl"
        write_fingerprint(fp, path)
        lines = path.read_text().splitlines()
        assert json.loads(lines[0]) == {"version": 1, "L": 3, "eta": 0.4, "seed": 0, "pool": 2}
        rec = json.loads(lines[1])
        assert set(rec) == {"mask", "perms", "more_perms"} and len(rec["more_perms"]) == 1

    def _write(self, path, records, header=None):
        header = header or {"version": 1, "L": 3, "eta": 0.5, "seed": 0, "pool": 1}
        lines = [json.dumps(header)] + [json.dumps(r) for r in records]
        path.write_text("\n".join(lines) + "\n")

    def test_non_cyclic_names_sample(self, tmp_path):
        path = tmp_path / "f.jsonl"
        good = {"mask": [1, 1, 1], "perms": [[2, 3, 1]] * 3}
        bad = {"mask": [1, 1, 1], "perms": [[2, 3, 1], [1, 2, 3], [2, 3, 1]]}
        self._write(path, [good, bad])
        with pytest.raises(FingerprintError) as err:
            read_fingerprint(path)
        assert err.value.sample == 1 and err.value.line == 3
        assert "sample 1" in str(err.value)

    def test_malformed_json_line(self, tmp_path):
        path = tmp_path / "f.jsonl"
        path.write_text(json.dumps({"version": 1, "L": 3, "eta": 0.5, "seed": 0, "pool": 1}) + "\n{oops\n")
        with pytest.raises(FingerprintError, match="line 2"):
            read_fingerprint(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "f.jsonl"
        self._write(path, [], header={"version": 2, "L": 3, "eta": 0.5, "seed": 0, "pool": 1})
        with pytest.raises(FingerprintError, match="line 1"):
            read_fingerprint(path)

    def test_mask_errors(self, tmp_path):
        path = tmp_path / "f.jsonl"
        self._write(path, [{"mask": [0, 0, 0], "perms": [[1, 2, 3]] * 3}])
        with pytest.raises(FingerprintError):
            read_fingerprint(path)
        self._write(path, [{"mask": [1, 1], "perms": [[1, 2, 3]] * 3}])
        with pytest.raises(FingerprintError):
            read_fingerprint(path)

    def test_missing_view_moved(self, tmp_path):
        path = tmp_path / "f.jsonl"
        self._write(path, [{"mask": [1, 1, 0], "perms": [[3, 1, 2]] * 3}])
        with pytest.raises(FingerprintError, match="sample 0"):
            read_fingerprint(path)

    def test_eta_mismatch_warns_file_wins(self, tmp_path):
        path = tmp_path / "f.jsonl"
        self._write(path, [{"mask": [1, 1, 1], "perms": [[2, 3, 1]] * 3}])
        with pytest.warns(UserWarning, match="eta"):
            fp = read_fingerprint(path, expected_eta=0.3)
        assert fp.eta == 0.5
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            read_fingerprint(path, expected_eta=0.5)


class TestCsv:
    def test_two_views(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, np.arange(6.0).reshape(3, 2))
        write_csv(b, np.arange(3.0).reshape(3, 1))
        ds = load_csv([a, b])
        assert ds.N == 3 and ds.L == 2 and ds.labels is None

    def test_labels_and_header(self, tmp_path):
        a, b, lab = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "l.csv"
        a.write_text("x,y\n1,2\n3,4\n")
        b.write_text("z\n5\n6\n")
        lab.write_text("label\n0\n1\n")
        ds = load_csv([a, b], lab, header=True)
        assert ds.labels.tolist() == [0, 1]
        assert ds.views[0].tolist() == [[1, 2], [3, 4]]

    def test_zscore(self, tmp_path):
        rng = np.random.default_rng(0)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, rng.normal(3, 2, size=(50, 3)))
        write_csv(b, rng.normal(-1, 5, size=(50, 2)))
        ds = load_csv([a, b], zscore=True)
        for v in ds.views:
            assert np.allclose(v.mean(axis=0), 0, atol=1e-9)
            assert np.allclose(v.std(axis=0), 1, atol=1e-9)

    def test_row_mismatch(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, np.zeros((3, 1)))
        write_csv(b, np.zeros((2, 1)))
        with pytest.raises(DataFormatError):
            load_csv([a, b])

    def test_non_numeric(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("1,2\n3,x\n")
        write_csv(b, np.zeros((2, 1)))
        with pytest.raises(DataFormatError, match="line 2"):
            load_csv([a, b])
