import numpy as np
import pytest
import torch

from semsynth.data import (
    Dataset,
    InstanceMap,
    LabelMap,
    generate_shapes_dataset,
    load_dataset,
)
from semsynth.encoder import (
    InstanceFeature,
    StyleCatalog,
    StyleEncoder,
    StyleSelectionError,
    build_style_catalog,
    harvest_features,
    instance_average_pool,
    lloyd_kmeans,
    pooled_vectors,
    sample_styles,
)
from semsynth.nets import init_network_weights


def grid_with_instances():
    inst = np.zeros((8, 8), dtype=np.int32)
    inst[1:4, 1:4] = 1
    inst[5:7, 5:8] = 2
    return inst


class TestInstancePooling:
    def test_already_constant_is_unchanged(self):
        inst = torch.from_numpy(grid_with_instances()).unsqueeze(0)
        feats = torch.zeros(1, 3, 8, 8)
        feats[0, :, 1:4, 1:4] = 0.7
        feats[0, :, 5:7, 5:8] = -0.2
        pooled = instance_average_pool(feats, inst)
        assert torch.allclose(pooled, feats, atol=1e-7)

    def test_two_value_region_averages(self):
        inst = torch.zeros(1, 4, 4, dtype=torch.int64)
        inst[0, 0, 0] = 1
        inst[0, 0, 1] = 1
        feats = torch.zeros(1, 1, 4, 4)
        feats[0, 0, 0, 0] = 1.0
        feats[0, 0, 0, 1] = 3.0
        pooled = instance_average_pool(feats, inst)
        assert pooled[0, 0, 0, 0] == pytest.approx(2.0)
        assert pooled[0, 0, 0, 1] == pytest.approx(2.0)
        assert float(pooled.abs().sum()) == pytest.approx(4.0)  # rest zeroed

    def test_piecewise_constant_and_mean_preserving_random(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(100):
            h, w = int(rng.integers(4, 17)), int(rng.integers(4, 17))
            n_inst = int(rng.integers(1, 4))
            inst = rng.integers(0, n_inst + 1, size=(h, w)).astype(np.int64)
            feats = rng.normal(size=(1, 3, h, w)).astype(np.float32)
            pooled = instance_average_pool(
                torch.from_numpy(feats), torch.from_numpy(inst).unsqueeze(0))
            pooled_np = pooled.numpy()[0]
            for inst_id in np.unique(inst):
                if inst_id == 0:
                    continue
                mask = inst == inst_id
                for c in range(3):
                    region = pooled_np[c][mask]
                    assert region.max() - region.min() <= 1e-6
                    assert abs(region.mean() - feats[0, c][mask].mean()) <= 1e-6

    def test_gradients_flow_through_pooling(self):
        inst = torch.from_numpy(grid_with_instances()).unsqueeze(0)
        feats = torch.randn(1, 2, 8, 8, dtype=torch.float64, requires_grad=True)
        weight = torch.randn(1, 2, 8, 8, dtype=torch.float64)

        def loss_of(f):
            return (instance_average_pool(f, inst) * weight).sum()

        loss = loss_of(feats)
        (grad,) = torch.autograd.grad(loss, feats)
        h = 1e-6
        # probe one pixel inside instance 1 and one outside any instance
        for (py, px) in ((2, 2), (0, 7)):
            bumped = feats.detach().clone()
            bumped[0, 0, py, px] += h
            fd = (float(loss_of(bumped)) - float(loss_of(feats.detach()))) / h
            assert fd == pytest.approx(float(grad[0, 0, py, px]), abs=1e-4)
        inside = grad[0, :, 1:4, 1:4]
        assert float(inside.abs().max()) > 0

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            instance_average_pool(torch.zeros(1, 3, 4, 4), torch.zeros(1, 5, 5).long())


class TestEncoderNet:
    def test_output_shape(self):
        enc = StyleEncoder(width_divisor=4)
        init_network_weights(enc, torch.Generator().manual_seed(0))
        image = torch.randn(1, 3, 32, 32)
        inst = torch.from_numpy(grid_with_instances()).unsqueeze(0)
        inst_full = torch.zeros(1, 32, 32, dtype=torch.int64)
        inst_full[0, :8, :8] = inst[0]
        out = enc(image, inst_full)
        assert out.shape == (1, 3, 32, 32)

    def test_tanh_head_bounds_features(self):
        enc = StyleEncoder(width_divisor=4)
        init_network_weights(enc, torch.Generator().manual_seed(1))
        raw = enc.raw_forward(torch.randn(1, 3, 32, 32) * 5)
        assert raw.min() >= -1.0 and raw.max() <= 1.0


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    generate_shapes_dataset(seed=3, count=8, height=32, width=32, out_dir=root)
    return load_dataset(root)


class TestHarvest:

    def test_record_count_matches_instances(self, small_dataset):
        enc = StyleEncoder(width_divisor=4)
        init_network_weights(enc, torch.Generator().manual_seed(2))
        records = harvest_features(enc, small_dataset)
        expected = sum(
            len(small_dataset[i].instance.instance_ids())
            for i in range(len(small_dataset)))
        assert len(records) == expected

    def test_repeat_harvest_identical(self, small_dataset):
        enc = StyleEncoder(width_divisor=4)
        init_network_weights(enc, torch.Generator().manual_seed(2))
        a = harvest_features(enc, small_dataset)
        b = harvest_features(enc, small_dataset)
        assert len(a) == len(b)
        for ra, rb in zip(a, b):
            assert ra.sample_id == rb.sample_id and ra.instance_id == rb.instance_id
            assert np.array_equal(ra.vector, rb.vector)

    def test_class_matches_label_under_instance(self, small_dataset):
        enc = StyleEncoder(width_divisor=4)
        init_network_weights(enc, torch.Generator().manual_seed(2))
        for rec in harvest_features(enc, small_dataset):
            idx = small_dataset.ids.index(rec.sample_id)
            pair = small_dataset[idx]
            mask = pair.instance.grid == rec.instance_id
            classes = np.unique(pair.label.grid[mask])
            assert classes.tolist() == [rec.class_id]


class TestKMeans:
    def test_identical_vectors_duplicate_centers(self):
        points = np.tile([0.3, -0.2, 0.9], (10, 1))
        centers, _, _ = lloyd_kmeans(points, 10, seed=0)
        assert centers.shape == (10, 3)
        assert np.allclose(centers, points[0])

    def test_two_blob_recovery(self):
        rng = np.random.Generator(np.random.PCG64(5))
        mean_a, mean_b = np.array([1.0, 0, 0]), np.array([-1.0, 0.5, 0.2])
        pts = np.concatenate([
            mean_a + rng.normal(scale=0.02, size=(50, 3)),
            mean_b + rng.normal(scale=0.02, size=(50, 3)),
        ])
        centers, _, _ = lloyd_kmeans(pts, 2, seed=1)
        dists = {tuple(np.round(c, 3)) for c in centers}
        assert len(dists) == 2
        err_a = min(np.linalg.norm(c - mean_a) for c in centers)
        err_b = min(np.linalg.norm(c - mean_b) for c in centers)
        assert err_a < 0.05 and err_b < 0.05

    def test_inertia_monotone_nonincreasing(self):
        rng = np.random.Generator(np.random.PCG64(6))
        pts = rng.normal(size=(200, 3))
        _, _, history = lloyd_kmeans(pts, 5, seed=2)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_deterministic_under_seed(self):
        rng = np.random.Generator(np.random.PCG64(7))
        pts = rng.normal(size=(60, 3))
        c1, a1, _ = lloyd_kmeans(pts, 4, seed=3)
        c2, a2, _ = lloyd_kmeans(pts, 4, seed=3)
        assert np.array_equal(c1, c2) and np.array_equal(a1, a2)

    def test_assigned_center_is_nearest(self):
        rng = np.random.Generator(np.random.PCG64(8))
        pts = rng.normal(size=(80, 3))
        centers, assignment, _ = lloyd_kmeans(pts, 6, seed=4)
        for i, point in enumerate(pts):
            d = ((centers - point) ** 2).sum(axis=1)
            assert d[assignment[i]] == pytest.approx(d.min(), abs=1e-12)

    def test_fewer_points_than_k(self):
        pts = np.array([[0.0, 0, 0], [1.0, 1, 1], [2.0, 2, 2]])
        centers, _, _ = lloyd_kmeans(pts, 10, seed=0)
        assert len(centers) == 3


class TestCatalog:
    def _features(self):
        rng = np.random.Generator(np.random.PCG64(9))
        records = []
        for class_id, mean in ((2, [0.5, 0, 0]), (3, [-0.5, 0.3, 0])):
            for i in range(30):
                records.append(InstanceFeature(
                    sample_id=f"s{i}", instance_id=i + 1, class_id=class_id,
                    vector=np.asarray(mean) + rng.normal(scale=0.05, size=3)))
        return records

    def test_build_and_roundtrip_json(self, tmp_path):
        catalog = build_style_catalog(self._features(), k=4, seed=0)
        assert set(catalog.classes()) == {2, 3}
        assert catalog.centers[2].shape == (4, 3)
        assert sum(catalog.counts[2]) == 30
        path = tmp_path / "catalog.json"
        catalog.save(path)
        back = StyleCatalog.load(path)
        for c in catalog.classes():
            assert np.allclose(back.centers[c], catalog.centers[c])
            assert back.counts[c] == catalog.counts[c]

    def test_missing_class_raises(self):
        catalog = build_style_catalog(self._features(), k=2, seed=0)
        with pytest.raises(StyleSelectionError):
            catalog.centers_for(7)


class TestSampleStyles:
    def _setup(self):
        label = LabelMap(grid=np.array([[2, 2], [3, 3]]), num_classes=4)
        inst = InstanceMap(grid=np.array([[1, 1], [2, 2]]))
        catalog = StyleCatalog(
            centers={
                2: np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]),
                3: np.array([[-0.1, -0.2, -0.3]]),
            },
            counts={2: [5, 5], 3: [4]},
        )
        return catalog, inst, label

    def test_explicit_cluster_zero(self):
        catalog, inst, label = self._setup()
        styles = sample_styles(catalog, inst, label,
                               selection={1: {"cluster": 0}, 2: {"cluster": 0}})
        assert np.allclose(styles[1], [0.1, 0.2, 0.3])
        assert np.allclose(styles[2], [-0.1, -0.2, -0.3])

    def test_random_reproducible_under_seed(self):
        catalog, inst, label = self._setup()
        a = sample_styles(catalog, inst, label, seed=5)
        b = sample_styles(catalog, inst, label, seed=5)
        assert set(a) == {1, 2}
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_explicit_vector(self):
        catalog, inst, label = self._setup()
        styles = sample_styles(catalog, inst, label,
                               selection={1: {"vector": [9, 9, 9]}, 2: "random"})
        assert np.allclose(styles[1], [9, 9, 9])

    def test_bad_cluster_index(self):
        catalog, inst, label = self._setup()
        with pytest.raises(StyleSelectionError, match="cluster 5"):
            sample_styles(catalog, inst, label, selection={1: {"cluster": 5}})

    def test_class_without_centers(self):
        catalog, inst, label = self._setup()
        catalog.centers[3] = np.zeros((0, 3))
        with pytest.raises(StyleSelectionError, match="no style centers"):
            sample_styles(catalog, inst, label)


def test_pooled_vectors_match_pooling():
    rng = np.random.Generator(np.random.PCG64(10))
    inst = grid_with_instances()
    feats = torch.from_numpy(rng.normal(size=(3, 8, 8)).astype(np.float32))
    vectors = pooled_vectors(feats, inst)
    pooled = instance_average_pool(
        feats.unsqueeze(0), torch.from_numpy(inst).unsqueeze(0).long())[0]
    for inst_id, vec in vectors.items():
        mask = inst == inst_id
        region = pooled.numpy()[:, mask]
        assert np.allclose(region.mean(axis=1), vec, atol=1e-6)
