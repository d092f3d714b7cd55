import math
from dataclasses import replace

import numpy as np
import pytest

import afftrack.autograd as ag
from afftrack.gradcheck import check_model_gradients, random_pair_sample
from afftrack.labels import build_label
from afftrack.model import (
    AffinityBundle,
    AffinityModel,
    association_accuracy,
    association_losses,
    affinity_from_scores,
    full_config,
    learning_rate,
    micro_config,
    pair_batch_loss,
    toy_config,
    train_model,
    TrainSettings,
)


def bundle_from_probabilities(A1, A2, mode="max"):
    """Assemble a bundle directly from probability matrices (no network)."""
    A1 = np.asarray(A1, dtype=np.float64)
    A2 = np.asarray(A2, dtype=np.float64)
    n = A1.shape[0]
    t1 = ag.constant(A1)
    t2 = ag.constant(A2)
    a1_hat = t1[:, :n]
    a2_hat = t2[:n, :]
    assembled = ag.maximum(a1_hat, a2_hat) if mode == "max" else (a1_hat + a2_hat) * 0.5
    affinity = ag.concat([assembled, t1[:, n : n + 1]], axis=1)
    zeros = ag.constant(np.zeros((n, n)))
    return AffinityBundle(M=zeros, M1=t1, M2=t2, A1=t1, A2=t2,
                          A1_hat=a1_hat, A2_hat=a2_hat, A=affinity)


class TestConfigs:
    def test_full_scale_feature_dimension(self):
        cfg = full_config()
        assert cfg.feature_dim == 520
        assert [t.out_channels for t in cfg.reduction_plan] == [60, 80, 100, 80, 60, 50, 40, 30, 20]
        assert cfg.compression[0].in_channels == 1040
        assert (cfg.n_m, cfg.gamma, cfg.input_h, cfg.input_w) == (80, 10.0, 900, 900)

    def test_full_scale_tap_geometry(self):
        cfg = full_config()
        shapes = cfg.tap_shapes()
        assert [s[0] for s in shapes] == [256, 512, 1024, 512, 256, 256, 256, 256, 256]
        assert [s[1] for s in shapes] == [225, 113, 56, 28, 14, 12, 10, 5, 3]

    def test_full_scale_tap_ids(self):
        cfg = full_config()
        assert [(t.subnet, t.layer_id) for t in cfg.reduction_plan] == [
            ("backbone", 16), ("backbone", 23), ("backbone", 36),
            ("extension", 5), ("extension", 11), ("extension", 17),
            ("extension", 23), ("extension", 29), ("extension", 35),
        ]

    def test_toy_profile_dimensions(self):
        cfg = toy_config()
        assert (cfg.input_h, cfg.input_w, cfg.n_m, cfg.feature_dim) == (128, 128, 8, 72)
        assert cfg.compression[0].in_channels == 144

    def test_invalid_assemble_mode_rejected(self):
        with pytest.raises(ValueError):
            replace(toy_config(), assemble_mode="median").validate()


class TestExtractFeatures:
    def test_zero_centers_give_zero_matrix(self):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(0))
        frame = np.zeros((cfg.input_h, cfg.input_w, 3), dtype=np.uint8)
        fm = model.extract_features(frame, np.zeros((0, 2)))
        assert fm.n_real == 0
        np.testing.assert_array_equal(fm.F.data, 0.0)
        assert fm.F.shape == (cfg.feature_dim, cfg.n_m)

    def test_dummy_columns_exactly_zero(self):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(1))
        frame = np.random.default_rng(2).integers(0, 256, size=(cfg.input_h, cfg.input_w, 3), dtype=np.uint8)
        fm = model.extract_features(frame, np.array([[0.5, 0.5]]))
        assert fm.n_real == 1
        np.testing.assert_array_equal(fm.F.data[:, 1:], 0.0)
        assert np.abs(fm.F.data[:, 0]).max() > 0

    def test_floor_cell_mapping(self):
        # center (0.9, 0.9) on a 2x2 grid lands in cell (1, 1)
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(3))
        frame = np.zeros((cfg.input_h, cfg.input_w, 3), dtype=np.uint8)
        frame[6:, 6:] = 255  # bright quadrant
        taps = model.forward_taps(ag.constant(
            (frame.astype(np.float32) / 255).transpose(2, 0, 1)[None]))
        grid = taps[("extension", 2)]
        assert grid.shape[2:] == (2, 2)
        fm = model.extract_features(frame, np.array([[0.9, 0.9]]))
        extension_part = fm.F.data[3:6, 0]  # second tap in plan order
        weight, bias = model.reductions[1]
        expected = weight.data @ grid.data[0, :, 1, 1] + bias.data[:, 0]
        np.testing.assert_allclose(extension_part, expected, rtol=1e-5)

    def test_cell_depends_only_on_normalized_center(self):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(4))
        frame = np.random.default_rng(5).integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        # all centers inside the same grid cells sample identical features
        a = model.extract_features(frame, np.array([[0.51, 0.52]]))
        b = model.extract_features(frame, np.array([[0.6, 0.58]]))
        grids = [6, 2]  # tap spatial sizes
        same_cells = all(
            math.floor(0.51 * g) == math.floor(0.6 * g) and math.floor(0.52 * g) == math.floor(0.58 * g)
            for g in grids
        )
        assert same_cells
        np.testing.assert_allclose(a.F.data, b.F.data, rtol=1e-6)

    def test_center_out_of_range_rejected(self):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(6))
        frame = np.zeros((12, 12, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            model.extract_features(frame, np.array([[1.0, 0.5]]))

    def test_too_many_centers_rejected(self):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(7))
        frame = np.zeros((12, 12, 3), dtype=np.uint8)
        centers = np.full((cfg.n_m + 1, 2), 0.5)
        with pytest.raises(ValueError):
            model.extract_features(frame, centers)


class TestPairTensor:
    def test_single_object(self):
        f_prev = ag.Tensor(np.array([[1.0], [2.0]]))
        f_cur = ag.Tensor(np.array([[3.0], [4.0]]))
        psi = ag.pair_tensor(f_prev, f_cur)
        np.testing.assert_array_equal(psi.data[:, 0, 0], [1.0, 2.0, 3.0, 4.0])

    def test_dummy_column_zero_block(self):
        f_prev = ag.Tensor(np.array([[0.0, 1.0], [0.0, 2.0]]))
        f_cur = ag.Tensor(np.ones((2, 2)))
        psi = ag.pair_tensor(f_prev, f_cur)
        np.testing.assert_array_equal(psi.data[:2, 0, :], 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        depth, count = 5, 4
        f_prev = rng.standard_normal((depth, count))
        f_cur = rng.standard_normal((depth, count))
        psi = ag.pair_tensor(ag.Tensor(f_prev), ag.Tensor(f_cur)).data
        for i in range(count):
            for j in range(count):
                np.testing.assert_allclose(psi[:, i, j], np.concatenate([f_prev[:, i], f_cur[:, j]]))


class TestAffinityFromScores:
    def test_single_slot_with_gamma_score(self):
        m = ag.constant(np.array([[10.0]]))
        bundle = affinity_from_scores(m, gamma=10.0)
        np.testing.assert_allclose(bundle.A1.data, [[0.5, 0.5]], atol=1e-12)

    def test_dominant_diagonal(self):
        m = ag.constant(np.array([[10.0, -10.0], [-10.0, 10.0]]))
        bundle = affinity_from_scores(m, gamma=10.0)
        for i in range(2):
            assert int(np.argmax(bundle.A1.data[i, :2])) == i

    def test_row_and_column_normalization(self):
        rng = np.random.default_rng(9)
        m = ag.constant(rng.uniform(-4, 4, size=(5, 5)))
        bundle = affinity_from_scores(m, gamma=10.0)
        np.testing.assert_allclose(bundle.A1.data.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(bundle.A2.data.sum(axis=0), 1.0, atol=1e-6)
        assert (bundle.A1.data >= 0).all() and (bundle.A1.data <= 1).all()

    def test_assembly_matches_elementwise_oracle(self):
        rng = np.random.default_rng(10)
        m = ag.constant(rng.uniform(-3, 3, size=(4, 4)))
        bundle = affinity_from_scores(m, gamma=10.0, assemble_mode="max")
        expected = np.maximum(bundle.A1_hat.data, bundle.A2_hat.data)
        np.testing.assert_allclose(bundle.A.data[:, :4], expected, atol=1e-12)
        np.testing.assert_allclose(bundle.A.data[:, 4], bundle.A1.data[:, 4], atol=1e-12)

    def test_masked_dummy_slots_are_zero(self):
        rng = np.random.default_rng(11)
        m = ag.constant(rng.uniform(-3, 3, size=(4, 4)))
        bundle = affinity_from_scores(m, gamma=10.0, n_real_prev=2, n_real_cur=2)
        np.testing.assert_array_equal(bundle.A1.data[:, 2:4], 0.0)
        np.testing.assert_array_equal(bundle.A2.data[2:4, :], 0.0)
        np.testing.assert_allclose(bundle.A1.data.sum(axis=1), 1.0, atol=1e-6)

    def test_max_dominates_mean(self):
        rng = np.random.default_rng(12)
        m = ag.constant(rng.uniform(-3, 3, size=(4, 4)))
        max_bundle = affinity_from_scores(m, gamma=10.0, assemble_mode="max")
        mean_bundle = affinity_from_scores(m, gamma=10.0, assemble_mode="mean")
        assert (max_bundle.A.data[:, :4] >= mean_bundle.A.data[:, :4] - 1e-12).all()

    def test_row_argmax_invariant_to_row_shift(self):
        rng = np.random.default_rng(13)
        raw = rng.uniform(-3, 3, size=(4, 4))
        base = affinity_from_scores(ag.constant(raw), gamma=10.0)
        shifted_scores = raw.copy()
        shifted_scores[1] += 5.0
        # shift the gamma border of row 1 identically by shifting before augmentation
        shifted = affinity_from_scores(ag.constant(shifted_scores), gamma=15.0)
        assert int(np.argmax(base.A1.data[1])) == int(np.argmax(shifted.A1.data[1]))


class TestLosses:
    def _perfect_bundle_and_label(self, k=2, n=3):
        ids = list(range(1, k + 1))
        label = build_label(ids, ids, n)
        A1 = np.zeros((n, n + 1))
        A1[np.arange(k), np.arange(k)] = 1.0
        A1[k:, n] = 1.0  # dummy rows park on the border column
        A2 = np.zeros((n + 1, n))
        A2[:n, :] = A1[:, :n]
        A2[n, :] = 1.0 - A2[:n, :].sum(axis=0)
        return bundle_from_probabilities(A1, A2), label

    def test_one_hot_consistent_bundle_gives_zero(self):
        bundle, label = self._perfect_bundle_and_label()
        terms = association_losses(bundle, label)
        values = terms.values()
        for key in ("forward", "backward", "consistency", "assembly", "total"):
            assert abs(values[key]) < 1e-6, (key, values[key])

    def test_probability_inverse_e_gives_unit_loss(self):
        label = build_label([1], [1], 2)
        A1 = np.zeros((2, 3))
        A1[0, 0] = math.exp(-1)
        A1[0, 2] = 1.0 - math.exp(-1)
        A1[1, 2] = 1.0
        A2 = np.zeros((3, 2))
        A2[0, 0] = math.exp(-1)
        A2[2, :] = [1.0 - math.exp(-1), 1.0]
        bundle = bundle_from_probabilities(A1, A2)
        terms = association_losses(bundle, label)
        assert abs(terms.forward.item() - 1.0) < 1e-6

    def test_matches_high_precision_oracle(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50
        rng = np.random.default_rng(14)
        for _ in range(10):
            n = 4
            prev = list(rng.choice(10, size=rng.integers(1, n + 1), replace=False))
            cur = list(rng.choice(10, size=rng.integers(1, n + 1), replace=False))
            label = build_label(prev, cur, n)
            m = ag.constant(rng.uniform(-3, 3, size=(n, n)))
            bundle = affinity_from_scores(m, gamma=2.0, n_real_prev=len(prev), n_real_cur=len(cur))
            terms = association_losses(bundle, label)

            l1, l2, l3 = label.trims()
            A1 = [[mpmath.mpf(v) for v in row] for row in bundle.A1.data]
            A2 = [[mpmath.mpf(v) for v in row] for row in bundle.A2.data]

            def masked_nll(mask, probs):
                total = mpmath.mpf(0)
                weight = int(mask.sum())
                if weight == 0:
                    return mpmath.mpf(0)
                for i in range(mask.shape[0]):
                    for j in range(mask.shape[1]):
                        if mask[i, j]:
                            total += -mpmath.log(probs[i][j])
                return total / weight

            expected_f = masked_nll(l1, A1)
            expected_b = masked_nll(l2, [row[:n] for row in A2])
            expected_c = mpmath.mpf(0)
            for i in range(len(prev)):
                for j in range(len(cur)):
                    expected_c += abs(A1[i][j] - A2[i][j])
            maxmat = [[max(A1[i][j], A2[i][j]) for j in range(n)] for i in range(n)]
            expected_a = masked_nll(l3, maxmat)
            expected_total = (expected_f + expected_b + expected_c + expected_a) / 4
            values = terms.values()
            for key, expected in (("forward", expected_f), ("backward", expected_b),
                                  ("consistency", expected_c), ("assembly", expected_a),
                                  ("total", expected_total)):
                got = values[key]
                reference = float(expected)
                assert abs(got - reference) <= 1e-6 * max(1.0, abs(reference)), (key, got, reference)

    def test_zero_denominator_contributes_zero(self):
        label = build_label([], [], 3)
        A1 = np.full((3, 4), 0.25)
        A2 = np.full((4, 3), 0.25)
        terms = association_losses(bundle_from_probabilities(A1, A2), label)
        assert terms.total.item() == 0.0

    def test_dummy_padding_leaves_losses_unchanged(self):
        # inference mode: normalization constants fixed, so only masking matters
        base_cfg = micro_config()
        rng = np.random.default_rng(15)
        model3 = AffinityModel(base_cfg, rng=rng, dtype=np.float64).eval()
        wide_cfg = replace(base_cfg, n_m=base_cfg.n_m + 2)
        model5 = AffinityModel(wide_cfg, rng=np.random.default_rng(0), dtype=np.float64).eval()
        model5.load_state_dict(model3.state_dict())

        frame_rng = np.random.default_rng(16)
        frame_a = frame_rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        frame_b = frame_rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        centers_a = np.array([[0.2, 0.3], [0.7, 0.6]])
        centers_b = np.array([[0.25, 0.35], [0.65, 0.55]])

        def losses(model, n_max):
            label = build_label([1, 2], [2, 3], n_max)
            fa = model.extract_features(frame_a, centers_a)
            fb = model.extract_features(frame_b, centers_b)
            bundle = model.estimate_affinity(fa, fb)
            return association_losses(bundle, label).values()

        narrow = losses(model3, base_cfg.n_m)
        wide = losses(model5, wide_cfg.n_m)
        for key in narrow:
            assert abs(narrow[key] - wide[key]) <= 1e-6, (key, narrow[key], wide[key])

    def test_shape_mismatch_rejected(self):
        bundle, _ = self._perfect_bundle_and_label(k=2, n=3)
        wrong = build_label([1], [1], 5)
        with pytest.raises(ag.ShapeError):
            association_losses(bundle, wrong)


class TestAssociationAccuracy:
    def test_perfect_prediction(self):
        label = build_label([1, 2], [1, 2], 4)
        A = np.zeros((4, 5))
        A[0, 0] = A[1, 1] = 1.0
        assert association_accuracy(A, label) == (2, 2)

    def test_ui_prediction_counts(self):
        label = build_label([1], [2], 3)  # object 1 departed
        A = np.zeros((3, 4))
        A[0, 3] = 1.0
        assert association_accuracy(A, label) == (1, 1)

    def test_wrong_prediction(self):
        label = build_label([1, 2], [1, 2], 3)
        A = np.zeros((3, 4))
        A[0, 1] = 1.0  # predicts the wrong object
        A[1, 1] = 1.0
        assert association_accuracy(A, label) == (1, 2)


class TestGradientFidelity:
    def test_full_loss_gradients_on_random_models(self):
        report = check_model_gradients(trials=3, seed=123)
        assert report.passed(), report.worst

    def test_corruption_detected(self):
        report = check_model_gradients(trials=1, seed=7, corrupt=True)
        assert not report.passed()


class TestTraining:
    def test_learning_rate_schedule(self):
        assert learning_rate(0.01, (50, 80, 100), 1) == pytest.approx(0.01)
        assert learning_rate(0.01, (50, 80, 100), 49) == pytest.approx(0.01)
        assert learning_rate(0.01, (50, 80, 100), 50) == pytest.approx(0.001)
        assert learning_rate(0.01, (50, 80, 100), 80) == pytest.approx(1e-4)
        assert learning_rate(0.01, (50, 80, 100), 100) == pytest.approx(1e-5)
        assert learning_rate(0.01, (50, 80, 100), 120) == pytest.approx(1e-5)

    def _micro_dataset(self, count=4):
        cfg = micro_config()
        rng = np.random.default_rng(17)
        samples = [random_pair_sample(cfg, rng) for _ in range(count)]

        class Fixed:
            def __len__(self):
                return len(samples)

            def materialize(self, index, rng):
                return samples[index]

        return cfg, Fixed()

    def test_zero_epochs_keeps_weights(self):
        cfg, dataset = self._micro_dataset()
        model = AffinityModel(cfg, rng=np.random.default_rng(18))
        before = {k: v.copy() for k, v in model.state_dict().items()}
        logs = train_model(model, dataset, TrainSettings(epochs=0))
        assert logs == []
        after = model.state_dict()
        for key in before:
            np.testing.assert_array_equal(before[key], after[key])

    def test_loss_decreases_on_tiny_dataset(self):
        cfg, dataset = self._micro_dataset()
        model = AffinityModel(cfg, rng=np.random.default_rng(19))
        logs = train_model(model, dataset, TrainSettings(lr=0.01, epochs=15, batch_size=2,
                                                         lr_drops=(10,), seed=1))
        assert logs[-1].mean_loss < logs[0].mean_loss
        assert logs[0].lr == pytest.approx(0.01)
        assert logs[-1].lr == pytest.approx(0.001)

    def test_empty_dataset_rejected(self):
        cfg = micro_config()

        class Empty:
            def __len__(self):
                return 0

            def materialize(self, index, rng):
                raise AssertionError

        with pytest.raises(ValueError):
            train_model(AffinityModel(cfg), Empty(), TrainSettings(epochs=1))


class TestStateRoundTrip:
    def test_save_load_preserves_outputs(self, tmp_path):
        cfg = micro_config()
        model = AffinityModel(cfg, rng=np.random.default_rng(20))
        sample = random_pair_sample(cfg, np.random.default_rng(21))
        model.eval()
        with ag.no_grad():
            before, _ = pair_batch_loss(model, [sample])
        path = tmp_path / "model.bin"
        model.save(path)
        from afftrack.model import load_model

        restored = load_model(path, cfg).eval()
        with ag.no_grad():
            after, _ = pair_batch_loss(restored, [sample])
        assert abs(before.item() - after.item()) < 1e-5

    def test_mismatched_state_rejected(self, tmp_path):
        cfg = micro_config()
        model = AffinityModel(cfg)
        state = model.state_dict()
        state.pop(next(iter(state)))
        with pytest.raises(ValueError, match="missing"):
            model.load_state_dict(state)
