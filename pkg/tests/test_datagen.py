import numpy as np
import pytest

from peerboost.datagen import (
    MoonsConfig,
    build_stumps,
    export_csv,
    feature_ranges,
    generate_moons,
    load_csv,
    margin_matrix,
    oracle_graph,
)
from peerboost.domain import StumpEnsemble, UserData

from oracles import exp_mp


PAPER_SCALE = MoonsConfig(preset="clustered", K=100,
                          cluster_sizes=(10, 20, 30, 40),
                          cluster_angles_deg=(45, 135, 225, 315),
                          m_train_range=(3, 15), m_test=100, D=20,
                          label_flip_frac=0.05, seed=12)


class TestGenerateMoons:
    def test_benchmark_scale(self):
        ds, angles = generate_moons(PAPER_SCALE)
        assert ds.K == 100
        assert ds.feature_dim == 20
        assert len(angles) == 100
        sizes = ds.train_sizes()
        assert sizes.min() >= 3 and sizes.max() <= 15
        assert all(u.test_x.shape == (100, 20) for u in ds.users)

    def test_identity_rotation_single_user(self):
        cfg = MoonsConfig(preset="clustered", K=1, cluster_sizes=(1,),
                          cluster_angles_deg=(0.0,), angle_noise_std=0.0,
                          m_train_range=(50, 50), m_test=0, D=2,
                          label_flip_frac=0.0, seed=5)
        ds, angles = generate_moons(cfg)
        assert angles[0] == 0.0
        u = ds.users[0]
        assert set(np.unique(u.train_y)) == {-1.0, 1.0}
        # unrotated crescents live in a known box (plus noise slack)
        assert u.train_x[:, 0].min() > -1.6 and u.train_x[:, 0].max() < 2.6
        assert u.train_x[:, 1].min() > -1.1 and u.train_x[:, 1].max() < 1.6
        # the generator's known boundary: positive crescent sits higher
        assert (u.train_x[u.train_y > 0, 1].mean()
                > u.train_x[u.train_y < 0, 1].mean())

    def test_same_seed_bit_identical(self):
        ds1, a1 = generate_moons(PAPER_SCALE)
        ds2, a2 = generate_moons(PAPER_SCALE)
        np.testing.assert_array_equal(a1, a2)
        for u, v in zip(ds1.users, ds2.users):
            np.testing.assert_array_equal(u.train_x, v.train_x)
            np.testing.assert_array_equal(u.train_y, v.train_y)
            np.testing.assert_array_equal(u.test_x, v.test_x)
            np.testing.assert_array_equal(u.test_y, v.test_y)

    def test_flip_count_exact(self):
        base = MoonsConfig(preset="clustered", K=6, cluster_sizes=(6,),
                           cluster_angles_deg=(30.0,), m_train_range=(20, 40),
                           m_test=10, D=3, label_flip_frac=0.0, seed=9)
        flipped = MoonsConfig(**{**base.__dict__, "label_flip_frac": 0.13})
        ds0, _ = generate_moons(base)
        ds1, _ = generate_moons(flipped)
        for u0, u1 in zip(ds0.users, ds1.users):
            np.testing.assert_array_equal(u0.train_x, u1.train_x)
            n_diff = int(np.sum(u0.train_y != u1.train_y))
            assert n_diff == int(np.floor(0.13 * u0.m))
            # test labels are never flipped
            np.testing.assert_array_equal(u0.test_y, u1.test_y)

    def test_per_user_preset(self):
        cfg = MoonsConfig(preset="per_user", K=12, angle_noise_std=45.0,
                          m_train_range=(3, 20), m_test=5, D=4, seed=2)
        ds, angles = generate_moons(cfg)
        assert ds.K == 12
        assert np.std(angles) > 0

    def test_cluster_mismatch_rejected(self):
        cfg = MoonsConfig(preset="clustered", K=5, cluster_sizes=(2, 2),
                          cluster_angles_deg=(0.0, 90.0))
        with pytest.raises(ValueError):
            generate_moons(cfg)


class TestOracleGraph:
    def test_equal_angles_weight_one(self):
        g = oracle_graph([30.0, 30.0], sigma=0.1)
        assert g.weight(0, 1) == pytest.approx(1.0)

    def test_ninety_degrees_dropped(self):
        # exp((cos(90 deg) - 1)/0.1) = exp(-10), checked against an
        # arbitrary-precision scalar oracle, below the 1e-4 drop threshold
        expected = exp_mp(-10.0)
        assert expected == pytest.approx(4.5399929762e-05, rel=1e-9)
        g = oracle_graph([0.0, 90.0], sigma=0.1, drop_threshold=1e-4)
        assert g.edge_count == 0
        g_keep = oracle_graph([0.0, 90.0], sigma=0.1, drop_threshold=1e-6)
        assert g_keep.weight(0, 1) == pytest.approx(expected, rel=1e-12)

    def test_opposite_angles_dropped(self):
        expected = exp_mp(-20.0)
        g = oracle_graph([10.0, 190.0], sigma=0.1, drop_threshold=1e-4)
        assert g.edge_count == 0
        g_keep = oracle_graph([10.0, 190.0], sigma=0.1, drop_threshold=0.0)
        assert g_keep.weight(0, 1) == pytest.approx(expected, rel=1e-12)

    def test_weights_in_unit_interval_and_symmetric(self):
        rng = np.random.default_rng(3)
        angles = rng.uniform(0, 360, 12)
        g = oracle_graph(angles, sigma=0.5, drop_threshold=0.0)
        for k, l, w in g.edges():
            assert 0.0 < w <= 1.0
            assert g.weight(l, k) == w

    def test_monotone_in_folded_difference(self):
        base = 17.0
        deltas = [5.0, 40.0, 90.0, 170.0, 220.0, 350.0]  # folded: 5,40,90,170,140,10
        folded = [min(d % 360.0, 360.0 - (d % 360.0)) for d in deltas]
        g = oracle_graph([base] + [base + d for d in deltas], sigma=1.0,
                         drop_threshold=0.0)
        weights = [g.weight(0, i + 1) for i in range(len(deltas))]
        order = np.argsort(folded)
        sorted_w = [weights[i] for i in order]
        assert all(a >= b - 1e-15 for a, b in zip(sorted_w, sorted_w[1:]))

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            oracle_graph([0.0, 1.0], sigma=0.0)


class TestBuildStumps:
    def test_midpoint(self):
        st = build_stumps([(0.0, 1.0)], per_dim=1)
        assert st.n == 1
        assert st.thresholds[0] == pytest.approx(0.5)

    def test_counts(self):
        st = build_stumps([(0.0, 1.0), (-1.0, 1.0)], per_dim=3)
        assert st.n == 6
        assert int(np.sum(st.features == 0)) == 3

    def test_benchmark_size(self):
        st = build_stumps([(-2.0, 2.0)] * 20, per_dim=10)
        assert st.n == 200

    def test_thresholds_strictly_inside(self):
        st = build_stumps([(0.0, 1.0), (5.0, 6.0)], per_dim=4)
        for f, t, _ in st.stumps():
            lo, hi = (0.0, 1.0) if f == 0 else (5.0, 6.0)
            assert lo < t < hi

    def test_degenerate_range(self):
        with pytest.raises(ValueError):
            build_stumps([(1.0, 1.0)], per_dim=2)

    def test_polarity_default_positive(self):
        st = build_stumps([(0.0, 1.0)], per_dim=3)
        assert np.all(st.polarities == 1)


class TestMarginMatrix:
    def test_hand_evaluated_two_by_two(self):
        st = StumpEnsemble([0, 0], [0.5, 0.1])
        user = UserData(train_x=np.array([[0.2], [0.8]]),
                        train_y=np.array([1.0, -1.0]))
        A = margin_matrix(user, st)
        # row 1: h = (sign(-0.3), sign(0.1)) = (-1, +1), y=+1 -> (-1, +1)
        # row 2: h = (sign(0.3), sign(0.7)) = (+1, +1), y=-1 -> (-1, -1)
        np.testing.assert_array_equal(A, [[-1.0, 1.0], [-1.0, -1.0]])

    def test_entries_pm_one(self):
        ds, _ = generate_moons(MoonsConfig(preset="per_user", K=3,
                                           m_train_range=(4, 6), m_test=0,
                                           D=3, seed=1))
        st = build_stumps(feature_ranges(ds), per_dim=3)
        for u in ds.users:
            A = margin_matrix(u, st)
            assert set(np.unique(A)) <= {-1.0, 1.0}


class TestCsv:
    def test_roundtrip(self, tmp_path):
        ds, _ = generate_moons(MoonsConfig(preset="per_user", K=3,
                                           m_train_range=(2, 4), m_test=2,
                                           D=3, seed=8))
        path = tmp_path / "data.csv"
        export_csv(ds, path)
        ds2 = load_csv(path)
        assert ds2.K == 3
        for u, v in zip(ds.users, ds2.users):
            np.testing.assert_array_equal(u.train_x, v.train_x)
            np.testing.assert_array_equal(u.train_y, v.train_y)
            np.testing.assert_array_equal(u.test_x, v.test_x)
            assert u.confidence == pytest.approx(v.confidence)

    def test_two_users(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "user_id,split,y,f0,f1\n"
            "a,train,1,0.0,1.0\n"
            "a,train,-1,1.0,0.0\n"
            "b,train,1,0.5,0.5\n"
            "b,train,-1,0.2,0.2\n")
        ds = load_csv(path)
        assert ds.K == 2
        assert ds.feature_dim == 2

    def test_bad_label_reports_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("user_id,split,y,f0\n"
                        "a,train,1,0.0\n"
                        "a,train,0,1.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="no users"):
            load_csv(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("user_id,split,y,f0\n")
        with pytest.raises(ValueError, match="no users"):
            load_csv(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("user_id,split,y,f0,f1\n"
                        "a,train,1,0.0\n")
        with pytest.raises(ValueError, match="line 2"):
            load_csv(path)

    def test_unknown_split(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("user_id,split,y,f0\n"
                        "a,validation,1,0.0\n")
        with pytest.raises(ValueError, match="line 2"):
            load_csv(path)
