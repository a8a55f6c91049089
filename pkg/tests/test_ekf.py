import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fourierslam import ekf
from fourierslam.errors import DataError, NumericalError
from fourierslam.trajectory import Trajectory

X = np.array([1.0, -2.0, 0.5])
D = np.array([0.3, -0.1, 0.7])


def generic_update(x, p, z, h, q):
    """Reference Kalman update with an explicit inverse."""
    s = h @ p @ h.T + q
    k = p @ h.T @ np.linalg.inv(s)
    return x + k @ (z - h @ x), (np.eye(3) - k @ h) @ p


def straight_line(n=20, dt=0.1, start=0.0):
    t = start + np.arange(n) * dt
    pos = np.stack([t, 0.5 * t, np.sin(t)], axis=1)
    return Trajectory(t, np.stack([np.eye(3)] * n), pos)


def test_predict():
    s = ekf.EkfState(X, np.eye(3) * 0.3)
    same = ekf.ekf_predict(s, np.zeros(3), np.zeros((3, 3)))
    assert np.array_equal(same.x, s.x) and np.array_equal(same.P, s.P)
    grown = ekf.ekf_predict(s, np.zeros(3), np.eye(3))
    assert np.array_equal(grown.P, s.P + np.eye(3))
    moved = ekf.ekf_predict(ekf.EkfState(np.ones(3), np.eye(3)), np.array([0.5, 0, -0.5]), np.zeros((3, 3)))
    np.testing.assert_array_equal(moved.x, [1.5, 1.0, 0.5])


def test_update_zero_innovation():
    m = ekf.MeasurementModel()
    post = ekf.ekf_update(ekf.EkfState(X, np.eye(3)), np.concatenate([X, X]), m)
    np.testing.assert_array_equal(post.x, X)


def test_update_two_thirds():
    m = ekf.MeasurementModel(np.eye(6), np.zeros((3, 3)))
    post = ekf.ekf_update(ekf.EkfState(X, np.eye(3)), np.concatenate([X + D, X + D]), m)
    assert np.max(np.abs(post.x - (X + 2.0 / 3.0 * D))) <= 1e-12
    np.testing.assert_allclose(post.P, np.eye(3) / 3.0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_update_matches_generic_solve(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((6, 6))
    p = a @ a.T + 0.1 * np.eye(3)
    q = b @ b.T + 0.1 * np.eye(6)
    x, z = rng.standard_normal(3), rng.standard_normal(6)
    post = ekf.ekf_update(ekf.EkfState(x, p), z, ekf.MeasurementModel(q, np.zeros((3, 3))))
    ref_x, ref_p = generic_update(x, p, z, ekf.H_STACKED, q)
    np.testing.assert_allclose(post.x, ref_x, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(post.P, (ref_p + ref_p.T) / 2, rtol=1e-8, atol=1e-9)


def test_large_q_ignores_measurements():
    m = ekf.MeasurementModel(1e9 * np.eye(6), np.zeros((3, 3)))
    post = ekf.ekf_update(ekf.EkfState(X, np.eye(3)), np.concatenate([X + D, X + D]), m)
    assert np.linalg.norm(post.x - X) <= 1e-6 * np.linalg.norm(D)


def test_small_q_trusts_measurements():
    m = ekf.MeasurementModel(1e-10 * np.eye(6), np.zeros((3, 3)))
    post = ekf.ekf_update(ekf.EkfState(X, np.eye(3)), np.concatenate([X + D, X + D]), m)
    assert np.max(np.abs(post.x - (X + D))) <= 1e-9


def test_ill_conditioned_innovation_raises():
    m = ekf.MeasurementModel(1e-14 * np.eye(6), np.zeros((3, 3)))
    with pytest.raises(NumericalError):
        ekf.ekf_update(ekf.EkfState(X, np.eye(3)), np.zeros(6), m)


def test_covariance_stays_psd_10k_steps():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((6, 6))
    m = ekf.MeasurementModel(a @ a.T / 6 + 0.01 * np.eye(6), 1e-3 * np.eye(3))
    s = ekf.EkfState(np.zeros(3), np.eye(3))
    for _ in range(10_000):
        s = ekf.ekf_predict(s, 0.1 * rng.standard_normal(3), m.R)
        s = ekf.ekf_update(s, rng.standard_normal(6), m) if rng.random() < 0.8 else ekf.ekf_update_visual(s, rng.standard_normal(3), m)
        assert np.max(np.abs(s.P - s.P.T)) <= 1e-9
        assert np.linalg.eigvalsh(s.P).min() >= -1e-9


def test_model_validation():
    with pytest.raises(DataError):
        ekf.MeasurementModel(np.zeros((6, 6)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        ekf.MeasurementModel(np.eye(6), -np.eye(3))
    with pytest.raises(DataError):
        ekf.MeasurementModel(np.eye(5), np.zeros((3, 3)))
    m = ekf.MeasurementModel.from_diagonals([0.1, 0.2, 0.3], 0.5, 1e-3)
    np.testing.assert_array_equal(np.diag(m.Q), [0.1, 0.2, 0.3, 0.5, 0.5, 0.5])
    np.testing.assert_array_equal(m.H, ekf.H_STACKED)
    with pytest.raises(DataError):
        ekf.EkfState(np.zeros(3), np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))


def test_fuse_identical_streams():
    v = straight_line()
    g = ekf.GnssTrack(v.timestamps, v.translations)
    fused = ekf.fuse_streams(v, g)
    assert len(fused) == len(v)
    np.testing.assert_array_equal(fused.timestamps, v.timestamps)
    assert np.max(np.abs(fused.translations - v.translations)) <= 1e-9


def test_fuse_single_step_two_thirds():
    p = np.array([2.0, 0.0, -1.0])
    v = Trajectory(np.array([0.0]), np.eye(3)[None], (p + D)[None])
    g = ekf.GnssTrack(np.array([0.0]), (p + D)[None])
    cfg = ekf.FusionConfig(ekf.MeasurementModel(np.eye(6), np.zeros((3, 3))), initial_covariance=np.eye(3), initial_position=p)
    fused = ekf.fuse_streams(v, g, cfg)
    assert np.max(np.abs(fused.translations[0] - (p + 2.0 / 3.0 * D))) <= 1e-12


def test_fuse_gnss_offset_one_third_when_prior_at_visual():
    v = Trajectory(np.array([0.0]), np.eye(3)[None], X[None])
    g = ekf.GnssTrack(np.array([0.0]), (X + D)[None])
    cfg = ekf.FusionConfig(ekf.MeasurementModel(np.eye(6), np.zeros((3, 3))), initial_covariance=np.eye(3))
    np.testing.assert_allclose(ekf.fuse_streams(v, g, cfg).translations[0], X + D / 3.0, atol=1e-12)


def test_fuse_unassociated_gnss_is_visual_only():
    v = straight_line(dt=0.25)  # spacing well beyond 2 * max_dt, so shifted fixes never match
    cfg = ekf.FusionConfig()
    far = ekf.GnssTrack(v.timestamps + 2 * cfg.max_dt, v.translations + 5.0)
    fused = ekf.fuse_streams(v, far, cfg)
    m = cfg.model
    s = ekf.EkfState(v.translations[0], m.Q[:3, :3])
    for i in range(len(v)):
        if i:
            s = ekf.ekf_predict(s, v.translations[i] - v.translations[i - 1], m.R)
        s = ekf.ekf_update_visual(s, v.translations[i], m)
        np.testing.assert_array_equal(fused.translations[i], s.x)


def test_fuse_deterministic_and_pulls_toward_gnss():
    v = straight_line()
    g = ekf.GnssTrack(v.timestamps + 0.01, v.translations + [0.2, 0.0, 0.0])
    a, b = ekf.fuse_streams(v, g), ekf.fuse_streams(v, g)
    assert np.array_equal(a.translations, b.translations)
    gap = a.translations[-1, 0] - v.translations[-1, 0]
    assert 0.0 < gap < 0.2


def test_nearest_within():
    t = np.array([0.0, 0.1, 0.2])
    assert ekf.nearest_within(t, 0.14, 0.05) == 1
    assert ekf.nearest_within(t, 0.16, 0.05) == 2
    assert ekf.nearest_within(t, 0.3, 0.05) is None
    assert ekf.nearest_within(t, -0.06, 0.05) is None


def test_gnss_csv_roundtrip(tmp_path):
    g = ekf.GnssTrack(np.array([0.0, 0.5, 1.25]), np.array([[1.0, 2, 3], [4, 5, 6], [7, 8, 9.125]]))
    ekf.save_gnss_csv(g, tmp_path / "g.csv")
    h = ekf.load_gnss_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(h.timestamps, g.timestamps)
    np.testing.assert_array_equal(h.positions, g.positions)
    (tmp_path / "n.csv").write_text("0,1,2,3\n1,1,2,3\n")
    assert len(ekf.load_gnss_csv(tmp_path / "n.csv")) == 2


@pytest.mark.parametrize("text", ["0,1,2\n", "0,1,2,x\n", "1,0,0,0\n0,0,0,0\n", "0,nan,0,0\n"])
def test_gnss_csv_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataError, match="bad.csv"):
        ekf.load_gnss_csv(path)


def test_fuse_empty_streams():
    v = straight_line(3)
    with pytest.raises(DataError):
        ekf.fuse_streams(v, ekf.GnssTrack(np.zeros(0), np.zeros((0, 3))))
