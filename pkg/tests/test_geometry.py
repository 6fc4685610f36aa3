import numpy as np
import pytest

from rlvio.geometry import (
    Quat,
    from_matrix,
    normalize,
    quat_angle,
    quat_conj,
    quat_err,
    quat_mul,
    rotate,
    slerp,
    so3_exp,
    so3_log,
    to_matrix,
)

from oracles import quat_to_matrix_oracle, rodrigues_matrix, so3_exp_series


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return normalize(Quat(*q))


def test_exp_zero_is_identity():
    q = so3_exp((0.0, 0.0, 0.0))
    assert q.w == 1.0 and q.x == 0.0 and q.y == 0.0 and q.z == 0.0


def test_exp_half_turn_about_x():
    q = so3_exp((np.pi, 0.0, 0.0))
    assert abs(q.w) < 1e-15
    assert abs(q.x - 1.0) < 1e-15


def test_exp_matches_series_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        phi = rng.uniform(-1, 1, 3)
        phi *= rng.uniform(0, np.pi - 1e-6) / np.linalg.norm(phi)
        r_lib = to_matrix(so3_exp(phi))
        assert np.max(np.abs(r_lib - so3_exp_series(phi))) < 1e-10
        assert np.max(np.abs(r_lib - rodrigues_matrix(phi))) < 1e-10


def test_log_identity_and_half_turn():
    assert np.allclose(so3_log(Quat()), 0.0)
    assert np.allclose(so3_log(Quat(0.0, 1.0, 0.0, 0.0)), [np.pi, 0, 0])


def test_log_rejects_non_unit():
    with pytest.raises(ValueError):
        so3_log(Quat(1.1, 0.0, 0.0, 0.0))


def test_exp_log_roundtrip_1000():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        q = random_unit_quat(rng)
        back = so3_exp(so3_log(q))
        worst = max(worst, quat_angle(back, q))
    assert worst < 1e-9


def test_small_angle_branches():
    for mag in (1e-12, 1e-9, 5e-9):
        phi = np.array([mag, 0.0, 0.0])
        q = so3_exp(phi)
        assert abs(q.norm() - 1.0) < 1e-12
        assert np.allclose(so3_log(q), phi, atol=1e-15)


def test_mul_identity_and_inverse():
    rng = np.random.default_rng(3)
    q = random_unit_quat(rng)
    assert quat_angle(quat_mul(Quat(), q), q) < 1e-15
    assert quat_angle(quat_mul(q, quat_conj(q))) < 1e-12


def test_mul_matches_matrix_product():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        left = to_matrix(quat_mul(a, b))
        right = to_matrix(a) @ to_matrix(b)
        assert np.max(np.abs(left - right)) < 1e-12


def test_mul_associative():
    rng = np.random.default_rng(9)
    for _ in range(30):
        a, b, c = (random_unit_quat(rng) for _ in range(3))
        lhs = quat_mul(quat_mul(a, b), c)
        rhs = quat_mul(a, quat_mul(b, c))
        assert max(abs(lhs.w - rhs.w), abs(lhs.x - rhs.x), abs(lhs.y - rhs.y), abs(lhs.z - rhs.z)) < 1e-12


def test_quat_err_zero_and_double_cover():
    rng = np.random.default_rng(13)
    q = random_unit_quat(rng)
    assert np.linalg.norm(quat_err(q, q)) < 1e-12
    neg = Quat(-q.w, -q.x, -q.y, -q.z)
    assert np.linalg.norm(quat_err(q, neg)) < 1e-12


def test_quat_err_first_order():
    rng = np.random.default_rng(17)
    for _ in range(20):
        q = random_unit_quat(rng)
        delta = rng.standard_normal(3)
        delta *= 1e-3 / np.linalg.norm(delta)
        perturbed = quat_mul(q, so3_exp(delta))
        err = quat_err(perturbed, q)
        assert np.linalg.norm(err - delta) < 1e-6


def test_slerp_endpoints():
    rng = np.random.default_rng(19)
    q0, q1 = random_unit_quat(rng), random_unit_quat(rng)
    assert quat_angle(slerp(q0, q1, 0.0), q0) < 1e-12
    assert quat_angle(slerp(q0, q1, 1.0), q1) < 1e-9


def test_slerp_midpoint_of_z_rotation():
    q0 = Quat()
    q1 = so3_exp((0.0, 0.0, np.pi / 2))
    mid = slerp(q0, q1, 0.5)
    assert quat_angle(mid, so3_exp((0.0, 0.0, np.pi / 4))) < 1e-12


def test_slerp_angle_linear_in_weight():
    rng = np.random.default_rng(23)
    q0, q1 = random_unit_quat(rng), random_unit_quat(rng)
    total = quat_angle(q1, q0)
    for w in np.linspace(0.0, 1.0, 20):
        ang = quat_angle(slerp(q0, q1, float(w)), q0)
        assert abs(ang - w * total) < 1e-9


def test_slerp_rejects_weight_outside_unit_interval():
    with pytest.raises(ValueError):
        slerp(Quat(), Quat(), 1.5)
    with pytest.raises(ValueError):
        slerp(Quat(), Quat(), -0.1)


def test_slerp_shortest_path():
    # 170 deg and -170 deg about x are 20 deg apart, not 340
    q0 = so3_exp((np.deg2rad(170), 0, 0))
    q1 = so3_exp((-np.deg2rad(170), 0, 0))
    mid = slerp(q0, q1, 0.5)
    assert quat_angle(mid, q0) < np.deg2rad(11)


def test_unit_norm_and_canonical_sign_everywhere():
    rng = np.random.default_rng(29)
    for _ in range(200):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        for q in (quat_mul(a, b), slerp(a, b, float(rng.uniform(0, 1))), so3_exp(rng.uniform(-3, 3, 3))):
            assert abs(q.norm() - 1.0) < 1e-9
            assert q.w >= 0.0


def test_rotate_matches_matrix():
    rng = np.random.default_rng(31)
    for _ in range(50):
        q = random_unit_quat(rng)
        v = rng.standard_normal(3)
        assert np.allclose(rotate(q, v), quat_to_matrix_oracle(q) @ v, atol=1e-12)


def test_matrix_roundtrip():
    rng = np.random.default_rng(37)
    for _ in range(100):
        q = random_unit_quat(rng)
        assert quat_angle(from_matrix(to_matrix(q)), q) < 1e-9
