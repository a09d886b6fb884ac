import numpy as np
import pytest

from hdrsplat.core_math import (
    Camera,
    covariance_from_rs,
    covariances_from_rs,
    covariances_from_rs_backward,
    look_at_camera,
    project_cloud,
    project_cloud_backward,
    project_gaussian,
    quaternion_to_rotation,
    quaternions_to_rotations,
    rotation_backward,
)


def identity_cam(fx=1.0, fy=1.0, cx=0.0, cy=0.0, w=4, h=4):
    return Camera(
        world_to_camera=np.eye(3),
        translation=np.zeros(3),
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        width=w,
        height=h,
    )


class TestQuaternion:
    def test_identity(self):
        assert np.allclose(quaternion_to_rotation([1, 0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = quaternion_to_rotation([np.sqrt(0.5), 0, 0, np.sqrt(0.5)])
        assert np.allclose(r @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_unnormalized_input_is_normalized(self):
        assert np.allclose(quaternion_to_rotation([2, 0, 0, 0]), np.eye(3))

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            quaternion_to_rotation([0, 0, 0, 0])

    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(50, 4))
        rs = quaternions_to_rotations(q)
        for r in rs:
            assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert np.isclose(np.linalg.det(r), 1.0, atol=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(10, 4))
        batch = quaternions_to_rotations(q)
        for i in range(10):
            assert np.allclose(batch[i], quaternion_to_rotation(q[i]))

    def test_rotation_backward_matches_fd(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(6, 4))
        g = rng.normal(size=(6, 3, 3))
        grad = rotation_backward(q, g)
        h = 1e-6
        for n in range(6):
            for j in range(4):
                qp = q.copy()
                qp[n, j] += h
                qm = q.copy()
                qm[n, j] -= h
                fd = (
                    np.sum(g[n] * quaternions_to_rotations(qp)[n])
                    - np.sum(g[n] * quaternions_to_rotations(qm)[n])
                ) / (2 * h)
                assert np.isclose(grad[n, j], fd, rtol=1e-6, atol=1e-9)


class TestCovariance:
    def test_identity(self):
        assert np.allclose(covariance_from_rs([1, 0, 0, 0], [1, 1, 1]), np.eye(3))

    def test_diagonal_scales(self):
        assert np.allclose(
            covariance_from_rs([1, 0, 0, 0], [2, 1, 1]), np.diag([4.0, 1.0, 1.0])
        )

    def test_rotated_scale_oracle(self):
        # explicit R S S^T R^T product for a 90-degree turn about z
        q = np.array([np.sqrt(0.5), 0, 0, np.sqrt(0.5)])
        s = np.array([2.0, 1.0, 1.0])
        r = quaternion_to_rotation(q)
        oracle = r @ np.diag(s) @ np.diag(s) @ r.T
        got = covariance_from_rs(q, s)
        assert np.allclose(got, oracle, atol=1e-12)
        assert np.allclose(got, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_symmetric_psd_property(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=(100, 4))
        s = np.exp(rng.normal(size=(100, 3)))
        covs = covariances_from_rs(q, s)
        assert np.allclose(covs, np.transpose(covs, (0, 2, 1)), atol=1e-15)
        eig = np.linalg.eigvalsh(covs)
        assert eig.min() >= -1e-9

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(8)
        q = rng.normal(size=(4, 4))
        s = np.exp(rng.normal(size=(4, 3)) * 0.3)
        g = rng.normal(size=(4, 3, 3))
        gq, gs = covariances_from_rs_backward(q, s, g)
        h = 1e-6

        def val(qa, sa, n):
            return np.sum(g[n] * covariances_from_rs(qa, sa)[n])

        for n in range(4):
            for j in range(4):
                qp, qm = q.copy(), q.copy()
                qp[n, j] += h
                qm[n, j] -= h
                fd = (val(qp, s, n) - val(qm, s, n)) / (2 * h)
                assert np.isclose(gq[n, j], fd, rtol=1e-5, atol=1e-8)
            for j in range(3):
                sp, sm = s.copy(), s.copy()
                sp[n, j] += h
                sm[n, j] -= h
                fd = (val(q, sp, n) - val(q, sm, n)) / (2 * h)
                assert np.isclose(gs[n, j], fd, rtol=1e-5, atol=1e-8)


class TestProjection:
    def test_on_axis_point(self):
        sp = project_gaussian([0, 0, 1.0], np.zeros((3, 3)), identity_cam(), lowpass=0.3)
        assert np.allclose(sp.mean2d, [0, 0])
        assert np.allclose(sp.cov2d, 0.3 * np.eye(2))
        assert sp.depth == 1.0

    def test_behind_camera_culled(self):
        assert project_gaussian([0, 0, -1.0], np.eye(3), identity_cam()) is None

    def test_isotropic_on_axis_oracle(self):
        # symbolic J Sigma J^T at an on-axis point: (fx^2 sigma^2 / d^2) I
        fx, d_z, sig2, lp = 50.0, 4.0, 0.09, 0.3
        cam = identity_cam(fx=fx, fy=fx)
        sp = project_gaussian([0, 0, d_z], sig2 * np.eye(3), cam, lowpass=lp)
        expect = (fx**2 * sig2 / d_z**2) * np.eye(2) + lp * np.eye(2)
        assert np.allclose(sp.cov2d, expect, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            project_gaussian([np.nan, 0, 1], np.eye(3), identity_cam())

    def test_translation_equivariance(self):
        rng = np.random.default_rng(11)
        cam = look_at_camera([3.0, -2.0, 1.5], [0, 0, 0], 40, 40, 32, 32)
        mu = rng.normal(size=3)
        cov = covariance_from_rs(rng.normal(size=4), np.exp(rng.normal(size=3) * 0.2))
        shift = rng.normal(size=3)
        base = project_gaussian(mu, cov, cam)
        cam2 = Camera(
            world_to_camera=cam.world_to_camera,
            translation=cam.translation - cam.world_to_camera @ shift,
            fx=cam.fx,
            fy=cam.fy,
            cx=cam.cx,
            cy=cam.cy,
            width=cam.width,
            height=cam.height,
        )
        moved = project_gaussian(mu + shift, cov, cam2)
        assert np.allclose(base.mean2d, moved.mean2d, atol=1e-9)
        assert np.allclose(base.cov2d, moved.cov2d, atol=1e-9)
        assert np.isclose(base.depth, moved.depth, atol=1e-9)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(12)
        cam = look_at_camera([0, -5.0, 1.0], [0, 0, 0], 30, 35, 16, 16)
        mu = rng.normal(size=(20, 3))
        cov = covariances_from_rs(rng.normal(size=(20, 4)), np.exp(rng.normal(size=(20, 3)) * 0.3))
        m2, c2, depth, vis = project_cloud(mu, cov, cam)
        for i in range(20):
            sp = project_gaussian(mu[i], cov[i], cam, gaussian_index=i)
            if sp is None:
                assert not vis[i]
            else:
                assert vis[i]
                assert np.allclose(m2[i], sp.mean2d)
                assert np.allclose(c2[i], sp.cov2d)
                assert np.isclose(depth[i], sp.depth)

    def test_projection_jacobian_vs_central_differences(self):
        # the spec-level oracle: d(splat)/d(mu) against h=1e-4 differences
        rng = np.random.default_rng(13)
        cam = look_at_camera([1.0, -4.0, 2.0], [0, 0, 0], 45, 45, 24, 24)
        mu = rng.normal(size=(5, 3)) * 0.5
        cov = covariances_from_rs(rng.normal(size=(5, 4)), np.exp(rng.normal(size=(5, 3)) * 0.2))
        gm = rng.normal(size=(5, 2))
        gc = rng.normal(size=(5, 2, 2))
        gd = rng.normal(size=5)
        _, _, _, vis = project_cloud(mu, cov, cam)
        assert vis.all()
        gmu, gcov = project_cloud_backward(mu, cov, cam, vis, gm, gc, gd)
        h = 1e-4

        def value(mu_arr, cov_arr, n):
            m2, c2, depth, _ = project_cloud(mu_arr, cov_arr, cam)
            return (
                np.dot(gm[n], m2[n]) + np.sum(gc[n] * c2[n]) + gd[n] * depth[n]
            )

        for n in range(5):
            for j in range(3):
                mp, mm = mu.copy(), mu.copy()
                mp[n, j] += h
                mm[n, j] -= h
                fd = (value(mp, cov, n) - value(mm, cov, n)) / (2 * h)
                assert abs(gmu[n, j] - fd) / max(abs(fd), 1e-9) < 1e-5
            for a in range(3):
                for b in range(3):
                    cp, cm = cov.copy(), cov.copy()
                    cp[n, a, b] += h
                    cm[n, a, b] -= h
                    fd = (value(mu, cp, n) - value(mu, cm, n)) / (2 * h)
                    assert abs(gcov[n, a, b] - fd) / max(abs(fd), 1e-9) < 1e-5


class TestCamera:
    def test_bad_rotation_rejected(self):
        with pytest.raises(ValueError):
            Camera(
                world_to_camera=np.eye(3) * 2.0,
                translation=np.zeros(3),
                fx=1,
                fy=1,
                cx=0,
                cy=0,
                width=4,
                height=4,
            )

    def test_bad_size_rejected(self):
        with pytest.raises(ValueError):
            identity_cam(w=0)

    def test_look_at_points_camera_at_target(self):
        cam = look_at_camera([0, -3, 0], [0, 0, 0], 10, 10, 8, 8)
        t = cam.to_camera(np.zeros((1, 3)))[0]
        assert np.allclose(t[:2], 0, atol=1e-12)
        assert np.isclose(t[2], 3.0)
