import numpy as np
import pytest

from hdrsplat.rasterizer import (
    BlendRecord,
    rasterize_backward,
    rasterize_forward,
    sort_splats,
)
from hdrsplat.scenegen import reference_blend


def random_scene(rng, m=5, w=8, h=8, c=2, alpha_range=(0.2, 0.8)):
    mean2d = rng.uniform(1.0, w - 2.0, size=(m, 2))
    cov2d = np.zeros((m, 2, 2))
    for i in range(m):
        a = rng.uniform(0.5, 2.5)
        b = rng.uniform(-0.3, 0.3)
        cc = rng.uniform(0.5, 2.5)
        cov2d[i] = [[a, b], [b, cc]]
    opacity = rng.uniform(*alpha_range, size=m)
    payload = rng.uniform(0.0, 1.0, size=(m, c))
    background = rng.uniform(0.0, 1.0, size=c)
    order = sort_splats(rng.uniform(1.0, 9.0, size=m))
    return (
        mean2d[order],
        cov2d[order],
        opacity[order],
        payload[order],
        background,
    )


class TestSort:
    def test_ascending(self):
        assert list(sort_splats(np.array([3.0, 1.0, 2.0]))) == [1, 2, 0]

    def test_stable_ties(self):
        assert list(sort_splats(np.array([1.0, 1.0]))) == [0, 1]

    def test_empty(self):
        assert list(sort_splats(np.array([]))) == []

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            sort_splats(np.array([1.0, np.nan]))


class TestForward:
    def test_empty_scene_is_background(self):
        bg = np.array([0.2, 0.7])
        img, alpha, rec = rasterize_forward(
            np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros((0, 2)), bg, 4, 3
        )
        assert np.allclose(img, bg[None, None, :])
        assert np.allclose(alpha, 0.0)
        assert rec.entries == []

    def test_single_huge_splat(self):
        # alpha -> 0.99 with a flat Gaussian: pixel = 0.99 p + 0.01 bg
        img, alpha, _ = rasterize_forward(
            np.array([[2.0, 2.0]]),
            np.array([[[1e6, 0.0], [0.0, 1e6]]]),
            np.array([0.999999]),
            np.array([[1.0]]),
            np.array([0.5]),
            5,
            5,
        )
        assert np.allclose(img[2, 2, 0], 0.99 * 1.0 + 0.01 * 0.5, atol=1e-6)
        assert np.allclose(alpha[2, 2], 0.99, atol=1e-6)

    def test_two_overlapping_splats_oracle(self):
        # Eq-by-hand: front a=0.5 p=1, back a=0.5 p=0, bg 0 -> 0.5
        mean2d = np.array([[1.0, 1.0], [1.0, 1.0]])
        cov2d = np.tile(np.eye(2) * 1e6, (2, 1, 1))
        img, _, rec = rasterize_forward(
            mean2d,
            cov2d,
            np.array([0.5, 0.5]),
            np.array([[1.0], [0.0]]),
            np.zeros(1),
            3,
            3,
        )
        assert np.allclose(img[1, 1, 0], 0.5, atol=1e-9)
        terms = rec.pixel_terms(1, 1)
        assert [t[0] for t in terms] == [0, 1]
        assert np.isclose(terms[1][2], 0.5)  # transmittance after the front splat

    def test_non_psd_splat_skipped_and_counted(self):
        img, _, rec = rasterize_forward(
            np.array([[1.0, 1.0]]),
            np.array([[[1.0, 2.0], [2.0, 1.0]]]),  # indefinite
            np.array([0.9]),
            np.array([[1.0]]),
            np.zeros(1),
            3,
            3,
        )
        assert rec.skipped_non_psd == 1
        assert np.allclose(img, 0.0)

    def test_matches_reference_blend(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            scene = random_scene(rng, m=int(rng.integers(1, 12)), alpha_range=(0.1, 0.99))
            img, _, _ = rasterize_forward(*scene, 8, 8)
            ref = reference_blend(*scene, 8, 8)
            assert np.max(np.abs(img - ref)) <= 1e-10

    def test_linearity_in_payload(self):
        rng = np.random.default_rng(22)
        mean2d, cov2d, opacity, p1, b1 = random_scene(rng, m=6)
        p2 = rng.uniform(0, 1, size=p1.shape)
        b2 = rng.uniform(0, 1, size=b1.shape)
        a, b = 0.7, -0.4
        img1, _, _ = rasterize_forward(mean2d, cov2d, opacity, p1, b1, 8, 8)
        img2, _, _ = rasterize_forward(mean2d, cov2d, opacity, p2, b2, 8, 8)
        mix, _, _ = rasterize_forward(
            mean2d, cov2d, opacity, a * p1 + b * p2, a * b1 + b * b2, 8, 8
        )
        assert np.max(np.abs(mix - (a * img1 + b * img2))) < 1e-10

    def test_alpha_in_unit_interval(self):
        rng = np.random.default_rng(23)
        scene = random_scene(rng, m=10, alpha_range=(0.5, 0.99))
        _, alpha, _ = rasterize_forward(*scene, 8, 8)
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0

    def test_determinism(self):
        rng = np.random.default_rng(24)
        scene = random_scene(rng, m=7)
        img1, a1, _ = rasterize_forward(*scene, 8, 8)
        img2, a2, _ = rasterize_forward(*scene, 8, 8)
        assert np.array_equal(img1, img2) and np.array_equal(a1, a2)


class TestTiledPath:
    def test_bit_compatible_with_exact_path(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            scene = random_scene(rng, m=int(rng.integers(1, 15)), w=20, h=12)
            exact, ae, _ = rasterize_forward(*scene, 20, 12, tile_size=None)
            tiled, at, _ = rasterize_forward(*scene, 20, 12, tile_size=5)
            assert np.array_equal(exact, tiled)
            assert np.array_equal(ae, at)

    def test_tiled_backward_matches_exact(self):
        rng = np.random.default_rng(26)
        scene = random_scene(rng, m=8, w=16, h=16)
        g = rng.normal(size=(16, 16, 2))
        outs = []
        for ts in (None, 6):
            _, _, rec = rasterize_forward(*scene, 16, 16, tile_size=ts)
            outs.append(rasterize_backward(g, rec, scene[0], scene[1], scene[2], scene[3]))
        for a, b in zip(*outs):
            assert np.allclose(a, b, atol=1e-12)


class TestBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(27)
        scene = random_scene(rng, m=4)
        _, _, rec = rasterize_forward(*scene, 8, 8)
        grads = rasterize_backward(np.zeros((8, 8, 2)), rec, *scene[:4])
        for g in grads:
            assert np.allclose(g, 0.0)

    def test_single_splat_payload_gradient(self):
        rng = np.random.default_rng(28)
        mean2d = np.array([[3.5, 3.5]])
        cov2d = np.array([np.eye(2) * 2.0])
        opacity = np.array([0.6])
        payload = np.array([[0.8]])
        bg = np.zeros(1)
        _, _, rec = rasterize_forward(mean2d, cov2d, opacity, payload, bg, 8, 8)
        g = rng.normal(size=(8, 8, 1))
        gp, *_ = rasterize_backward(g, rec, mean2d, cov2d, opacity, payload)
        e = rec.entries[0]
        box = e.box
        expect = np.sum(g[box][:, :, 0] * e.sigma * e.t_before)
        assert np.isclose(gp[0, 0], expect, rtol=1e-12)

    def test_record_mismatch_rejected(self):
        rng = np.random.default_rng(29)
        scene = random_scene(rng, m=4)
        _, _, rec = rasterize_forward(*scene, 8, 8)
        with pytest.raises(ValueError):
            rasterize_backward(np.zeros((8, 8, 3)), rec, *scene[:4])
        with pytest.raises(ValueError):
            rasterize_backward(
                np.zeros((8, 8, 2)), rec, scene[0][:2], scene[1][:2], scene[2][:2], scene[3][:2]
            )

    def test_full_finite_difference_agreement(self):
        # every gradient entry of a random 8x8, 5-splat scene vs central FD
        rng = np.random.default_rng(30)
        scene = list(random_scene(rng, m=5, c=2))
        w = h = 8
        gout = rng.normal(size=(h, w, 2))

        def value(mean2d, cov2d, opacity, payload, background):
            img, _, _ = rasterize_forward(mean2d, cov2d, opacity, payload, background, w, h)
            return float(np.sum(gout * img))

        _, _, rec = rasterize_forward(*scene, w, h)
        gp, ga, gm, gc, gb = rasterize_backward(gout, rec, *scene[:4])
        hstep = 1e-3
        checked = 0

        def fd(arr, indices):
            old = [arr.flat[i] for i in indices]
            for i in indices:
                arr.flat[i] += hstep
            fp = value(*scene)
            for i, o in zip(indices, old):
                arr.flat[i] = o - hstep
            fm = value(*scene)
            for i, o in zip(indices, old):
                arr.flat[i] = o
            return (fp - fm) / (2 * hstep)

        def compare(est, got):
            nonlocal checked
            denom = max(abs(est), abs(got))
            if denom >= 1e-8:
                assert abs(est - got) / denom < 1e-4
                checked += 1

        for arr, grad in ((scene[3], gp), (scene[2], ga), (scene[0], gm), (scene[4], gb)):
            for idx in range(arr.size):
                compare(fd(arr, [idx]), grad.flat[idx])
        # covariances are symmetric by contract: perturb element pairs jointly
        cov, gcov = scene[1], gc
        for n in range(cov.shape[0]):
            for i, j in ((0, 0), (1, 1)):
                compare(fd(cov, [n * 4 + 2 * i + j]), gcov[n, i, j])
            compare(fd(cov, [n * 4 + 1, n * 4 + 2]), gcov[n, 0, 1] + gcov[n, 1, 0])
        assert checked > 50

    def test_directional_derivative_all_groups(self):
        rng = np.random.default_rng(31)
        scene = list(random_scene(rng, m=6, c=3))
        w = h = 8
        gout = rng.normal(size=(h, w, 3))
        _, _, rec = rasterize_forward(*scene, w, h)
        grads = rasterize_backward(gout, rec, *scene[:4])
        deltas = [rng.normal(size=s.shape) for s in (scene[3], scene[2], scene[0], scene[1], scene[4])]
        inner = sum(float(np.sum(g * d)) for g, d in zip(grads, deltas))
        hstep = 1e-4

        def value_at(eps):
            args = [
                scene[0] + eps * deltas[2],
                scene[1] + eps * deltas[3],
                scene[2] + eps * deltas[1],
                scene[3] + eps * deltas[0],
                scene[4] + eps * deltas[4],
            ]
            img, _, _ = rasterize_forward(*args, w, h)
            return float(np.sum(gout * img))

        fd = (value_at(hstep) - value_at(-hstep)) / (2 * hstep)
        assert abs(fd - inner) / max(abs(fd), abs(inner)) < 1e-4
