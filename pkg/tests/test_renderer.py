import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_scene, small_camera
from oracles import direct_composite
from taylorgs.core import Camera, Gaussian4D, Scene, build_covariance, quat_from_axis_angle, quat_mul, quat_to_rotmat
from taylorgs.remainder_field import SceneState
from taylorgs.renderer import (
    DILATION,
    ImageBuffer,
    composite_pixel,
    project_gaussian,
    read_ppm,
    render,
    render_state,
    splat_alpha,
)


def _cam(**kw):
    base = dict(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64)
    base.update(kw)
    return Camera(**base)


def test_projection_on_axis():
    s = project_gaussian([0, 0, 1.0], np.eye(3) * 0.01, _cam())
    np.testing.assert_allclose(s.mu_img, [32, 32], atol=1e-12)
    assert s.depth == 1.0


@pytest.mark.parametrize("sigma,d", [(0.1, 2.0), (0.05, 5.0), (0.3, 1.5)])
def test_projection_isotropic_covariance(sigma, d):
    s = project_gaussian([0, 0, d], np.eye(3) * sigma**2, _cam())
    np.testing.assert_allclose(s.cov_img, np.eye(2) * ((100 * sigma / d) ** 2 + DILATION), atol=1e-12)


def test_projection_culls_behind_camera():
    assert project_gaussian([0, 0, -1.0], np.eye(3), _cam()) is None
    assert project_gaussian([0, 0, 0.005], np.eye(3), _cam()) is None


def test_splat_alpha_clamped():
    s = project_gaussian([0, 0, 1.0], np.eye(3) * 0.01, _cam(), alpha_base=1.0)
    assert splat_alpha(s, s.mu_img) == 0.999
    assert splat_alpha(s, s.mu_img + [3, 0]) < 0.999


def test_composite_examples():
    c = np.array([0.2, 0.6, 0.9])
    np.testing.assert_allclose(composite_pixel([(c, 1 - 1e-9)]), c, atol=2e-3)
    c1, c2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    np.testing.assert_allclose(composite_pixel([(c1, 0.5), (c2, 0.5)]), 0.5 * c1 + 0.25 * c2, atol=1e-15)
    np.testing.assert_array_equal(composite_pixel([], [0.1, 0.2, 0.3]), [0.1, 0.2, 0.3])


def test_composite_early_termination():
    # after three near-opaque splats T = 1e-9 < 1e-4: the fourth is skipped
    white = np.ones(3)
    out = composite_pixel([(np.zeros(3), 0.999)] * 3 + [(white, 0.999)])
    np.testing.assert_array_equal(out, np.zeros(3))


@given(st.integers(0, 10_000))
def test_composite_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(0, 12)
    colors, alphas = rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, n)
    bg = rng.uniform(0, 1, 3)
    out = composite_pixel(list(zip(colors, alphas)), bg)
    np.testing.assert_allclose(out, direct_composite(colors, alphas, bg), atol=1e-12)


def test_empty_scene_renders_background():
    scene = Scene([], background=[0.2, 0.4, 0.6])
    img = render(scene, _cam(width=20, height=12, cx=10, cy=6), 0.5)
    assert img.pixels.shape == (12, 20, 3)
    np.testing.assert_array_equal(img.pixels, np.broadcast_to([0.2, 0.4, 0.6], (12, 20, 3)))


def _single(mu=(0, 0, 3.0), scale=0.2, **kw):
    return Scene([Gaussian4D.static(mu, [1, 0, 0, 0], [scale] * 3, [1, 1, 1], **kw)])


def test_single_gaussian_peak_at_principal_point():
    img = render(_single(), _cam(cx=30.0, cy=21.0), 0.5)
    y, x = np.unravel_index(np.argmax(img.pixels[..., 0]), img.pixels.shape[:2])
    assert (x, y) == (30, 21)


def test_fading_gaussian_dims():
    scene = _single(sigma_s=0.9, mu_tau=0.2, s_tau=5.0)
    peak = render(scene, _cam(), 0.2).pixels
    later = render(scene, _cam(), 1.0).pixels
    assert np.all(later <= peak)
    assert later.max() < peak.max()


def test_render_rejects_time_outside_unit_interval():
    with pytest.raises(ValueError):
        render(_single(), _cam(), 1.5)


def _accumulated_opacity(scene, cam, t):
    # background 1 vs 0: the difference is the transmittance left for the background
    a = render(Scene(scene.gaussians, scene.controls, scene.neighbors, [0, 0, 0]), cam, t).pixels
    b = render(Scene(scene.gaussians, scene.controls, scene.neighbors, [1, 1, 1]), cam, t).pixels
    return 1.0 - (b - a)


def test_accumulated_opacity_in_unit_interval():
    scene = random_scene(np.random.default_rng(3), n_gaussians=20, n_controls=4)
    acc = _accumulated_opacity(scene, small_camera(32, f=40.0), 0.4)
    assert acc.min() >= -1e-12 and acc.max() <= 1.0 + 1e-12


def test_render_deterministic_and_thread_independent():
    scene = random_scene(np.random.default_rng(4), n_gaussians=30, n_controls=4)
    cam = small_camera(48, f=60.0)
    a = render(scene, cam, 0.3).pixels
    b = render(scene, cam, 0.3).pixels
    c = render(scene, cam, 0.3, threads=4).pixels
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_rigid_transform_invariance():
    rng = np.random.default_rng(5)
    n = 12
    means = rng.uniform(-0.6, 0.6, (n, 3))
    rots = rng.normal(size=(n, 4))
    rots /= np.linalg.norm(rots, axis=1, keepdims=True)
    state = SceneState(means, rots, rng.uniform(0.05, 0.2, (n, 3)), rng.uniform(0, 1, (n, 3)), rng.uniform(0.3, 0.9, n))
    cam = Camera.look_at([0.3, 0.5, -3], [0, 0, 0], [0, 1, 0], fx=60, fy=60, width=48, height=48)
    q = quat_from_axis_angle([1, 2, 3], 0.8)
    R, d = quat_to_rotmat(q), np.array([0.4, -1.0, 2.0])
    moved = SceneState(means @ R.T + d, quat_mul(q, rots), state.scales, state.colors, state.opacities)
    # x_c = Rc x + tc = Rc Rᵀ (x' - d) + tc
    Rc = cam.R @ R.T
    from taylorgs.core import rotmat_to_quat

    cam2 = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, rotmat_to_quat(Rc), cam.trans - Rc @ d)
    a = render_state(state, cam).pixels
    b = render_state(moved, cam2).pixels
    assert np.abs(a - b).max() <= 1e-6


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    img = ImageBuffer(rng.integers(0, 256, (7, 5, 3)) / 255.0)
    img.save(tmp_path / "a.ppm")
    back = ImageBuffer.load(tmp_path / "a.ppm")
    np.testing.assert_array_equal(back.pixels, img.pixels)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n5 7\n255\n")


def test_png_round_trip(tmp_path):
    pytest.importorskip("PIL")
    img = ImageBuffer(np.random.default_rng(7).integers(0, 256, (6, 9, 3)) / 255.0)
    img.save(tmp_path / "a.png")
    np.testing.assert_array_equal(ImageBuffer.load(tmp_path / "a.png").pixels, img.pixels)


def test_byte_rounding_half_away_from_zero():
    # 0.5/255 sits on a rounding boundary: it goes up, out of range values clamp
    img = ImageBuffer(np.array([[[0.5 / 255, 1.5, -0.2]]]))
    np.testing.assert_array_equal(img.to_bytes(), [[[1, 255, 0]]])


def test_read_ppm_header_comments_and_errors():
    data = b"P6\n# comment\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(read_ppm(data), [[[1, 2, 3], [4, 5, 6]]])
    with pytest.raises(ValueError):
        read_ppm(b"P3\n1 1\n255\n0 0 0")


def test_image_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        ImageBuffer(np.full((2, 2, 3), np.nan))
    img = ImageBuffer.filled(3, 2, [0.1, 0.2, 0.3])
    assert (img.width, img.height) == (3, 2)


def test_tile_renderer_matches_composite_pixel():
    """Every pixel of the tile renderer equals the reference compositor over the depth-sorted list."""
    scene = random_scene(np.random.default_rng(8), n_gaussians=8, n_controls=2)
    cam = small_camera(20, f=25.0)
    from taylorgs.remainder_field import transform_scene

    st_ = transform_scene(scene, 0.6)
    img = render_state(st_, cam).pixels
    covs = build_covariance(st_.rots, st_.scales)
    splats = [project_gaussian(st_.means[i], covs[i], cam, st_.colors[i], st_.opacities[i]) for i in range(8)]
    order = sorted((s.depth, i) for i, s in enumerate(splats) if s is not None)
    for y in range(0, 20, 3):
        for x in range(0, 20, 3):
            lst = []
            for _, i in order:
                s = splats[i]
                # a Gaussian reaches the pixel iff its 3-sigma box overlaps the pixel's 16x16 tile
                ext = 3 * np.sqrt(np.diag(s.cov_img))
                lo, hi = np.floor((s.mu_img - ext) / 16), np.floor((s.mu_img + ext) / 16)
                if not (lo[0] <= x // 16 <= hi[0] and lo[1] <= y // 16 <= hi[1]):
                    continue
                lst.append((s.color, splat_alpha(s, [x, y])))
            ref = composite_pixel(lst)
            np.testing.assert_allclose(img[y, x], ref, atol=1e-6)
