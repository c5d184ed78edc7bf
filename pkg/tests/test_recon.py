import math

import numpy as np
import pytest

from conftest import disk_movie
from ctflow.ctsim import FanBeamGeometry, ScanProtocol, acquire, forward_project_dynamic, rotations_for_window
from ctflow.flowgen import FieldMovie
from ctflow.geometry import GridSpec
from ctflow.recon import ReconConfig, fbp_reconstruct_frame, ramlak_kernel, reconstruct_movie

GRID = GridSpec.square(256, 12.8)
GEOM = FanBeamGeometry.for_grid(GRID)
CFG = ReconConfig(GRID)


def _recon(movie, proto=None):
    s = acquire(movie, GEOM, proto or ScanProtocol(grs=1.0))
    return fbp_reconstruct_frame(s.g, s.view_angle, GEOM, CFG)


def test_disk_round_trip():
    rho = 0.75
    img = _recon(disk_movie(GRID, rho))
    X, Y = GRID.mesh()
    r = np.hypot(X, Y)
    rim = 2 * GRID.pixel_size
    assert img[r < rho - rim].mean() == pytest.approx(1.0, abs=0.03)
    assert img[r > rho + rim].mean() == pytest.approx(0.0, abs=0.02)


def test_zero_sinogram_gives_zero_image():
    img = fbp_reconstruct_frame(np.zeros((984, GEOM.n_channels)), GEOM.view_step * np.arange(984), GEOM, CFG)
    assert np.abs(img).max() < 1e-10


def test_fbp_linear():
    a = disk_movie(GRID, 0.5, centre=(-2.0, 1.0))
    b = disk_movie(GRID, 0.7, centre=(1.5, -0.5))
    ab = FieldMovie(GRID, a.times, 30.0, 1.5, c=2 * a.c - 0.5 * b.c)
    proto = ScanProtocol(grs=1.0)

    def rec(m):
        s = forward_project_dynamic(m, GEOM, proto)
        return fbp_reconstruct_frame(s.g, s.view_angle, GEOM, CFG)

    np.testing.assert_allclose(rec(ab), 2 * rec(a) - 0.5 * rec(b), atol=1e-6)


def test_kernel_symmetric_and_dc_suppressed():
    k = ramlak_kernel(GEOM.n_channels, GEOM.channel_pitch)
    np.testing.assert_allclose(k, k[::-1])
    # the truncated ramp is only asymptotically zero-mean
    assert abs(k.sum()) < k.max() / GEOM.n_channels
    k2 = ramlak_kernel(4 * GEOM.n_channels, GEOM.channel_pitch / 4)
    assert abs(k2.sum()) / k2.max() < abs(k.sum()) / k.max() / 2
    assert np.all(k[len(k) // 2 + 2::2] == 0)


def test_errors():
    with pytest.raises(ValueError):
        fbp_reconstruct_frame(np.zeros((100, GEOM.n_channels)), np.zeros(100), GEOM, CFG)
    with pytest.raises(ValueError):
        fbp_reconstruct_frame(np.zeros((984, 10)), np.zeros(984), GEOM, CFG)
    with pytest.raises(ValueError):
        fbp_reconstruct_frame(np.zeros((984, GEOM.n_channels)), np.zeros(984), None, CFG)
    with pytest.raises(ValueError):
        ReconConfig(GRID, filter="shepp-logan")


def test_static_movie_frames_identical():
    m = disk_movie(GRID, 0.75, centre=(0.4, 0.0))
    single = _recon(m, ScanProtocol(grs=2.0))
    movie = reconstruct_movie(acquire(m, GEOM, ScanProtocol(grs=2.0, n_rotations=3)), CFG)
    assert movie.nt == 3
    for k in range(3):
        np.testing.assert_allclose(movie.c[k], single, atol=1e-8)
    # frames stamped at rotation centres
    np.testing.assert_allclose(movie.seconds, [0.25, 0.75, 1.25])


def test_masked_views_zero_filled():
    m = disk_movie(GRID, 0.75)
    s = acquire(m, GEOM, ScanProtocol(grs=1.0, pulse_width=10, duty_cycle=0.5))
    img = fbp_reconstruct_frame(s.g, s.view_angle, GEOM, CFG)
    assert np.all(np.isfinite(img))
    X, Y = GRID.mesh()
    assert img[np.hypot(X, Y) < 0.5].mean() == pytest.approx(0.5, abs=0.05)


def frame_rmse(p, gt, grs):
    proto = ScanProtocol(grs=grs, n_rotations=rotations_for_window(1.0, grs))
    rec = reconstruct_movie(forward_project_dynamic(gt, GEOM, proto), ReconConfig(GRID))
    errs = [np.sqrt(np.mean((rec.c[k] - gt.frame_at("c", t))[gt.roi] ** 2)) for k, t in enumerate(rec.times)]
    return float(np.mean(errs))


def test_motion_error_grows_as_rotation_slows(desk_channel):
    p, gt = desk_channel
    e1, e4, e10 = (frame_rmse(p, gt, g) for g in (1.0, 4.0, 10.0))
    assert e1 > e4 > e10
