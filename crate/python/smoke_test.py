"""Smoke test for the dpsynth Python module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or
`cargo build --release -p dpsynth-py` and copy `target/release/libdpsynth.so`
to `dpsynth.so` somewhere on PYTHONPATH.
"""

import math
import os
import tempfile

import dpsynth


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # PSF halves
    p = dpsynth.PsfParams(6, 0.6, 0.3, radius=8.0)
    left, right, combined = dpsynth.split_dp_psf(p)
    assert close(left.sum(), 0.5, 1e-9) and close(right.sum(), 0.5, 1e-9)
    assert all(close(l + r, h, 1e-12) for l, r, h in zip(left.taps, right.taps, combined.taps))
    assert left.centroid()[0] * right.centroid()[0] < 0

    # in-focus render returns the input
    cams = dpsynth.Camera.presets()
    assert [c.id for c in cams] == ["cam1", "cam2", "cam3", "cam4", "cam5"]
    cam = dpsynth.Camera("t", 22.0, 10.0, 30.0)
    w, h = 48, 32
    sharp = dpsynth.Image(w, h, 1, [((x * 7 + y * 3) % 11) / 10 for y in range(h) for x in range(w)])
    l, r, b = dpsynth.render_dp_frame(sharp, [30.0] * (w * h), cam)
    assert max(abs(a + c - s) for a, c, s in zip(l.data, r.data, sharp.data)) < 1e-9
    l, r, b = dpsynth.render_dp_frame(sharp, [8.0] * (w * h), cam)
    assert dpsynth.psnr(b, sharp) < 100.0

    # metrics
    assert dpsynth.psnr(sharp, sharp) == 100.0
    assert dpsynth.ssim(sharp, sharp) == 1.0
    assert dpsynth.mae(sharp, sharp) == 0.0
    assert dpsynth.edge_loss(sharp, sharp)["total"] == 0.0

    # distortion round trip on a flat image
    flat = dpsynth.Image.filled(64, 48, 1, 0.25)
    warped, _ = dpsynth.distort(flat, preset=2)
    back, _ = dpsynth.undistort(warped, preset=2)
    assert abs(back.get(32, 24, 0) - 0.25) < 1e-9

    # noise
    big = dpsynth.Image.filled(200, 200, 1, 0.5)
    noisy = dpsynth.add_signal_noise(big, 0.1, seed=1)
    d = [v - 0.5 for v in noisy.data]
    std = math.sqrt(sum(v * v for v in d) / len(d))
    assert close(std, 0.05, 0.003), std
    assert dpsynth.add_signal_noise(big, 0.1, seed=1).data == noisy.data

    # calibration loop
    pattern = dpsynth.make_disk_pattern(2, 2, 31.0, 0.5, 64, 64)
    k = combined
    blurred = blur(pattern, k)
    est, _ = dpsynth.estimate_psf(pattern, blurred, kernel_size=31)
    assert dpsynth.ncc_kernels(est, k) > 0.98
    fit, _ = dpsynth.fit_psf_params(est, [6.0, 7.0, 8.0, 9.0, 10.0])
    assert fit == p, fit

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.png")
        sharp.save(path, 16)
        again = dpsynth.Image.load(path)
        assert max(abs(a - b) for a, b in zip(again.data, sharp.data)) < 1e-4

    print("python smoke test passed")


def blur(img, k):
    """Zero-padded same-size convolution, single channel."""
    w, h, n = img.width, img.height, k.size
    half = n // 2
    src, taps = img.data, k.taps
    out = [0.0] * (w * h)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(n):
                sy = y + half - j
                if 0 <= sy < h:
                    for i in range(n):
                        sx = x + half - i
                        if 0 <= sx < w:
                            acc += taps[j * n + i] * src[sy * w + sx]
            out[y * w + x] = acc
    return dpsynth.Image(w, h, 1, out)


if __name__ == "__main__":
    main()
