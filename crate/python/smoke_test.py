"""Smoke test for the latent_rx extension module.

Build and run from the repository root:

    cargo build -p latent-rx-py --release --features extension-module
    cp target/release/liblatent_rx_py.so python/latent_rx.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import latent_rx as rx


def mse(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b)) / len(a)


def main():
    golden = 2.0 / (3.0 + math.sqrt(5.0))
    assert abs(rx.timestep_simplified(1.0) - golden) < 1e-12
    assert abs(rx.timestep_for_phi(1.0) - golden) < 1e-12
    t, alpha, phi = rx.receiver_params(1.0, 1.0)
    assert abs(t - golden) < 1e-12 and abs(alpha - (1.0 - t)) < 1e-12 and phi == 1.0
    assert abs(rx.snr_db_to_sigma2(10.0) - 0.1) < 1e-15
    try:
        rx.receiver_params(1.0, 1.0, y_energy=0.5)
    except ValueError as e:
        assert "noise floor" in str(e)
    else:
        raise AssertionError("energy below the noise floor must raise")
    t, _, phi = rx.receiver_params(1.0, 1.0, y_energy=0.5, clamp=True)
    assert (t, phi) == (1.0, 0.0)

    rng = random.Random(3)
    d, n = 8, 2000
    zs = [[rng.gauss(0.0, 1.0) for _ in range(d)] for _ in range(n)]
    sigma2 = rx.snr_db_to_sigma2(0.0)
    ys, y_energy = rx.transmit(zs, sigma2, seed=1)
    assert abs(y_energy - rx.measure_energy(ys)) < 1e-12
    prior = rx.GaussianPrior.standard(d)
    zh = rx.denoise(ys, 1.0, sigma2, prior, num_steps=1, seed=2)
    denoised = sum(mse(a, b) for a, b in zip(zh, zs)) / n
    passthrough = sum(mse(a, b) for a, b in zip(ys, zs)) / n
    assert denoised < 0.6 * passthrough, (denoised, passthrough)

    gmm = rx.GmmPrior([0.5, 0.5], [[-2.0] * d, [2.0] * d], [[0.25] * d, [0.25] * d])
    r = gmm.responsibilities([2.0] * d, 0.2)
    assert abs(sum(r) - 1.0) < 1e-12 and r[1] > 0.99
    x_t, eps = rx.forward_corrupt([1.0] * d, 0.3, seed=4)
    assert len(x_t) == len(eps) == d

    xs = [[rng.gauss(0.0, 1.0 / (k + 1)) for k in range(16)] for _ in range(500)]
    codec = rx.LinearCodec.fit(xs, 4)
    assert (codec.latent_dim, codec.data_dim) == (4, 16)
    z = codec.encode(xs[0])
    assert len(codec.decode(z)) == 16
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "codec.ltns")
        codec.save(path)
        loaded = rx.LinearCodec.load(path)
        assert max(abs(a - b) for a, b in zip(loaded.encode(xs[0]), z)) < 1e-4
        cfg = os.path.join(tmp, "s.cfg")
        with open(cfg, "w") as f:
            f.write("trials = 200\nsnr_db = 0\n")
        csv = rx.run_experiment("snr-sweep", cfg, seed=7)
        header, row = csv.strip().split("\n")
        assert header.startswith("snr_db,sigma2,t_star")
        assert abs(float(row.split(",")[2]) - golden) < 1e-12
        assert csv == rx.run_experiment("snr-sweep", cfg, seed=7)

    verdicts = rx.run_experiment("verify-theory").strip().split("\n")[1:]
    assert all(v.endswith(",pass") for v in verdicts)
    print("smoke test passed")


if __name__ == "__main__":
    main()
