"""Self-contained verification suites: gradients, wavelets, metric oracles.

Run from the command line as `dsu verify`; each check prints one
pass/fail line.  The same routines back the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .blocks import (
    CGA,
    RFB,
    SFF,
    Adapter,
    WaveletDownsample,
    haar_dwt2,
    haar_idwt2,
)
from .metrics import e_measure, f_measure, mae, s_measure
from .nn import Conv2d, Linear
from .tensor import Tensor, bilinear_resize, cast_all, gelu, grad_check


def _random_binary_mask(rng, h=16, w=16):
    # mixed foreground/background, never degenerate
    while True:
        m = (rng.random((h, w)) < rng.uniform(0.2, 0.8)).astype(np.float64)
        if 0 < m.sum() < m.size:
            return m


def check_block_gradients(seeds=range(5), tol=1e-4):
    """Finite-difference checks for each trainable block; returns worst error."""
    worst = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        crng = np.random.default_rng(seed + 500)

        lin = Linear(4, 2, rng)
        x = Tensor(rng.standard_normal((3, 4)))
        tensors = list(lin.parameters()) + [x]
        cast_all(tensors, np.float64)
        worst["linear"] = max(worst.get("linear", 0.0),
                              grad_check(lambda: lin(x), tensors, rng=crng))

        c1 = Conv2d(2, 3, 3, rng, padding=1)
        c2 = Conv2d(3, 2, 3, rng, padding=1)
        x = Tensor(rng.standard_normal((2, 5, 5)))
        tensors = c1.parameters() + c2.parameters() + [x]
        cast_all(tensors, np.float64)
        worst["conv_gelu_conv"] = max(
            worst.get("conv_gelu_conv", 0.0),
            grad_check(lambda: c2(gelu(c1(x))), tensors, rng=crng))

        adapter = Adapter(8, 0.25, rng)
        adapter.up.weight.data = rng.standard_normal(
            adapter.up.weight.data.shape).astype(np.float32) * 0.1
        x = Tensor(rng.standard_normal((8, 4, 4)))
        tensors = adapter.parameters() + [x]
        cast_all(tensors, np.float64)
        worst["adapter"] = max(worst.get("adapter", 0.0),
                               grad_check(lambda: adapter(x), tensors, rng=crng))

        rfb = RFB(8, 8, rng)
        x = Tensor(rng.standard_normal((8, 6, 6)))
        tensors = rfb.parameters() + [x]
        cast_all(tensors, np.float64)
        worst["rfb"] = max(worst.get("rfb", 0.0),
                           grad_check(lambda: rfb(x), tensors, rng=crng,
                                      max_coords=24))

        cga = CGA(8, rng)
        x = Tensor(rng.standard_normal((8, 4, 4)))
        y = Tensor(rng.standard_normal((8, 4, 4)))
        tensors = cga.parameters() + [x, y]
        cast_all(tensors, np.float64)
        worst["cga"] = max(worst.get("cga", 0.0),
                           grad_check(lambda: cga(x, y), tensors, rng=crng,
                                      max_coords=24))

        sff = SFF(4, rng)
        low = Tensor(rng.standard_normal((4, 6, 6)))
        high = Tensor(rng.standard_normal((4, 3, 3)))
        tensors = sff.parameters() + [low, high]
        cast_all(tensors, np.float64)
        worst["sff"] = max(worst.get("sff", 0.0),
                           grad_check(lambda: sff(low, high), tensors, rng=crng,
                                      max_coords=24))

        wtd = WaveletDownsample(3, rng)
        x = Tensor(rng.standard_normal((3, 7, 7)))
        tensors = wtd.parameters() + [x]
        cast_all(tensors, np.float64)
        worst["wtd"] = max(worst.get("wtd", 0.0),
                           grad_check(lambda: wtd(x, 3, 3), tensors, rng=crng,
                                      max_coords=24))
    return [(f"grad:{name}", err < tol, f"worst rel err {err:.2e}")
            for name, err in sorted(worst.items())]


def check_wavelets(seeds=range(5)):
    results = []
    worst_recon = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((3, 8, 8)).astype(np.float32))
        back = haar_idwt2(haar_dwt2(x))
        worst_recon = max(worst_recon, float(np.abs(back.data - x.data).max()))
    results.append(("wavelet:perfect_reconstruction", worst_recon < 1e-6,
                    f"max abs err {worst_recon:.2e} on 3x8x8"))

    rng = np.random.default_rng(7)
    wtd = WaveletDownsample(4, rng).identity_init()
    worst_id = 0.0
    for seed in seeds:
        srng = np.random.default_rng(seed + 100)
        x = Tensor(srng.standard_normal((4, 9, 9)).astype(np.float32))
        got = wtd(x, 5, 5)
        want = bilinear_resize(x, 5, 5)
        worst_id = max(worst_id, float(np.abs(got.data - want.data).max()))
    results.append(("wavelet:identity_wtd_is_resize", worst_id < 1e-5,
                    f"max abs err {worst_id:.2e}"))
    return results


def check_metric_oracles(seeds=range(20)):
    """Self-comparison identities plus naive 64-bit double-loop oracles."""
    results = []
    self_ok = True
    detail = ""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        g = _random_binary_mask(rng)
        checks = (mae(g, g), s_measure(g, g), f_measure(g, g),
                  e_measure(g, g))
        if not (checks[0] == 0.0 and abs(checks[1] - 1.0) < 1e-6
                and checks[2] == 1.0 and abs(checks[3] - 1.0) < 1e-6):
            self_ok = False
            detail = f"seed {seed}: M={checks[0]}, S={checks[1]}, F={checks[2]}, E={checks[3]}"
            break
    results.append(("metric:self_comparison", self_ok,
                    detail or "M=0, S=1, F=1, E=1 on 20 random masks"))

    worst_mae = 0.0
    worst_f = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed + 300)
        pred = rng.random((16, 16))
        g = _random_binary_mask(rng)
        # brute-force double loops in float64
        acc = 0.0
        for i in range(16):
            for j in range(16):
                acc += abs(pred[i, j] - g[i, j])
        worst_mae = max(worst_mae, abs(acc / 256.0 - mae(pred, g)))

        thr = min(2.0 * pred.mean(), 1.0)
        tp = fp = fn = 0
        for i in range(16):
            for j in range(16):
                p = 1 if pred[i, j] >= thr else 0
                if p and g[i, j]:
                    tp += 1
                elif p:
                    fp += 1
                elif g[i, j]:
                    fn += 1
        if tp == 0:
            brute_f = 0.0
        else:
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            brute_f = 1.3 * precision * recall / (0.3 * precision + recall)
        worst_f = max(worst_f, abs(brute_f - f_measure(pred, g)))
    results.append(("metric:mae_oracle", worst_mae < 1e-12,
                    f"worst diff {worst_mae:.2e}"))
    results.append(("metric:f_oracle", worst_f < 1e-12,
                    f"worst diff {worst_f:.2e}"))
    return results


def run_all():
    results = []
    results.extend(check_wavelets())
    results.extend(check_metric_oracles())
    results.extend(check_block_gradients())
    return results
