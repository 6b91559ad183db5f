"""Exercise the neural forward-model engine: network shapes, the weight
exchange file, and the speed comparison against the numerical solver.

Uses randomly initialized weights, so the *predictions* are meaningless;
the point is the machinery. A trained weight file from the companion
trainer drops in through the same TGSW format.

Run:  python demos/03_surrogate_engine.py
"""

import time

import numpy as np

from gliosim import (
    CropSpec,
    GrowthParams,
    NetConfig,
    anatomy_channels,
    crop_anatomy,
    gen_phantom,
    load_weights,
    predict,
    random_weights,
    save_weights,
    simulate,
)

RANGES = {"D_w": (0.01, 0.08), "rho": (0.0001, 0.03), "T": (50.0, 1000.0)}

# Desk-scale configuration: 32^3 crops, 8 channels, two stride-2 levels
# (so the latent volume is 8^3), one convolution per residual block.
cfg = NetConfig(side=32, channels=8, convs_per_block=1, levels=2)
print(f"network: side {cfg.side}, channels {cfg.channels}, levels {cfg.levels}, "
      f"latent {cfg.latent_side}^3")

w = random_weights(cfg, RANGES, rng_seed=1)
n_params = sum(t.size for t in w.tensors.values())
print(f"tensors: {len(w.tensors)}, total parameters: {n_params:,}")

# The weight file round-trips bit-exactly; the header carries the network
# configuration and the parameter normalization ranges.
save_weights(w, "/tmp/gliosim_demo.tgsw")
w2 = load_weights("/tmp/gliosim_demo.tgsw")
same = all(np.array_equal(w.tensors[k], w2.tensors[k]) for k in w.tensors)
print(f"TGSW round-trip bit-exact: {same}")

anatomy = gen_phantom((32, 32, 32), 2.0, rng_seed=0)
crop = anatomy_channels(crop_anatomy(anatomy, CropSpec(center=(16, 16, 16), side=32)))
params = {"D_w": 0.08, "rho": 0.015, "T": 1000.0}

u = predict(w, crop, params, spacing_mm=2.0)
print(f"prediction: dims {u.dims}, range [{u.data.min():.3f}, {u.data.max():.3f}] (clamped)")

# Speed: one forward pass of the emulator against one numerical solve of
# the same duration at the same resolution.
predict(w, crop, params)  # warm-up
t0 = time.perf_counter()
for _ in range(5):
    predict(w, crop, params)
t_pred = (time.perf_counter() - t0) / 5

gp = GrowthParams(d_w=0.08, rho=0.015, seed=(0.5, 0.5, 0.5), t_days=1000.0)
simulate(anatomy, gp)  # warm-up
t0 = time.perf_counter()
u_sim = simulate(anatomy, gp)
t_sim = time.perf_counter() - t0

print(f"\nsurrogate forward pass: {t_pred * 1e3:7.1f} ms")
print(f"numerical solve T=1000: {t_sim * 1e3:7.1f} ms")
print(f"speed-up: {t_sim / t_pred:.1f}x")
