"""
From geometry to a received tensor
==================================

A circular RIS sits between a BS and a UE.  We draw one channel, build the
pilot block and look at the third-order observation the UE collects.
"""

import numpy as np

from xlcris.airlink import make_pilot_block, noiseless_tensor, synthesize
from xlcris.channel import cascade_channel
from xlcris.scenario import default_config, sample_realization

# A 256-element surface keeps the demo fast; every other setting is default.
cfg = default_config().with_(n_ris=256)
print(f"RIS radius {cfg.r_c:.3f} m, {cfg.n_pilots} pilot subcarriers, {cfg.n_slots} RIS slots")

real = sample_realization(cfg, seed=3)
for l in range(cfg.n_paths):
    print(f"path {l}: UE angle {np.rad2deg(real.theta_rm[l]):6.1f} deg, RIS angle "
          f"{np.rad2deg(real.phi_rm[l]):6.1f} deg, distance {real.d_rm[l]:5.1f} m, |gain| {abs(real.rho[l]):.3f}")

# The cascade channel on one subcarrier is a sum of L rank-one terms.
O = cascade_channel(real, cfg, 1)
s = np.linalg.svd(O, compute_uv=False)
print("leading singular values of O[1]:", np.round(s[:5] / s[0], 6))

# Pilots: precoder F, combiner W, superposed NOMA symbols X and a random RIS
# phase per slot.  The tensor has one slice per pilot subcarrier.
pilots = make_pilot_block(cfg, seed=3)
G = noiseless_tensor(real, pilots, cfg)
print("tensor shape (N_s N_b, M, K):", G.shape)
print("rank of every slice:", {int(np.linalg.matrix_rank(G[:, :, k])) for k in range(G.shape[2])})

# Noise is white at the antennas, so after combining it is coloured by W^T W^*.
rx = synthesize(real, pilots, cfg, snr_db=10.0, noise_seed=3)
print(f"requested 10 dB, measured {rx.snr_db:.2f} dB, noise variance {rx.sigma2:.3e}")
