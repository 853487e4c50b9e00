"""Recover codeword-usage counts from a superposed multi-antenna signal.

Twelve devices pick codewords with collision-heavy statistics, pre-equalize
towards antenna 0 and transmit at the same time over a Rayleigh channel.  The
AMP-DA detector recovers the per-block counts, and the majority vote over
blocks recovers the number of active devices.
"""

import numpy as np

from mdaircomp import channel, detector, harness, metrics, modcodebook

N, L, M, Ka, D = 64, 20, 4, 12, 50
rng = np.random.default_rng(1)
P = modcodebook.generate(L, N, seed=1)
h = harness.surviving_channels(Ka, M, 0.14, rng)
sel = harness.skewed_selections(N, Ka, D, 6.0, rng)

for snr in (0.0, 5.0, 10.0, 20.0):
    rx, eq = channel.transmit(P, sel, h, snr, seed=rng)
    res = detector.detect(rx.y, P)
    p_s, p_c1, _ = metrics.collision_stats(eq.x_counts, Ka)
    print(f"SNR {snr:4.0f} dB: NMSE {metrics.nmse(eq.x_counts, res.x_counts):8.2f} dB, "
          f"K_a (majority vote) {detector.estimate_ka(res.x_counts)}, (mean) {detector.estimate_ka_mean(res.x_counts)}, "
          f"collision rate {p_c1:.2f}, {res.iterations[0]} iterations")

block = int(np.argmax(eq.x_counts.max(axis=1)))
nz = np.flatnonzero(eq.x_counts[block])
print(f"block {block}: true counts {dict(zip(nz.tolist(), eq.x_counts[block, nz].tolist()))}")
print(f"          estimate    {dict(zip(nz.tolist(), np.round(res.x_counts[block, nz], 2).tolist()))}")
