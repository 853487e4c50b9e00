"""Uplink time slots per round for each aggregation scheme.

Uses the published CNN size (269,722 weights), 40 devices and 1024 OFDM
subcarriers, and varies the sequence length.
"""

from mdaircomp import metrics

W, Q, K, P = 269722, 20, 40, 1024
print(f"{'L':>3} {'VQ+OFDMA':>9} {'FSK-MV':>7} {'OBDA':>5} {'MD-AirComp':>11}")
for L in (10, 15, 20, 30):
    t = metrics.overhead_table(W, Q, L, K, P)
    print(f"{L:>3} {t['vq_ofdma']:>9} {t['fsk_mv']:>7} {t['obda']:>5} {t['md_aircomp']:>11}")
