"""Vector-quantize a model update and carry the residual forward.

Learns a 2^J-word codebook from one update, quantizes a sequence of updates
with error feedback, and shows that the accumulated residual stays bounded
while the running sum of transmitted vectors tracks the sum of true updates.
"""

import numpy as np

from mdaircomp import quantizer

W, Q, J = 600, 2, 6
rng = np.random.default_rng(0)

blocks, _ = quantizer.pad_blocks(rng.standard_normal(W), Q)
U = quantizer.learn_codebook(blocks, 2**J, seed=0)
print(f"codebook: {U.size} codewords of dimension {U.block_dim}, "
      f"mean squared distortion {quantizer.mean_quantization_error(blocks, U):.4f}")

e = np.zeros(W)
sent, true = np.zeros(W), np.zeros(W)
for t in range(10):
    delta = rng.standard_normal(W)
    idx, q = quantizer.encode_update(delta + e, U)
    e = quantizer.accumulate_error(delta, e, q)
    sent += q
    true += delta
    print(f"round {t}: {len(idx.indices)} indices, |e| = {np.linalg.norm(e):6.2f}, "
          f"|sum sent - sum true| = {np.linalg.norm(sent - true):6.2f}")
