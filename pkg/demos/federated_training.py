"""Federated training with ideal, perfectly aggregated and over-the-air updates.

A 3-class softmax model is trained over 40 devices with non-iid data.  Each
round 30% of the devices are scheduled; the MD-AirComp arm sends quantized
updates through the fading channel and the AMP-DA detector.  Pass a round
count as the first argument (default 60).
"""

import sys

from mdaircomp import feel, harness

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 60
cfg = harness.ExperimentConfig()
task = cfg.make_task(seed=0)
print(f"model size W = {feel.num_weights(task.feature_dim, task.classes)}, label EMD = {feel.label_emd(task.shards, task.classes):.2f}")

for scheme in feel.SCHEMES:
    _, recs = feel.run_feel(scheme, task, cfg.feel_config(), rounds, seed=0)
    line = f"{scheme:>9}: accuracy after {rounds} rounds {recs[-1].test_accuracy:.3f}"
    if scheme == "mdaircomp":
        det = [r for r in recs if not r.skipped]
        hits = sum(r.ka_hat == r.ka_true for r in det)
        line += f", median NMSE {sorted(r.nmse_db for r in det)[len(det) // 2]:.1f} dB, K_a exact {hits}/{len(det)}"
    print(line)
