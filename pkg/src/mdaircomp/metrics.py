"""Detection metrics and uplink overhead accounting."""

from __future__ import annotations

import math

import numpy as np

NMSE_FLOOR_DB = -300.0


def nmse(x_true_blocks, x_hat_blocks) -> float:
    """NMSE in dB pooled over blocks: ``10 log10(sum ||x - x_hat||^2 / sum ||x||^2)``.

    Exact recovery is reported as ``NMSE_FLOOR_DB`` rather than ``-inf``.
    """
    x = np.asarray(x_true_blocks)
    xh = np.asarray(x_hat_blocks)
    if x.shape != xh.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xh.shape}")
    ref = float((np.abs(x) ** 2).sum())
    if ref == 0:
        raise ValueError("undefined NMSE: all-zero reference")
    err = float((np.abs(x - xh) ** 2).sum())
    if err == 0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(err / ref), NMSE_FLOOR_DB)


def collision_stats(x_true_blocks, ka: int) -> tuple[float, float, float]:
    """Sparsity ratio and collision probabilities ``(P_s, P_c1, P_c2)``.

    ``P_c1`` is the fraction of blocks whose support is smaller than ``ka``
    (at least two devices picked the same codeword); ``P_c2`` additionally
    removes blocks with exactly one collision.
    """
    x = np.atleast_2d(np.asarray(x_true_blocks))
    D, N = x.shape
    nnz = np.count_nonzero(x, axis=1)
    p_s = nnz.sum() / (N * D)
    p_c1 = 1.0 - np.count_nonzero(nnz == ka) / D
    p_c2 = p_c1 - np.count_nonzero(nnz == ka - 1) / D
    return float(p_s), float(p_c1), float(p_c2)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def overhead_table(W: int, Q: int, L: int, K: int, P: int) -> dict[str, int]:
    """Uplink time slots per round for each scheme, rounded up.

    ``P`` is the number of OFDM subcarriers shared by all devices.
    """
    if min(W, Q, L, K, P) < 1:
        raise ValueError("all arguments must be positive")
    D = _ceil_div(W, Q)
    return {
        "vq_ofdma": _ceil_div(D * K, P),
        "fsk_mv": _ceil_div(2 * W, P),
        "obda": _ceil_div(W, P),
        "md_aircomp": _ceil_div(D * L, P),
    }
