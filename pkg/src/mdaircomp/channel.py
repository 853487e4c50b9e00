"""Uplink multiple-access channel with pre-equalization on the first BS antenna.

Each participating device ``k`` scales its sequence by ``1 / h_k[0]`` so that
all contributions add coherently at antenna 0.  For block ``d``::

    X_d = sum_k (1 / h_k[0]) x_k^d h_k^T          (N x M)
    Y_d = P X_d + Z_d                              (L x M)

so column 0 of ``X_d`` holds integer codeword-usage counts and the other
columns carry ratio-distributed gains on the same row support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modcodebook import ModCodebook


class NoParticipants(RuntimeError):
    """Every candidate device was in a deep fade; the round is skipped."""


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray  # (K, M) complex, rows h_k

    @property
    def num_devices(self) -> int:
        return self.gains.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.gains.shape[1]


@dataclass(frozen=True)
class EquivalentSignal:
    x_counts: np.ndarray  # (D, N) int
    x_full: np.ndarray  # (D, N, M) complex


@dataclass(frozen=True)
class ReceivedBlocks:
    y: np.ndarray  # (D, L, M) complex
    noise_var: np.ndarray  # (D,)

    @property
    def num_blocks(self) -> int:
        return self.y.shape[0]


def complex_normal(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Circularly-symmetric CN(0, var) samples; ``var`` broadcasts against ``shape``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channels(K: int, M: int, seed) -> ChannelRealization:
    if K < 1 or M < 1:
        raise ValueError(f"need K, M >= 1, got K={K}, M={M}")
    rng = np.random.default_rng(seed)
    return ChannelRealization(complex_normal(rng, (K, M)))


def select_participants(candidates, activity_ratio: float, H: ChannelRealization, eps_h: float, seed) -> np.ndarray:
    """Draw ``ceil(activity_ratio * K)`` active devices and drop those with ``|h_k[0]| < eps_h``.

    ``candidates`` is the device-id array (``K = len(candidates)``); ids index
    rows of ``H``.  Returns the surviving ids in ascending order.
    """
    if not 0 < activity_ratio <= 1:
        raise ValueError(f"activity_ratio must be in (0, 1], got {activity_ratio}")
    if eps_h < 0:
        raise ValueError(f"eps_h must be >= 0, got {eps_h}")
    candidates = np.asarray(candidates, dtype=int)
    K = len(candidates)
    # guard against 0.3 * 40 -> 12.000000000000002
    n_active = math.ceil(round(activity_ratio * K, 9))
    rng = np.random.default_rng(seed)
    active = np.sort(rng.choice(candidates, size=n_active, replace=False))
    keep = np.abs(H.gains[active, 0]) >= eps_h
    if not keep.any():
        raise NoParticipants(f"all {n_active} active devices below eps_h={eps_h}")
    return active[keep]


def equivalent_signal(selections: np.ndarray, h: np.ndarray, N: int, phase: np.ndarray | None = None) -> EquivalentSignal:
    """Build ``X_d`` for every block.

    Parameters
    ----------
    selections : (K_a, D) int array
        Codeword index per participating device and block.
    h : (K_a, M) complex array
        Channel rows of the participating devices.
    phase : (K_a,) array, optional
        Residual phase after pre-equalization; rotates the whole contribution.
    """
    sel = np.atleast_2d(np.asarray(selections, dtype=int))
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    Ka, D = sel.shape
    if Ka == 0:
        raise ValueError("selections must be non-empty")
    if sel.min() < 0 or sel.max() >= N:
        raise ValueError(f"selection index out of range [0, {N})")
    if np.any(h[:, 0] == 0):
        raise ValueError("device with zero gain on the inverted antenna")
    g = h / h[:, :1]
    if phase is not None:
        g = g * np.exp(1j * np.asarray(phase))[:, None]
    M = h.shape[1]
    counts = np.zeros((D, N), dtype=int)
    X = np.zeros((D, N, M), dtype=complex)
    blocks = np.broadcast_to(np.arange(D), sel.shape)
    np.add.at(counts, (blocks, sel), 1)
    np.add.at(X, (blocks, sel), np.broadcast_to(g[:, None, :], (Ka, D, M)))
    if phase is None:
        # exact integers on the inverted antenna
        X[:, :, 0] = counts
    return EquivalentSignal(counts, X)


def noise_variance(PX: np.ndarray, snr_db: float) -> np.ndarray:
    """Per-block ``sigma_n^2 = ||P X_d||_F^2 / (L M 10^(snr/10))``; zero when ``snr_db`` is +inf."""
    D, L, M = PX.shape
    if np.isposinf(snr_db):
        return np.zeros(D)
    power = (np.abs(PX) ** 2).sum(axis=(1, 2))
    return power / (L * M * 10.0 ** (snr_db / 10.0))


def transmit(P: ModCodebook, selections, h, snr_db: float, phase_max: float = 0.0, seed=None) -> tuple[ReceivedBlocks, EquivalentSignal]:
    """Superpose all participants' blocks over the channel and add AWGN.

    ``selections`` is ``(K_a, D)``; ``h`` holds the ``K_a`` participants'
    channel rows.  Phase offsets are drawn once per device from
    ``Uniform(0, phase_max)`` and shared by all its blocks.
    """
    rng = np.random.default_rng(seed)
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    phase = rng.uniform(0.0, phase_max, size=h.shape[0]) if phase_max > 0 else None
    eq = equivalent_signal(selections, h, P.size, phase)
    PX = np.einsum("ln,dnm->dlm", P.sequences, eq.x_full)
    nv = noise_variance(PX, snr_db)
    Z = complex_normal(rng, PX.shape, nv[:, None, None])
    return ReceivedBlocks(PX + Z, nv), eq


def transmit_block(P: ModCodebook, selections: dict, H: ChannelRealization, snr_db: float, phase_max: float = 0.0, seed=None):
    """Single-block transmission; ``selections`` maps device id -> codeword index."""
    if not selections:
        raise ValueError("selections must be non-empty")
    ids = np.array(sorted(selections))
    sel = np.array([[selections[k]] for k in ids])
    rx, eq = transmit(P, sel, H.gains[ids], snr_db, phase_max, seed)
    return rx, eq


def inversion_power(H: ChannelRealization, participants) -> float:
    """Total pre-equalization power ``sum_k 1 / |h_k[0]|^2`` (diagnostic only)."""
    return float((1.0 / np.abs(H.gains[np.asarray(participants), 0]) ** 2).sum())
