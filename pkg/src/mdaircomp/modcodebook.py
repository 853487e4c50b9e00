"""Shared non-orthogonal modulation codebook.

Column ``n`` of ``P`` is the sequence sent by any device whose block was
quantized to codeword ``n``; the mapping between the two codebooks is the
identity on indices.  Entries are drawn i.i.d. from the QPSK alphabet
``(+-1 +- 1j) / sqrt(2)``, so every entry has unit modulus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


@dataclass(frozen=True)
class ModCodebook:
    sequences: np.ndarray  # (L, N) complex
    seed: int | None = None

    def __post_init__(self):
        P = np.asarray(self.sequences, dtype=complex)
        if P.ndim != 2 or min(P.shape) < 1:
            raise ValueError(f"sequences must be a non-empty (L, N) matrix, got shape {P.shape}")
        P = P.copy()
        P.flags.writeable = False
        object.__setattr__(self, "sequences", P)

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[0]

    @property
    def size(self) -> int:
        return self.sequences.shape[1]

    def sequence_for(self, n: int) -> np.ndarray:
        if not 0 <= n < self.size:
            raise IndexError(f"sequence index {n} out of range [0, {self.size})")
        return self.sequences[:, n].copy()

    def to_csv(self, path) -> None:
        """Header ``seq_len,size,seed``; then ``L`` rows of ``2N`` values, re/im interleaved."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq_len", "size", "seed"])
            w.writerow([self.seq_len, self.size, "" if self.seed is None else self.seed])
            for row in self.sequences:
                w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])

    @classmethod
    def from_csv(cls, path) -> "ModCodebook":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["seq_len", "size", "seed"]:
            raise ValueError(f"{path}: missing 'seq_len,size,seed' header")
        L, N = int(rows[1][0]), int(rows[1][1])
        seed = int(rows[1][2]) if rows[1][2] else None
        vals = np.array([[float(v) for v in r] for r in rows[2:]])
        if vals.shape != (L, 2 * N):
            raise ValueError(f"{path}: expected {L}x{2 * N} values, got {vals.shape}")
        return cls(vals[:, 0::2] + 1j * vals[:, 1::2], seed)


def generate(L: int, N: int, seed: int) -> ModCodebook:
    """Draw an ``L x N`` QPSK codebook; reproducible under ``seed``."""
    if L < 1 or N < 1:
        raise ValueError(f"codebook dimensions must be positive, got L={L}, N={N}")
    rng = np.random.default_rng(seed)
    return ModCodebook(_QPSK[rng.integers(0, 4, size=(L, N))], seed)


def sequence_for(P: ModCodebook, n: int) -> np.ndarray:
    return P.sequence_for(n)


def orthogonal(N: int) -> ModCodebook:
    """Unit-modulus orthogonal codebook (``N x N`` DFT matrix), for noiseless test setups."""
    k = np.arange(N)
    return ModCodebook(np.exp(-2j * np.pi * np.outer(k, k) / N))


def coherence(P: ModCodebook) -> float:
    """Largest absolute normalized inner product between two distinct columns."""
    A = P.sequences / np.linalg.norm(P.sequences, axis=0)
    G = np.abs(A.conj().T @ A)
    np.fill_diagonal(G, 0.0)
    return float(G.max())
