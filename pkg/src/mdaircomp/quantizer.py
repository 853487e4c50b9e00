"""Shared vector-quantization codebook and error-feedback encoding.

All devices quantize their (error-compensated) update vectors with one
codebook ``U`` of shape ``(Q, N)``.  An update of length ``W`` is zero-padded
to ``D * Q`` entries (``D = ceil(W / Q)``), split into ``D`` consecutive
blocks, and every block is replaced by the index of its nearest codeword.

Indices are 0-based throughout: codeword ``i`` is ``U[:, i]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class QuantCodebook:
    """VQ codebook with one codeword per column."""

    codewords: np.ndarray  # (Q, N)

    def __post_init__(self):
        U = np.asarray(self.codewords, dtype=float)
        if U.ndim != 2 or U.shape[0] < 1 or U.shape[1] < 1:
            raise CodebookError(f"codewords must be a non-empty (Q, N) matrix, got shape {U.shape}")
        if not np.all(np.isfinite(U)):
            raise CodebookError("codewords contain non-finite values")
        U = U.copy()
        U.flags.writeable = False
        object.__setattr__(self, "codewords", U)

    @property
    def block_dim(self) -> int:
        return self.codewords.shape[0]

    @property
    def size(self) -> int:
        return self.codewords.shape[1]

    @property
    def bits(self) -> int | None:
        """``J`` when ``N = 2**J``, else ``None``."""
        n = self.size
        return n.bit_length() - 1 if n & (n - 1) == 0 else None

    def to_csv(self, path) -> None:
        """Write ``q_dim,size`` header, then ``Q`` rows of ``N`` values (one codeword per column)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q_dim", "size"])
            w.writerow([self.block_dim, self.size])
            for row in self.codewords:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "QuantCodebook":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["q_dim", "size"]:
            raise CodebookError(f"{path}: missing 'q_dim,size' header")
        q, n = (int(v) for v in rows[1])
        body = [[float(v) for v in r] for r in rows[2:]]
        if len(body) != q or any(len(r) != n for r in body):
            raise CodebookError(f"{path}: expected {q}x{n} values")
        return cls(np.array(body))


@dataclass(frozen=True)
class IndexVector:
    indices: np.ndarray  # (D,) int, values in [0, N)
    padded_zeros: int

    @property
    def num_blocks(self) -> int:
        return len(self.indices)


def num_blocks(W: int, Q: int) -> int:
    return -(-int(W) // int(Q))


def _as_samples(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise CodebookError(f"samples must be 1-D or 2-D, got {X.ndim}-D")
    return X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # (S, Q) x (N, Q) -> (S, N); direct differences keep ties exact for the argmin rule
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp_init(X: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    S = X.shape[0]
    centers = np.empty((n, X.shape[1]))
    centers[0] = X[rng.integers(S)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, n):
        total = d2.sum()
        if total > 0:
            j = rng.choice(S, p=d2 / total)
        else:
            j = rng.integers(S)
        centers[i] = X[j]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def learn_codebook(samples, size: int, max_iters: int = 50, seed: int = 0) -> QuantCodebook:
    """Fit ``size`` centroids with K-means++ seeding and Lloyd iterations.

    Parameters
    ----------
    samples : array_like, shape (S, Q) or (S,)
        Training vectors; a 1-D input is treated as ``S`` scalars (``Q = 1``).
    size : int
        Number of codewords ``N``.
    max_iters : int
        Lloyd iteration budget; iteration also stops at an assignment fixpoint.
    seed : int
        Seed for the K-means++ draws.  Equal seeds give bit-identical codebooks.

    Empty clusters are re-seeded at the sample farthest from its own centroid.
    """
    X = _as_samples(samples)
    if X.shape[0] == 0:
        raise CodebookError("no training data")
    if not np.all(np.isfinite(X)):
        raise CodebookError("training samples contain non-finite values")
    if size < 1:
        raise CodebookError(f"codebook size must be >= 1, got {size}")
    if X.shape[0] < size:
        raise CodebookError(f"{X.shape[0]} training samples cannot support {size} codewords")

    rng = np.random.default_rng(seed)
    C = _kmeanspp_init(X, size, rng)
    labels = None
    for _ in range(max_iters):
        d2 = _sq_dists(X, C)
        new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=size)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        filled = counts > 0
        C[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            own = d2[np.arange(len(X)), labels]
            order = np.argsort(-own, kind="stable")
            for slot, j in zip(np.flatnonzero(~filled), order):
                C[slot] = X[j]
    return QuantCodebook(C.T)


def quantize_blocks(blocks, U: QuantCodebook) -> np.ndarray:
    """Nearest-codeword index for each row of ``blocks`` (shape ``(D, Q)``); ties go to the lowest index."""
    B = np.asarray(blocks, dtype=float)
    if B.ndim != 2 or B.shape[1] != U.block_dim:
        raise CodebookError(f"blocks must have shape (D, {U.block_dim}), got {B.shape}")
    if not np.all(np.isfinite(B)):
        raise CodebookError("blocks contain non-finite values")
    # np.argmin returns the first minimum
    return _sq_dists(B, U.codewords.T).argmin(axis=1)


def quantize_block(block, U: QuantCodebook) -> int:
    b = np.atleast_1d(np.asarray(block, dtype=float))
    if b.shape != (U.block_dim,):
        raise CodebookError(f"block has dimension {b.shape}, codebook expects ({U.block_dim},)")
    return int(quantize_blocks(b[None, :], U)[0])


def pad_blocks(s, Q: int) -> tuple[np.ndarray, int]:
    """Zero-pad ``s`` at the tail and reshape into ``(D, Q)`` blocks."""
    s = np.asarray(s, dtype=float).ravel()
    W = s.size
    if W < 1:
        raise CodebookError("cannot quantize an empty vector")
    D = num_blocks(W, Q)
    pad = D * Q - W
    return np.concatenate([s, np.zeros(pad)]).reshape(D, Q), pad


def reconstruct(b: IndexVector | np.ndarray, U: QuantCodebook, W: int) -> np.ndarray:
    """Concatenate the selected codewords and drop padded tail entries."""
    idx = np.asarray(b.indices if isinstance(b, IndexVector) else b)
    if idx.size and (idx.min() < 0 or idx.max() >= U.size):
        raise CodebookError(f"index out of range [0, {U.size})")
    return U.codewords[:, idx].T.reshape(-1)[:W].copy()


def encode_update(s_bar, U: QuantCodebook) -> tuple[IndexVector, np.ndarray]:
    """Quantize a length-``W`` vector; returns the index vector and its reconstruction."""
    s_bar = np.asarray(s_bar, dtype=float).ravel()
    blocks, pad = pad_blocks(s_bar, U.block_dim)
    iv = IndexVector(quantize_blocks(blocks, U), pad)
    return iv, reconstruct(iv, U, s_bar.size)


def accumulate_error(delta, e, quantized) -> np.ndarray:
    """Error-feedback refresh ``e' = delta + e - quantized``."""
    delta, e, quantized = (np.asarray(v, dtype=float) for v in (delta, e, quantized))
    if not (delta.shape == e.shape == quantized.shape):
        raise ValueError(f"shape mismatch: {delta.shape}, {e.shape}, {quantized.shape}")
    return delta + e - quantized


def mean_quantization_error(samples, U: QuantCodebook) -> float:
    """Mean squared distance from each sample to its nearest codeword."""
    X = _as_samples(samples)
    return float(_sq_dists(X, U.codewords.T).min(axis=1).mean())
