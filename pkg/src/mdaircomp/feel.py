"""Desk-scale federated edge learning with digital over-the-air aggregation.

A multinomial logistic-regression model is trained on a synthetic Gaussian
blob task split non-i.i.d. across ``K`` devices.  Three aggregation arms
share everything except the uplink:

``ifed``
    ideal FedAvg: exact mean of the raw local updates.
``pa``
    perfect aggregation of error-compensated, vector-quantized updates.
``mdaircomp``
    quantized updates sent as shared codebook sequences over the fading MAC,
    recovered with AMP-DA and aggregated digitally.

All randomness is keyed by ``(seed, role, round, device)`` so the arms see
identical participants, channels and minibatches whenever their model
weights agree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, detector, metrics, modcodebook, quantizer
from .seeding import derive_int, derive_rng

log = logging.getLogger(__name__)

SCHEMES = ("ifed", "pa", "mdaircomp")


# ---------------------------------------------------------------- data ----


@dataclass(frozen=True)
class DeviceShard:
    features: np.ndarray
    labels: np.ndarray
    device_id: int = -1

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class TaskData:
    shards: list
    bs_shard: DeviceShard
    test: DeviceShard
    feature_dim: int
    classes: int


def make_blobs(n: int, feature_dim: int, classes: int, separation: float, rng, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced Gaussian blobs, class means at radius ``separation`` in noise units.

    Features are multiplied by ``scale / sqrt(feature_dim)``, so ``scale``
    sets the typical sample norm independently of the dimension.
    """
    rng = np.random.default_rng(rng)
    means = rng.standard_normal((classes, feature_dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    y = np.arange(n) % classes
    rng.shuffle(y)
    X = means[y] + rng.standard_normal((n, feature_dim))
    return X * (scale / np.sqrt(feature_dim)), y


def make_noniid_split(features, labels, K: int, random_frac: float, seed) -> list[DeviceShard]:
    """Two-step split: a uniform random share per device, then one label-sorted shard each.

    Each device first receives ``floor(random_frac * n / K)`` samples drawn
    uniformly at random.  The rest is sorted by label, cut into ``K`` equal
    contiguous shards, and the shards are dealt to devices in random order.
    Leftover samples (``< K``) are discarded.
    """
    X = np.asarray(features)
    y = np.asarray(labels)
    n = len(y)
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 <= random_frac <= 1:
        raise ValueError("random_frac must be in [0, 1]")
    if n < K:
        raise ValueError(f"dataset of {n} samples too small for {K} devices")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    per_random = int(math.floor(random_frac * n / K))
    random_part = perm[: per_random * K].reshape(K, per_random)
    rest = perm[per_random * K:]
    rest = rest[np.argsort(y[rest], kind="stable")]
    shard_size = len(rest) // K
    sorted_part = rest[: shard_size * K].reshape(K, shard_size)
    order = rng.permutation(K)
    shards = []
    for k in range(K):
        idx = np.concatenate([random_part[k], sorted_part[order[k]]])
        if idx.size == 0:
            raise ValueError("dataset too small: empty device shard")
        shards.append(DeviceShard(X[idx], y[idx], k))
    return shards


def label_emd(shards, classes: int) -> float:
    """Mean over devices of the l1 distance between local and global label histograms."""
    counts = np.array([np.bincount(s.labels, minlength=classes) for s in shards], dtype=float)
    glob = counts.sum(axis=0) / counts.sum()
    local = counts / counts.sum(axis=1, keepdims=True)
    weights = counts.sum(axis=1) / counts.sum()
    return float((weights * np.abs(local - glob).sum(axis=1)).sum())


def make_task(K=40, feature_dim=64, classes=3, samples_per_device=50, random_frac=0.2,
              test_size=600, bs_samples=60, separation=2.0, feature_scale=4.0, seed=0) -> TaskData:
    rng = derive_rng(seed, "data")
    n_train = K * samples_per_device
    X, y = make_blobs(n_train + test_size + bs_samples, feature_dim, classes, separation, rng, feature_scale)
    shards = make_noniid_split(X[:n_train], y[:n_train], K, random_frac, derive_int(seed, "split"))
    bs = DeviceShard(X[n_train:n_train + bs_samples], y[n_train:n_train + bs_samples], -1)
    test = DeviceShard(X[n_train + bs_samples:], y[n_train + bs_samples:], -2)
    return TaskData(shards, bs, test, feature_dim, classes)


# --------------------------------------------------------------- model ----


def num_weights(feature_dim: int, classes: int) -> int:
    return feature_dim * classes + classes


def logits(w, X, classes: int) -> np.ndarray:
    f = X.shape[1]
    Wm = w[: f * classes].reshape(f, classes)
    return X @ Wm + w[f * classes:]


def softmax_xent(w, X, y, classes: int) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the flat weight vector."""
    z = logits(w, X, classes)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    return float(loss), np.concatenate([(X.T @ g).ravel(), g.sum(axis=0)])


def local_train(w, shard: DeviceShard, eta_l: float, t_l: int, batch: int, rng, classes: int = 3, grad_fn=None) -> np.ndarray:
    """Run ``t_l`` minibatch SGD steps from ``w``; return ``w_final - w``.

    ``grad_fn(w, X, y)`` overrides the default softmax cross-entropy gradient.
    When ``batch >= len(shard)`` every step uses the full shard.
    """
    if len(shard) == 0:
        raise ValueError("empty shard")
    if eta_l <= 0 or t_l < 1:
        raise ValueError("need eta_l > 0 and t_l >= 1")
    rng = np.random.default_rng(rng)
    if grad_fn is None:
        def grad_fn(w, X, y):
            return softmax_xent(w, X, y, classes)[1]
    w0 = np.asarray(w, dtype=float)
    wk = w0.copy()
    n = len(shard)
    for _ in range(t_l):
        if batch >= n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=batch, replace=False)
        wk = wk - eta_l * grad_fn(wk, shard.features[idx], shard.labels[idx])
    return wk - w0


def evaluate(w, test: DeviceShard, classes: int = 3) -> float:
    """Argmax accuracy; ties resolve to the lowest class index."""
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = logits(np.asarray(w), test.features, classes).argmax(axis=1)
    return float((pred == test.labels).mean())


# --------------------------------------------------------------- rounds ---


@dataclass(frozen=True)
class FeelConfig:
    K: int = 40
    M: int = 4
    J: int = 6
    Q: int = 2
    L: int = 20
    snr_db: float = 20.0
    activity_ratio: float = 0.3
    eps_h: float = 0.14
    phase_max: float = 0.0
    eta: float = 1.0
    eta_l: float = 0.01
    local_iters: int = 3
    batch: int = 20
    lloyd_iters: int = 50
    refresh_codebook: bool = True
    oracle_ka: bool = False
    ideal_channel: bool = False
    detector: detector.DetectorConfig = field(default_factory=lambda: detector.DetectorConfig(ka_prior=16))

    @property
    def N(self) -> int:
        return 2**self.J


@dataclass
class RoundRecord:
    round: int
    scheme: str
    seed: int
    test_accuracy: float
    nmse_db: float = float("nan")
    ka_true: int = 0
    ka_hat: int = 0
    sparsity_ratio: float = float("nan")
    p_c1: float = float("nan")
    p_c2: float = float("nan")
    symbols_sent: int = 0
    skipped: bool = False

    FIELDS = ("round", "scheme", "seed", "test_accuracy", "nmse_db", "ka_true", "ka_hat",
              "sparsity_ratio", "p_c1", "p_c2", "symbols_sent", "skipped")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class ArmState:
    scheme: str
    weights: np.ndarray
    errors: np.ndarray  # (K, W) accumulated quantization error per device
    bs_error: np.ndarray  # (W,)
    codebook: quantizer.QuantCodebook | None = None
    modbook: modcodebook.ModCodebook | None = None
    round: int = 0


def init_arm(scheme: str, task: TaskData, cfg: FeelConfig, seed: int) -> ArmState:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    W = num_weights(task.feature_dim, task.classes)
    st = ArmState(scheme, np.zeros(W), np.zeros((cfg.K, W)), np.zeros(W))
    if scheme == "mdaircomp":
        if cfg.ideal_channel:
            st.modbook = modcodebook.orthogonal(cfg.N)
        else:
            st.modbook = modcodebook.generate(cfg.L, cfg.N, derive_int(seed, "modcodebook"))
    return st


def _bs_codebook(st: ArmState, task: TaskData, cfg: FeelConfig, seed: int, t: int) -> quantizer.QuantCodebook:
    if st.codebook is not None and not cfg.refresh_codebook:
        return st.codebook
    delta = local_train(st.weights, task.bs_shard, cfg.eta_l, cfg.local_iters, cfg.batch,
                        derive_rng(seed, "local-bs", t), task.classes)
    s_bs = delta + st.bs_error
    blocks, _ = quantizer.pad_blocks(s_bs, cfg.Q)
    U = quantizer.learn_codebook(blocks, cfg.N, cfg.lloyd_iters, derive_int(seed, "kmeans", t))
    _, q = quantizer.encode_update(s_bs, U)
    st.bs_error = quantizer.accumulate_error(delta, st.bs_error, q)
    st.codebook = U
    return U


def run_round(st: ArmState, task: TaskData, cfg: FeelConfig, seed: int) -> RoundRecord:
    """One global round: broadcast, local training, uplink, aggregation, update."""
    t = st.round
    st.round += 1
    W = st.weights.size
    H = channel.sample_channels(cfg.K, cfg.M, derive_rng(seed, "channel", t))
    try:
        part = channel.select_participants(np.arange(cfg.K), cfg.activity_ratio, H, cfg.eps_h,
                                           derive_rng(seed, "active", t))
    except channel.NoParticipants as exc:
        log.info("round %d skipped: %s", t, exc)
        return RoundRecord(t, st.scheme, seed, evaluate(st.weights, task.test, task.classes), skipped=True)

    deltas = np.stack([
        local_train(st.weights, task.shards[k], cfg.eta_l, cfg.local_iters, cfg.batch,
                    derive_rng(seed, "local", t, k), task.classes)
        for k in part
    ])
    rec = RoundRecord(t, st.scheme, seed, 0.0, ka_true=len(part), ka_hat=len(part))

    if st.scheme == "ifed":
        s_hat = deltas.mean(axis=0)
        rec.symbols_sent = W
    else:
        U = _bs_codebook(st, task, cfg, seed, t)
        sel = np.empty((len(part), quantizer.num_blocks(W, cfg.Q)), dtype=int)
        quantized = np.empty_like(deltas)
        for i, k in enumerate(part):
            iv, quantized[i] = quantizer.encode_update(deltas[i] + st.errors[k], U)
            sel[i] = iv.indices
            st.errors[k] = quantizer.accumulate_error(deltas[i], st.errors[k], quantized[i])
        counts = np.zeros((sel.shape[1], cfg.N), dtype=int)
        np.add.at(counts, (np.broadcast_to(np.arange(sel.shape[1]), sel.shape), sel), 1)
        rec.sparsity_ratio, rec.p_c1, rec.p_c2 = metrics.collision_stats(counts, len(part))
        if st.scheme == "pa":
            s_hat = quantized.mean(axis=0)
            rec.symbols_sent = sel.shape[1]
        else:
            snr = math.inf if cfg.ideal_channel else cfg.snr_db
            phase_max = 0.0 if cfg.ideal_channel else cfg.phase_max
            rx, eq = channel.transmit(st.modbook, sel, H.gains[part], snr, phase_max,
                                      derive_rng(seed, "noise", t))
            det = detector.detect(rx.y, st.modbook, cfg.detector)
            rec.nmse_db = metrics.nmse(eq.x_counts, det.x_counts)
            rec.ka_hat = len(part) if cfg.oracle_ka else detector.estimate_ka(det.x_counts)
            rec.symbols_sent = sel.shape[1] * st.modbook.seq_len
            if rec.ka_hat < 1:
                log.info("round %d skipped: no active devices detected", t)
                rec.skipped = True
                rec.test_accuracy = evaluate(st.weights, task.test, task.classes)
                return rec
            s_hat = detector.aggregate(U, det.x_counts, rec.ka_hat, W)

    st.weights = st.weights + cfg.eta * s_hat
    rec.test_accuracy = evaluate(st.weights, task.test, task.classes)
    return rec


def run_feel(scheme: str, task: TaskData, cfg: FeelConfig, rounds: int, seed: int, on_round=None):
    """Train one arm for ``rounds`` rounds; returns ``(ArmState, list[RoundRecord])``."""
    st = init_arm(scheme, task, cfg, seed)
    records = []
    for _ in range(rounds):
        rec = run_round(st, task, cfg, seed)
        records.append(rec)
        if on_round is not None:
            on_round(rec, st)
    return st, records


def ideal_channel(cfg: FeelConfig) -> FeelConfig:
    """Noiseless orthogonal-codebook variant of ``cfg`` (``L = N``)."""
    return replace(cfg, ideal_channel=True, L=cfg.N)
