"""AMP-DA: approximate message passing for digital aggregation.

The receiver observes ``Y_d = P X_d + Z_d`` for every block ``d`` and only
needs column 0 of ``X_d`` (codeword-usage counts).  AMP decouples the linear
mixing into scalar channels ``r = x + CN(0, phi)``, which are then denoised
with

* an integer-count prior on antenna 0:
  ``(1 - a) delta(x) + a / K sum_{s=1..K} delta(x - s)``;
* a Bernoulli-Gaussian prior on antennas 1..M-1:
  ``(1 - a) delta(x) + a CN(x; mu0, tau0)``,

where the activity ``a_n`` is shared across antennas (row sparsity) and
``a``, ``sigma^2``, ``mu0``, ``tau0`` are re-estimated by EM each iteration.

Blocks are processed as a batch along a leading axis.  By default the noise
variance is shared and all blocks stop together on the mean residual;
``DetectorConfig(joint=False)`` gives every block its own noise variance and
stopping rule.  The joint rule is markedly more robust: a single block's
residual wobbles as it converges, and per-block stopping tends to quit on the
first uptick.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# floors on variances and denominators; keep sigma^2 collapse from producing inf/NaN
VAR_FLOOR = 1e-12
PI_CLIP = 1e-12


@dataclass(frozen=True)
class DetectorConfig:
    max_iters: int = 50
    damping: float = 0.3
    ka_prior: int = 16
    min_iters_before_stop: int = 15
    joint: bool = True
    init_activity: float = 0.5
    init_noise_var: float = 100.0
    init_mu0: complex = 0.0
    init_tau0: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must be in [0, 1)")
        if self.ka_prior < 1:
            raise ValueError("ka_prior must be >= 1")


@dataclass
class AmpState:
    """Per-block AMP/EM quantities; every array has a leading block axis."""

    x_hat: np.ndarray  # (D, N, M) complex
    v_hat: np.ndarray  # (D, N, M)
    V: np.ndarray  # (D, L, M)
    Z: np.ndarray  # (D, L, M) complex
    activity: np.ndarray  # (D, N)
    noise_var: np.ndarray  # (D,)
    mu0: np.ndarray  # (D,) complex
    tau0: np.ndarray  # (D,)
    phi: np.ndarray | None = None  # (D, N, M)
    r: np.ndarray | None = None  # (D, N, M) complex
    pi: np.ndarray | None = None  # (D, N, M-1)
    mu: np.ndarray | None = None  # (D, N, M-1) complex
    tau: np.ndarray | None = None  # (D, N, M-1)
    activity0: np.ndarray | None = None  # (D, N), nonzero mass on antenna 0
    iter: int = 0
    residual: np.ndarray | None = None  # (D,)

    @classmethod
    def initial(cls, Y: np.ndarray, N: int, cfg: DetectorConfig) -> "AmpState":
        D, L, M = Y.shape
        return cls(
            x_hat=np.zeros((D, N, M), dtype=complex),
            v_hat=np.ones((D, N, M)),
            V=np.ones((D, L, M)),
            Z=Y.astype(complex, copy=True),
            activity=np.full((D, N), cfg.init_activity),
            noise_var=np.full(D, cfg.init_noise_var),
            mu0=np.full(D, cfg.init_mu0, dtype=complex),
            tau0=np.full(D, cfg.init_tau0),
            phi=np.ones((D, N, M)),
            r=np.zeros((D, N, M), dtype=complex),
            residual=np.full(D, 100.0),
        )

    _CARRIED = ("x_hat", "v_hat", "V", "Z", "activity", "noise_var", "mu0", "tau0", "phi", "r", "residual")

    def take(self, idx) -> "AmpState":
        """Sub-state for the blocks in ``idx``."""
        return AmpState(**{f: getattr(self, f)[idx] for f in self._CARRIED}, iter=self.iter)

    def put(self, idx, other: "AmpState", sel=slice(None)) -> None:
        """Write ``other[sel]`` back into blocks ``idx``."""
        for f in self._CARRIED:
            getattr(self, f)[idx] = getattr(other, f)[sel]


@dataclass
class DetectionResult:
    x_counts: np.ndarray  # (D, N) real posterior means on antenna 0
    X_hat: np.ndarray  # (D, N, M)
    iterations: np.ndarray  # (D,) iterate returned per block
    residual: np.ndarray  # (D,)
    state: AmpState
    trace: list = field(default_factory=list)

    def write_trace(self, path) -> None:
        """Dump ``block, iteration, residual, noise_var, tau0, abs_mu0, sum_activity`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block", "iteration", "residual", "noise_var", "tau0", "abs_mu0", "sum_activity"])
            for rec in self.trace:
                for d in range(len(rec["residual"])):
                    w.writerow([d, rec["iteration"], rec["residual"][d], rec["noise_var"][d],
                                rec["tau0"][d], rec["abs_mu0"][d], rec["sum_activity"][d]])


def _logit(a):
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(a) - np.log1p(-a)


def denoise_antenna1(r, phi, a, ka_prior: int):
    """Posterior mean/variance of an integer count observed as ``r = x + CN(0, phi)``.

    The posterior is normalized over ``s in {0, 1, ..., ka_prior}`` in the log
    domain.  Returns ``(x_hat, v_hat, nonzero_mass)``; all broadcast over the
    inputs.
    """
    # |r - s|^2 = (Re r - s)^2 + (Im r)^2; the imaginary term is common to every s and cancels
    rr = np.real(np.asarray(r))
    phi = np.maximum(np.asarray(phi, dtype=float), VAR_FLOOR)
    a = np.asarray(a, dtype=float)
    rr, phi, a = np.broadcast_arrays(rr, phi, a)
    s = np.arange(ka_prior + 1, dtype=float)
    log_w = -((rr[..., None] - s) ** 2) / phi[..., None]
    with np.errstate(divide="ignore"):
        log_w[..., 0] += np.log1p(-a)
        log_w[..., 1:] += (np.log(a) - np.log(ka_prior))[..., None]
    log_w -= log_w.max(axis=-1, keepdims=True)
    w = np.exp(log_w)
    w /= w.sum(axis=-1, keepdims=True)
    x_hat = w @ s
    v_hat = np.maximum(w @ s**2 - x_hat**2, 0.0)
    return x_hat, v_hat, 1.0 - w[..., 0]


def bernoulli_gaussian_posterior(r, phi, a, mu0, tau0):
    """Spike-and-slab posterior parameters ``(pi, mu, tau)`` for ``r = x + CN(0, phi)``."""
    r = np.asarray(r, dtype=complex)
    phi = np.maximum(np.asarray(phi, dtype=float), VAR_FLOOR)
    tau0 = np.maximum(np.asarray(tau0, dtype=float), VAR_FLOOR)
    mu = (mu0 * phi + tau0 * r) / (phi + tau0)
    tau = tau0 * phi / (phi + tau0)
    llr = np.log(phi / (tau0 + phi)) - np.abs(r - mu0) ** 2 / (tau0 + phi) + np.abs(r) ** 2 / phi
    pi = expit(_logit(a) + llr)
    return pi, mu, tau


def denoise_antenna_m(r, phi, a, mu0, tau0):
    """Posterior mean/variance under the Bernoulli-Gaussian prior.

    Returns ``(x_hat, v_hat, pi)`` where ``pi`` is the posterior probability
    that the entry is nonzero.
    """
    pi, mu, tau = bernoulli_gaussian_posterior(r, phi, a, mu0, tau0)
    x_hat = pi * mu
    v_hat = np.maximum(pi * (np.abs(mu) ** 2 + tau) - np.abs(x_hat) ** 2, 0.0)
    return x_hat, v_hat, pi


def decouple_step(Y: np.ndarray, P: np.ndarray, state: AmpState, damping: float) -> AmpState:
    """Factor-node update of ``V, Z`` (damped), then variable-node ``phi, r``.

    ``Y`` is ``(D, L, M)`` and ``P`` is the ``(L, N)`` codebook matrix.  The
    returned state shares the posterior arrays of ``state``.
    """
    absP2 = np.abs(P) ** 2
    sig = state.noise_var[:, None, None]
    V_new = absP2 @ state.v_hat
    onsager = (Y - state.Z) / np.maximum(sig + state.V, VAR_FLOOR)
    Z_new = P @ state.x_hat - V_new * onsager
    V = damping * state.V + (1 - damping) * V_new
    Z = damping * state.Z + (1 - damping) * Z_new
    den = np.maximum(sig + V, VAR_FLOOR)
    phi = np.maximum(1.0 / (absP2.T @ (1.0 / den)), VAR_FLOOR)
    r = state.x_hat + phi * (P.conj().T @ ((Y - Z) / den))
    return AmpState(
        x_hat=state.x_hat, v_hat=state.v_hat, V=V, Z=Z, activity=state.activity,
        noise_var=state.noise_var, mu0=state.mu0, tau0=state.tau0, phi=phi, r=r,
        iter=state.iter, residual=state.residual,
    )


def denoise_step(state: AmpState, ka_prior: int) -> AmpState:
    """Apply both denoisers to the decoupled observations ``r``."""
    x = np.empty_like(state.r)
    v = np.empty(state.r.shape)
    x0, v[..., 0], act0 = denoise_antenna1(state.r[..., 0], state.phi[..., 0], state.activity, ka_prior)
    x[..., 0] = x0
    pi, mu, tau = bernoulli_gaussian_posterior(
        state.r[..., 1:], state.phi[..., 1:], state.activity[..., None],
        state.mu0[:, None, None], state.tau0[:, None, None],
    )
    x[..., 1:] = pi * mu
    v[..., 1:] = np.maximum(pi * (np.abs(mu) ** 2 + tau) - np.abs(x[..., 1:]) ** 2, 0.0)
    state.x_hat, state.v_hat = x, v
    state.activity0, state.pi, state.mu, state.tau = act0, pi, mu, tau
    return state


def noise_var_update(Y: np.ndarray, Z: np.ndarray, V: np.ndarray, noise_var: np.ndarray) -> np.ndarray:
    """EM noise-variance update, averaged over the ``L * M`` observations of each block."""
    sig = noise_var[:, None, None]
    terms = np.abs(Y - Z) ** 2 / (1.0 + V / sig) ** 2 + sig * V / (V + sig)
    return terms.mean(axis=(1, 2))


def em_update(state: AmpState, Y: np.ndarray) -> AmpState:
    """EM refresh of activity, noise variance and the slab mean/variance."""
    acts = [state.activity0[..., None]]
    if state.pi is not None and state.pi.shape[-1]:
        acts.append(state.pi)
    state.activity = np.clip(np.concatenate(acts, axis=-1).mean(axis=-1), PI_CLIP, 1 - PI_CLIP)
    state.noise_var = np.maximum(noise_var_update(Y, state.Z, state.V, state.noise_var), VAR_FLOOR)
    if state.pi is not None and state.pi.shape[-1]:
        w = state.pi.sum(axis=(1, 2))
        ok = w > 0
        wsafe = np.where(ok, w, 1.0)
        mu0 = (state.pi * state.mu).sum(axis=(1, 2)) / wsafe
        tau0 = (state.pi * (np.abs(mu0[:, None, None] - state.mu) ** 2 + state.tau)).sum(axis=(1, 2)) / wsafe
        state.mu0 = np.where(ok, mu0, state.mu0)
        state.tau0 = np.where(ok, np.maximum(tau0, VAR_FLOOR), state.tau0)
    return state


def block_residual(Y: np.ndarray, P: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """``||Y_d - P X_d||_F / L`` per block."""
    L = P.shape[0]
    return np.sqrt((np.abs(Y - P @ x_hat) ** 2).sum(axis=(1, 2))) / L


def detect(Y, P, cfg: DetectorConfig = DetectorConfig(), keep_trace: bool = False) -> DetectionResult:
    """Run AMP-DA on a batch of received blocks.

    Parameters
    ----------
    Y : array_like, shape (D, L, M) or (L, M)
        Received blocks.
    P : ModCodebook or array_like, shape (L, N)
    cfg : DetectorConfig

    A block stops once it has run more than ``min_iters_before_stop``
    iterations and its residual fails to decrease; the previous (lower
    residual) iterate is kept.
    """
    P = np.asarray(getattr(P, "sequences", P), dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim == 2:
        Y = Y[None]
    if Y.ndim != 3 or Y.shape[1] != P.shape[0]:
        raise ValueError(f"Y shape {Y.shape} inconsistent with codebook {P.shape}")
    D, L, M = Y.shape
    N = P.shape[1]

    st = AmpState.initial(Y, N, cfg)
    running = np.ones(D, dtype=bool)
    iters = np.zeros(D, dtype=int)
    trace = []

    for i in range(1, cfg.max_iters + 1):
        # stopped blocks are frozen; only the running ones are iterated
        idx = np.flatnonzero(running)
        prev = st.take(idx)
        Yi = Y[idx]
        cand = decouple_step(Yi, P, prev, cfg.damping)
        cand = denoise_step(cand, cfg.ka_prior)
        cand = em_update(cand, Yi)
        if cfg.joint:
            cand.noise_var = np.full(len(idx), cand.noise_var.mean())
        if not np.all(np.isfinite(cand.x_hat)):
            bad = idx[~np.isfinite(cand.x_hat).all(axis=(1, 2))]
            raise FloatingPointError(
                f"AMP-DA diverged at iteration {i} in blocks {bad.tolist()} (damping={cfg.damping})"
            )
        cand.residual = block_residual(Yi, P, cand.x_hat)
        if cfg.joint:
            cand.residual = np.full(len(idx), cand.residual.mean())
        stop = (i > cfg.min_iters_before_stop) & (cand.residual >= prev.residual)
        st.put(idx[~stop], cand, ~stop)
        st.iter = i
        iters[idx[~stop]] = i
        running[idx[stop]] = False
        if keep_trace:
            trace.append({
                "iteration": i,
                "residual": st.residual.copy(),
                "noise_var": st.noise_var.copy(),
                "tau0": st.tau0.copy(),
                "abs_mu0": np.abs(st.mu0),
                "sum_activity": st.activity.sum(axis=1),
            })
        if not running.any():
            break

    return DetectionResult(
        x_counts=st.x_hat[..., 0].real.copy(),
        X_hat=st.x_hat,
        iterations=iters,
        residual=st.residual.copy(),
        state=st,
        trace=trace,
    )


def detect_block(Y, P, cfg: DetectorConfig = DetectorConfig(), keep_trace: bool = False):
    """Single-block convenience wrapper: returns ``(x_counts, X_hat, trace)``."""
    res = detect(np.asarray(Y)[None] if np.ndim(Y) == 2 else Y, P, cfg, keep_trace)
    return res.x_counts[0], res.X_hat[0], res.trace


def rounded_l1(x_blocks) -> np.ndarray:
    """``floor(||x_d||_1 + 1/2)`` for each block."""
    x = np.atleast_2d(np.asarray(x_blocks))
    return np.floor(np.abs(x).sum(axis=1) + 0.5).astype(int)


def estimate_ka(x_blocks) -> int:
    """Majority vote over per-block rounded l1 norms; ties go to the larger count."""
    votes = rounded_l1(x_blocks)
    vals, counts = np.unique(votes, return_counts=True)
    return int(vals[counts == counts.max()].max())


def estimate_ka_mean(x_blocks) -> int:
    """Baseline: round the mean of the per-block l1 norms."""
    x = np.atleast_2d(np.asarray(x_blocks))
    return int(np.floor(np.abs(x).sum(axis=1).mean() + 0.5))


def aggregate(U, x_blocks, ka_hat: int, W: int) -> np.ndarray:
    """Digital aggregation ``(1/ka_hat) [U x_1; ...; U x_D]`` truncated to ``W`` entries."""
    if ka_hat < 1:
        raise ValueError("no active devices detected")
    U = np.asarray(getattr(U, "codewords", U), dtype=float)
    x = np.atleast_2d(np.real(np.asarray(x_blocks)))
    return (x @ U.T).reshape(-1)[:W] / ka_hat
