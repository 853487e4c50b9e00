"""Experiment configuration, CSV/manifest output and the benchmark drivers.

A run is fully determined by an :class:`ExperimentConfig` and a master seed.
Configs are flat ``key = value`` text files; every key must be a field of
``ExperimentConfig`` and values are parsed to the field's type.  Results go
to append-only CSV files through :class:`CsvSink`, and every command writes
a JSON manifest (config, seeds, ``git describe``) next to them.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import channel, detector, feel, metrics, modcodebook
from .seeding import derive_int, derive_rng

log = logging.getLogger(__name__)

OUT_ENV = "MDAIRCOMP_OUT"
DEFAULT_OUT = "results"


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class ExperimentConfig:
    # system
    K: int = 40
    M: int = 4
    J: int = 6
    Q: int = 2
    L: int = 20
    snr_db: float = 20.0
    activity_ratio: float = 0.3
    eps_h: float = 0.14
    phase_max: float = 0.0
    # detector
    damping: float = 0.3
    max_iters: int = 50
    ka_prior: int = 16
    # FEEL
    rounds: int = 200
    seeds: tuple = (0,)
    schemes: tuple = feel.SCHEMES
    eta: float = 1.0
    eta_l: float = 0.01
    local_iters: int = 3
    batch: int = 20
    oracle_ka: bool = False
    # dataset
    feature_dim: int = 64
    classes: int = 3
    samples_per_device: int = 50
    random_frac: float = 0.2
    separation: float = 2.0
    feature_scale: float = 4.0
    # synthetic detector benchmark
    trials: int = 100
    blocks: int = 50
    bench_ka: int = 12
    popularity_scale: float = 6.0
    # execution
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "schemes", tuple(str(s) for s in self.schemes))
        self.validate()

    @property
    def N(self) -> int:
        return 2**self.J

    def validate(self) -> None:
        positive = ("K", "M", "J", "Q", "L", "max_iters", "ka_prior", "local_iters", "batch",
                    "feature_dim", "samples_per_device", "trials", "blocks", "bench_ka", "workers")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if not 0 < self.activity_ratio <= 1:
            raise ConfigError(f"activity_ratio must be in (0, 1], got {self.activity_ratio}")
        if not 0 <= self.damping < 1:
            raise ConfigError(f"damping must be in [0, 1), got {self.damping}")
        if not 0 <= self.random_frac <= 1:
            raise ConfigError(f"random_frac must be in [0, 1], got {self.random_frac}")
        for name in ("eps_h", "phase_max", "eta", "rounds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.eta_l <= 0 or self.popularity_scale <= 0 or self.feature_scale <= 0:
            raise ConfigError("eta_l, popularity_scale and feature_scale must be > 0")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        bad = set(self.schemes) - set(feel.SCHEMES)
        if bad or not self.schemes:
            raise ConfigError(f"unknown scheme(s) {sorted(bad)}; expected a subset of {feel.SCHEMES}")

    def replace(self, **changes) -> "ExperimentConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def detector_config(self) -> detector.DetectorConfig:
        return detector.DetectorConfig(max_iters=self.max_iters, damping=self.damping, ka_prior=self.ka_prior)

    def feel_config(self) -> feel.FeelConfig:
        return feel.FeelConfig(
            K=self.K, M=self.M, J=self.J, Q=self.Q, L=self.L, snr_db=self.snr_db,
            activity_ratio=self.activity_ratio, eps_h=self.eps_h, phase_max=self.phase_max,
            eta=self.eta, eta_l=self.eta_l, local_iters=self.local_iters, batch=self.batch,
            oracle_ka=self.oracle_ka, detector=self.detector_config(),
        )

    def make_task(self, seed: int) -> feel.TaskData:
        return feel.make_task(K=self.K, feature_dim=self.feature_dim, classes=self.classes,
                              samples_per_device=self.samples_per_device, random_frac=self.random_frac,
                              separation=self.separation, feature_scale=self.feature_scale, seed=seed)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["schemes"] = list(self.schemes)
        return d

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- config --

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _field_types() -> dict:
    return {f.name: type(f.default) for f in fields(ExperimentConfig)}


def parse_value(key: str, text: str):
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key: {key!r}")
    kind = types[key]
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in _BOOL:
                raise ValueError(text)
            return _BOOL[text.lower()]
        if kind is int:
            return int(text)
        if kind is float:
            v = float(text)
            if math.isnan(v):
                raise ValueError(text)
            return v
        if key == "seeds":
            return tuple(int(s) for s in text.split(",") if s.strip())
        return tuple(s.strip() for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {kind.__name__})") from None


def parse_assignments(items, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key=value`` strings on top of ``base``."""
    changes = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        changes[key.strip()] = parse_value(key.strip(), val)
    try:
        return (base or ExperimentConfig()).replace(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment, duplicates are rejected."""
    items, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key = line.split("=", 1)[0].strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        items.append(line)
    return parse_assignments(items, base)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), base)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# ---------------------------------------------------------------- output --


class CsvSink:
    """Append-only CSV writer with a fixed header.

    An existing file is appended to only if its header matches; each row is
    flushed so an interrupted run leaves every completed row on disk.
    """

    def __init__(self, path, header):
        self.path = Path(path)
        self.header = list(header)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        if not fresh:
            with open(self.path, newline="") as fh:
                existing = next(csv.reader(fh), [])
            if existing != self.header:
                raise ConfigError(f"{self.path}: existing header {existing} does not match {self.header}")
        self._fh = open(self.path, "a", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._w.writerow(self.header)
            self._fh.flush()

    def write(self, row) -> None:
        row = list(row)
        if len(row) != len(self.header):
            raise ValueError(f"row has {len(row)} fields, header has {len(self.header)}")
        self._w.writerow([_fmt(v) for v in row])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def make_manifest(command: str, cfg: ExperimentConfig, seeds, outputs, status: str = "complete", extra=None) -> dict:
    return {
        "command": command,
        "config": cfg.as_dict(),
        "seeds": [int(s) for s in seeds],
        "git_describe": git_describe(),
        "outputs": [str(p) for p in outputs],
        "status": status,
        "extra": extra or {},
    }


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def write_manifest(path, manifest: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dump_manifest(manifest))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


# -------------------------------------------------------- detector bench --

BENCH_FIELDS = ("snr_db", "L", "M", "trial", "seed", "ka_true", "ka_hat_mv", "ka_hat_mean",
                "nmse_db", "sparsity_ratio", "p_c1", "iterations")
PMF_FIELDS = ("snr_db", "L", "M", "estimator", "ka_hat", "probability")


def skewed_selections(N: int, Ka: int, D: int, popularity_scale: float, rng) -> np.ndarray:
    """Codeword choices with collision-heavy statistics, shape ``(Ka, D)``.

    Early in training, device updates are similar, so many devices land on
    the same few codewords.  Per block, codeword popularity decays
    geometrically (``p_n ~ exp(-n / popularity_scale)``) over a fresh random
    ordering of the codebook.
    """
    rng = np.random.default_rng(rng)
    p = np.exp(-np.arange(N) / popularity_scale)
    p /= p.sum()
    return np.stack([rng.permutation(N)[rng.choice(N, Ka, p=p)] for _ in range(D)], axis=1)


def surviving_channels(Ka: int, M: int, eps_h: float, rng) -> np.ndarray:
    """Rayleigh rows for ``Ka`` devices, redrawing any with ``|h[0]| < eps_h``."""
    rng = np.random.default_rng(rng)
    h = channel.complex_normal(rng, (Ka, M))
    while True:
        bad = np.abs(h[:, 0]) < eps_h
        if not bad.any():
            return h
        h[bad] = channel.complex_normal(rng, (int(bad.sum()), M))


def bench_trial(cfg: ExperimentConfig, snr_db: float, trial: int, seed: int) -> dict:
    """One synthetic detector trial: selections -> channel -> AMP-DA -> metrics."""
    # codebook, channel and selections are shared across SNR points; only the noise differs
    key = (cfg.L, cfg.M, trial)
    P = modcodebook.generate(cfg.L, cfg.N, derive_int(seed, "bench-codebook", *key))
    h = surviving_channels(cfg.bench_ka, cfg.M, cfg.eps_h, derive_rng(seed, "bench-channel", *key))
    sel = skewed_selections(cfg.N, cfg.bench_ka, cfg.blocks, cfg.popularity_scale,
                            derive_rng(seed, "bench-select", *key))
    noise_rng = derive_rng(seed, "bench-noise", *key, int(round(snr_db * 1000)))
    rx, eq = channel.transmit(P, sel, h, snr_db, cfg.phase_max, noise_rng)
    res = detector.detect(rx.y, P, cfg.detector_config())
    p_s, p_c1, _ = metrics.collision_stats(eq.x_counts, cfg.bench_ka)
    return {
        "snr_db": snr_db, "L": cfg.L, "M": cfg.M, "trial": trial, "seed": seed,
        "ka_true": cfg.bench_ka,
        "ka_hat_mv": detector.estimate_ka(res.x_counts),
        "ka_hat_mean": detector.estimate_ka_mean(res.x_counts),
        "nmse_db": metrics.nmse(eq.x_counts, res.x_counts),
        "sparsity_ratio": p_s, "p_c1": p_c1,
        "iterations": float(res.iterations.mean()),
    }


def _bench_job(args):
    return bench_trial(*args)


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return map(fn, jobs)
    pool = ProcessPoolExecutor(max_workers=workers)
    # results come back in submission order, so output is worker-count independent
    return _closing(pool, pool.map(fn, jobs))


def _closing(pool, it):
    try:
        yield from it
    finally:
        pool.shutdown()


def ka_pmf(rows, estimator: str = "ka_hat_mv") -> dict:
    """Empirical PMF of an estimator's output, ``{ka_hat: probability}``."""
    vals = [r[estimator] for r in rows]
    uniq, counts = np.unique(vals, return_counts=True)
    return {int(u): c / len(vals) for u, c in zip(uniq, counts)}


def detect_bench(cfg: ExperimentConfig, snrs, seed: int, sink: CsvSink | None = None,
                 pmf_sink: CsvSink | None = None) -> list[dict]:
    """Run ``cfg.trials`` trials at each SNR; return the per-trial rows."""
    rows = []
    for snr in snrs:
        jobs = [(cfg, float(snr), t, seed) for t in range(cfg.trials)]
        point = []
        for row in _map(_bench_job, jobs, cfg.workers):
            point.append(row)
            if sink is not None:
                sink.write([row[f] for f in BENCH_FIELDS])
        if pmf_sink is not None:
            for est in ("ka_hat_mv", "ka_hat_mean"):
                for ka, p in ka_pmf(point, est).items():
                    pmf_sink.write([float(snr), cfg.L, cfg.M, est, ka, p])
        rows.extend(point)
    return rows


def summarize_bench(rows) -> list[dict]:
    """Median NMSE and exact-hit rates per ``(snr_db, L, M)`` point."""
    out = []
    keyf = lambda r: (r["snr_db"], r["L"], r["M"])  # noqa: E731
    for key, grp in itertools.groupby(sorted(rows, key=keyf), key=keyf):
        grp = list(grp)
        out.append({
            "snr_db": key[0], "L": key[1], "M": key[2], "trials": len(grp),
            "median_nmse_db": float(np.median([r["nmse_db"] for r in grp])),
            "mv_hit_rate": float(np.mean([r["ka_hat_mv"] == r["ka_true"] for r in grp])),
            "mean_hit_rate": float(np.mean([r["ka_hat_mean"] == r["ka_true"] for r in grp])),
        })
    return out


# ----------------------------------------------------------------- FEEL ---

WEIGHT_FIELDS = ("scheme", "seed", "index", "weight")


def _feel_job(args):
    cfg, scheme, seed, ideal = args
    fc = cfg.feel_config()
    if ideal:
        fc = feel.ideal_channel(fc)
    if cfg.rounds == 0:
        return scheme, seed, [], None
    st, recs = feel.run_feel(scheme, cfg.make_task(seed), fc, cfg.rounds, seed)
    return scheme, seed, recs, st.weights


def run_feel_experiment(cfg: ExperimentConfig, sink: CsvSink | None = None,
                        weight_sink: CsvSink | None = None, ideal: bool = False) -> dict:
    """Train every ``(scheme, seed)`` arm; return ``{(scheme, seed): [RoundRecord, ...]}``."""
    jobs = [(cfg, scheme, seed, ideal) for seed in cfg.seeds for scheme in cfg.schemes]
    results = {}
    for scheme, seed, recs, w in _map(_feel_job, jobs, cfg.workers):
        results[(scheme, seed)] = recs
        if sink is not None:
            for r in recs:
                sink.write(r.as_row())
        if weight_sink is not None and w is not None:
            for i, v in enumerate(w):
                weight_sink.write([scheme, seed, i, v])
    return results


def final_accuracy(results: dict) -> dict:
    """Mean final test accuracy per scheme over seeds."""
    acc = {}
    for (scheme, _), recs in results.items():
        if recs:
            acc.setdefault(scheme, []).append(recs[-1].test_accuracy)
    return {s: float(np.mean(v)) for s, v in acc.items()}


# ---------------------------------------------------------------- sweep ---


def parse_axis(spec: str) -> tuple[str, list]:
    """``"L=15,20"`` -> ``("L", [15, 20])`` with values typed per the config field."""
    if "=" not in spec:
        raise ConfigError(f"axis must look like key=v1,v2,..., got {spec!r}")
    key, vals = spec.split("=", 1)
    key = key.strip()
    if key in ("seeds", "schemes"):
        raise ConfigError(f"{key} cannot be a sweep axis; set it in the config instead")
    values = [parse_value(key, v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"axis {key!r} has no values")
    return key, values


def sweep_points(cfg: ExperimentConfig, axes) -> list[tuple[str, ExperimentConfig]]:
    """Cartesian grid over ``axes`` (list of ``(key, values)``), validated up front."""
    points = []
    keys = [k for k, _ in axes]
    for combo in itertools.product(*(v for _, v in axes)):
        setting = ";".join(f"{k}={v}" for k, v in zip(keys, combo))
        points.append((setting, cfg.replace(**dict(zip(keys, combo)))))
    return points
