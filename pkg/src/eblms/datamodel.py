"""Ground truth, per-node statistics, and streaming regression data.

At node k and instant i the observation follows the linear model
d = u . w_star + v, where u is a zero-mean Gaussian regressor with
covariance R_u and v is zero-mean Gaussian noise with variance sigma2_v,
independent across nodes and white over time.

Stream splitting
----------------
All randomness derives from numpy SeedSequence spawn keys, so every
consumer owns an independent reproducible stream:

    topology      SeedSequence(master_seed, spawn_key=(0,))
    ground truth  SeedSequence(master_seed, spawn_key=(1,))
    profiles      SeedSequence(master_seed, spawn_key=(2,))
    data          SeedSequence(master_seed, spawn_key=(3, replica, node))

Within a data stream, instant i consumes draws [i*(M+1), (i+1)*(M+1)):
M standard-normal regressor draws followed by one noise draw. Distinct
(replica, node) pairs therefore never share generator state, and a
fixed master seed reproduces every stream bit for bit.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SPAWN_TOPOLOGY = 0
SPAWN_GROUND_TRUTH = 1
SPAWN_PROFILES = 2
SPAWN_DATA = 3

SYMMETRY_TOL = 1e-12


class InvalidRange(ValueError):
    """A sampling interval is empty or malformed."""


@dataclass(frozen=True)
class GroundTruth:
    """The unknown parameter vector the network estimates."""

    w_star: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w_star, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("w_star must be a vector of dimension >= 1")
        if not np.all(np.isfinite(w)):
            raise ValueError("w_star must be finite")
        object.__setattr__(self, "w_star", w)

    @property
    def m(self) -> int:
        return self.w_star.size


@dataclass(frozen=True)
class NodeProfile:
    """Step size, regressor covariance, and noise variance of one node."""

    mu: float
    R_u: np.ndarray
    sigma2_v: float

    def __post_init__(self):
        R = np.asarray(self.R_u, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"R_u must be square, got shape {R.shape}")
        if np.abs(R - R.T).max(initial=0.0) > SYMMETRY_TOL:
            raise ValueError("R_u must be symmetric within 1e-12")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R_u must be positive definite")
        if self.mu <= 0.0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.sigma2_v <= 0.0:
            raise ValueError(f"sigma2_v must be > 0, got {self.sigma2_v}")
        object.__setattr__(self, "R_u", R)

    @property
    def m(self) -> int:
        return self.R_u.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular L with L @ L.T == R_u, used to shape regressors."""
        return np.linalg.cholesky(self.R_u)

    def isotropic_power(self, tol: float = SYMMETRY_TOL):
        """Return s with R_u == s * I, or None if the covariance is not isotropic."""
        s = self.R_u[0, 0]
        if np.abs(self.R_u - s * np.eye(self.m)).max() <= tol * max(1.0, abs(s)):
            return float(s)
        return None


@dataclass(frozen=True)
class DataSample:
    """One observation: regressor u, measurement d, and the noise that produced it."""

    u: np.ndarray
    d: float
    v: float


def seed_for(master_seed, *spawn_key) -> np.random.SeedSequence:
    """Named substream of the master seed (see module docstring)."""
    return np.random.SeedSequence(master_seed, spawn_key=tuple(spawn_key))


def data_stream(master_seed, replica: int, node: int) -> np.random.Generator:
    """Independent data stream for (replica, node); node is 1-based."""
    return np.random.default_rng(seed_for(master_seed, SPAWN_DATA, replica, node))


def db_to_power(db) -> float:
    """10^(db/10)."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def sample_ground_truth(m: int, seed) -> GroundTruth:
    """Gaussian direction normalized to unit Euclidean norm, fixed by seed."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(m)
    return GroundTruth(w / np.linalg.norm(w))


def sample_profiles(
    n_nodes: int,
    m: int,
    sigma2_u_range,
    sigma2_v_db_range,
    mu: float,
    seed,
    ru_shape=None,
) -> list:
    """Draw per-node statistics: regressor powers uniform over
    sigma2_u_range, noise powers uniform in dB over sigma2_v_db_range.

    By default R_u = sigma2_u * I. An optional `ru_shape` vector of
    positive diagonal entries replaces the identity with diag(ru_shape),
    so the eigenvalue spread of the covariance can be controlled.
    All nodes share the step size `mu`.
    """
    u_lo, u_hi = (float(x) for x in sigma2_u_range)
    v_lo, v_hi = (float(x) for x in sigma2_v_db_range)
    if not (0 < u_lo <= u_hi):
        raise InvalidRange(f"sigma2_u_range must satisfy 0 < lo <= hi, got {sigma2_u_range}")
    if v_lo > v_hi:
        raise InvalidRange(f"sigma2_v_db_range must be ordered, got {sigma2_v_db_range}")
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    if ru_shape is None:
        base = np.eye(m)
    else:
        shape = np.asarray(ru_shape, dtype=float)
        if shape.shape != (m,) or np.any(shape <= 0):
            raise ValueError(f"ru_shape must be {m} positive entries, got {ru_shape}")
        base = np.diag(shape)
    rng = np.random.default_rng(seed)
    sigma2_u = rng.uniform(u_lo, u_hi, n_nodes)
    noise_db = rng.uniform(v_lo, v_hi, n_nodes)
    return [
        NodeProfile(mu=mu, R_u=sigma2_u[k] * base, sigma2_v=db_to_power(noise_db[k]))
        for k in range(n_nodes)
    ]


def generate_sample(profile: NodeProfile, ground_truth: GroundTruth, rng) -> DataSample:
    """Draw one (u, d, v) triple from the given stream.

    Consumes exactly M+1 standard-normal draws (regressor first, noise
    last), matching the block generator's stream layout.
    """
    m = profile.m
    if ground_truth.m != m:
        raise ValueError(f"dimension mismatch: profile M={m}, w_star M={ground_truth.m}")
    z = rng.standard_normal(m + 1)
    u = z[:m] @ profile.cholesky.T
    v = z[m] * np.sqrt(profile.sigma2_v)
    # same multiply-then-reduce form as generate_block, so both paths
    # produce bit-identical observations from the same stream
    d = float((u * ground_truth.w_star).sum() + v)
    return DataSample(u=u, d=d, v=float(v))


def generate_block(profiles, ground_truth: GroundTruth, horizon: int, master_seed, replica_ids):
    """Generate paired data arrays for a block of replicas.

    Returns (u, d) with u of shape (B, horizon, N, M) and d of shape
    (B, horizon, N). Stream layout is identical to repeated
    generate_sample calls on data_stream(master_seed, replica, node).
    """
    n = len(profiles)
    m = profiles[0].m
    w_star = ground_truth.w_star
    replica_ids = list(replica_ids)
    b = len(replica_ids)
    u = np.empty((b, horizon, n, m))
    d = np.empty((b, horizon, n))
    for bi, replica in enumerate(replica_ids):
        for k, profile in enumerate(profiles):
            rng = data_stream(master_seed, replica, k + 1)
            z = rng.standard_normal((horizon, m + 1))
            uk = z[:, :m] @ profile.cholesky.T
            vk = z[:, m] * np.sqrt(profile.sigma2_v)
            u[bi, :, k, :] = uk
            d[bi, :, k] = (uk * w_star).sum(axis=1) + vk
    return u, d


def data_checksum(u_replica: np.ndarray, d_replica: np.ndarray) -> str:
    """CRC32 of one replica's data arrays, for manifest-level pairing evidence."""
    crc = zlib.crc32(np.ascontiguousarray(u_replica).tobytes())
    crc = zlib.crc32(np.ascontiguousarray(d_replica).tobytes(), crc)
    return f"{crc:08x}"


def profiles_to_table(profiles) -> str:
    """Provenance table: 'node sigma2_u sigma2_v mu' per row.

    Only isotropic covariances are representable; anything else raises.
    """
    lines = ["# node sigma2_u sigma2_v mu"]
    for k, p in enumerate(profiles, start=1):
        s2u = p.isotropic_power()
        if s2u is None:
            raise ValueError(f"node {k}: non-isotropic R_u has no table representation")
        lines.append(f"{k} {s2u!r} {float(p.sigma2_v)!r} {float(p.mu)!r}")
    return "\n".join(lines) + "\n"


def profiles_from_table(text: str, m: int) -> list:
    """Rebuild isotropic profiles from the provenance table."""
    profiles = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        _, s2u, s2v, mu = ln.split()
        profiles.append(
            NodeProfile(mu=float(mu), R_u=float(s2u) * np.eye(m), sigma2_v=float(s2v))
        )
    return profiles
