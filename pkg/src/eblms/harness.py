"""Experiment orchestration: configuration, seeding, replica execution,
and bound/simulation comparison.

Configs are flat key=value text with typed validation. A master seed
feeds the stream-splitting scheme documented in the datamodel module;
replicas run in fixed-size blocks whose results are folded in block
order, so outputs are byte-identical regardless of thread count. All
algorithms in one experiment consume the same per-replica data arrays
(paired comparison), which the manifest evidences with per-replica
checksums.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_F_CAP,
    build_workspace,
    delta_total,
    empirical_trigger_matrix,
    mean_error_bound,
    msd_bound_vectors,
    msd_upper_bound,
    spectral_radius,
    DimensionCapExceeded,
    SingularWeighting,
    UnstableF,
)
from .datamodel import (
    SPAWN_GROUND_TRUTH,
    SPAWN_PROFILES,
    SPAWN_TOPOLOGY,
    data_checksum,
    generate_block,
    sample_ground_truth,
    sample_profiles,
    seed_for,
)
from .diffusion import Algorithm, NonFiniteUpdate, TriggerPolicy, simulate
from .metrics import (
    CurveAccumulator,
    curves_to_csv,
    rates_to_csv,
    steady_state,
    trailing_window,
)
from .topology import (
    load_edge_list,
    metropolis_weights,
    path_topology,
    random_geometric_topology,
)

#: replicas per simulation block; fixed so partitioning never depends on threads
BLOCK_REPLICAS = 25


class ParseError(ValueError):
    """Config text is syntactically malformed (carries line and key context)."""


class ValidationError(ValueError):
    """Config is well-formed but violates the schema; lists all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _parse_scalar_list(text, conv):
    return tuple(conv(part) for part in str(text).split(",") if part.strip() != "")


# key -> (converter, default); converters run during validation
_SCHEMA = {
    "topology": (str, "geometric"),
    "n_nodes": (int, 60),
    "radius": (float, 0.25),
    "topology_file": (str, ""),
    "m": (int, 10),
    "horizon": (int, 1000),
    "replicas": (int, 200),
    "algorithms": (lambda s: _parse_scalar_list(s, str), ("atc", "ebatc", "noncoop")),
    "delta": (lambda s: _parse_scalar_list(s, float), (1e-3, 1e-2, 1e-1)),
    "mu": (float, 0.05),
    "sigma2_u_range": (lambda s: _parse_scalar_list(s, float), (1.0, 2.0)),
    "sigma2_v_db_range": (lambda s: _parse_scalar_list(s, float), (-25.0, -10.0)),
    "ru_diag": (lambda s: _parse_scalar_list(s, float), ()),
    "seed": (int, 42),
    "out_dir": (str, "results"),
    "steady_state_fraction": (float, 0.1),
}


@dataclass(frozen=True)
class ExperimentConfig:
    topology: str = "geometric"
    n_nodes: int = 60
    radius: float = 0.25
    topology_file: str = ""
    m: int = 10
    horizon: int = 1000
    replicas: int = 200
    algorithms: tuple = ("atc", "ebatc", "noncoop")
    delta: tuple = (1e-3, 1e-2, 1e-1)
    mu: float = 0.05
    sigma2_u_range: tuple = (1.0, 2.0)
    sigma2_v_db_range: tuple = (-25.0, -10.0)
    ru_diag: tuple = ()
    seed: int = 42
    out_dir: str = "results"
    steady_state_fraction: float = 0.1

    def canonical_text(self) -> str:
        """Schema-ordered key=value dump; hashing this pins the run."""
        lines = []
        for key in _SCHEMA:
            value = getattr(self, key)
            if isinstance(value, tuple):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate flat key=value config text."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    violations = []
    values = {}
    for key, (conv, default) in _SCHEMA.items():
        if key in raw:
            lineno, text_value = raw[key]
            try:
                values[key] = conv(text_value)
            except (TypeError, ValueError):
                violations.append(f"line {lineno}: key {key!r} has invalid value {text_value!r}")
        else:
            values[key] = default
    if violations:
        raise ValidationError(violations)

    config = ExperimentConfig(**values)
    violations = _validate(config)
    if violations:
        raise ValidationError(violations)
    return config


def _validate(config: ExperimentConfig):
    v = []
    if config.topology not in ("geometric", "path", "file"):
        v.append(f"topology must be geometric|path|file, got {config.topology!r}")
    if config.topology == "file":
        if not config.topology_file:
            v.append("topology = file requires topology_file")
        elif not Path(config.topology_file).exists():
            v.append(f"topology_file {config.topology_file!r} does not exist")
    if config.n_nodes < 1:
        v.append(f"n_nodes must be >= 1, got {config.n_nodes}")
    if not 0 < config.radius <= np.sqrt(2):
        v.append(f"radius must be in (0, sqrt(2)], got {config.radius}")
    if config.m < 1:
        v.append(f"m must be >= 1, got {config.m}")
    if config.horizon < 1:
        v.append(f"horizon must be >= 1, got {config.horizon}")
    if config.replicas < 1:
        v.append(f"replicas must be >= 1, got {config.replicas}")
    known = {a.value for a in Algorithm}
    for alg in config.algorithms:
        if alg not in known:
            v.append(f"unknown algorithm {alg!r}")
    if not config.algorithms:
        v.append("algorithms must not be empty")
    if "ebatc" in config.algorithms and not config.delta:
        v.append("ebatc requires at least one delta value")
    for d in config.delta:
        if d < 0 or not np.isfinite(d):
            v.append(f"delta values must be finite and >= 0, got {d}")
    if config.mu <= 0:
        v.append(f"mu must be > 0, got {config.mu}")
    if len(config.sigma2_u_range) != 2 or not 0 < config.sigma2_u_range[0] <= config.sigma2_u_range[1]:
        v.append(f"sigma2_u_range must satisfy 0 < lo <= hi, got {config.sigma2_u_range}")
    if len(config.sigma2_v_db_range) != 2 or config.sigma2_v_db_range[0] > config.sigma2_v_db_range[1]:
        v.append(f"sigma2_v_db_range must be ordered, got {config.sigma2_v_db_range}")
    if config.ru_diag and (len(config.ru_diag) != config.m or any(x <= 0 for x in config.ru_diag)):
        v.append(f"ru_diag must hold {config.m} positive entries, got {config.ru_diag}")
    if not 0 < config.steady_state_fraction <= 1:
        v.append(f"steady_state_fraction must be in (0, 1], got {config.steady_state_fraction}")
    return v


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# experiment setup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmVariant:
    label: str
    algorithm: Algorithm
    policies: tuple = None


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit a run."""

    config: ExperimentConfig
    replicas_done: int
    wall_clock_seconds: float
    outputs: tuple
    checksums: tuple  # (replica_id, crc32 hex)
    aborted: str = ""

    def to_text(self) -> str:
        lines = [
            "manifest_version = 1",
            f"package = eblms {__version__}",
            f"config_hash = {self.config.config_hash()}",
            "seed_scheme = SeedSequence(seed, spawn_key): topology=(0,) "
            "ground_truth=(1,) profiles=(2,) data=(3, replica, node)",
            f"block_replicas = {BLOCK_REPLICAS}",
            f"replicas_done = {self.replicas_done}",
            f"wall_clock_seconds = {self.wall_clock_seconds:.3f}",
            f"outputs = {','.join(self.outputs)}",
        ]
        if self.aborted:
            lines.append(f"aborted = {self.aborted}")
        lines.extend(f"config.{ln}" for ln in self.config.canonical_text().splitlines())
        lines.extend(f"checksum.replica.{r} = {crc}" for r, crc in self.checksums)
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    curves: dict
    manifest: RunManifest
    out_dir: Path = None


def build_experiment_topology(config: ExperimentConfig):
    if config.topology == "geometric":
        return random_geometric_topology(
            config.n_nodes, config.radius, seed_for(config.seed, SPAWN_TOPOLOGY)
        )
    if config.topology == "path":
        return path_topology(config.n_nodes)
    return load_edge_list(config.topology_file)


def build_experiment_inputs(config: ExperimentConfig):
    """Topology, combination weights, profiles, and ground truth for a config."""
    topology = build_experiment_topology(config)
    weights = metropolis_weights(topology)
    profiles = sample_profiles(
        config.n_nodes,
        config.m,
        config.sigma2_u_range,
        config.sigma2_v_db_range,
        config.mu,
        seed_for(config.seed, SPAWN_PROFILES),
        ru_shape=config.ru_diag or None,
    )
    ground_truth = sample_ground_truth(config.m, seed_for(config.seed, SPAWN_GROUND_TRUTH))
    return topology, weights, profiles, ground_truth


def algorithm_variants(config: ExperimentConfig) -> list:
    """One variant per configured algorithm, expanding ebatc per threshold."""
    variants = []
    for alg in config.algorithms:
        if alg == "ebatc":
            for d in config.delta:
                policies = tuple(
                    TriggerPolicy.identity(config.m, d) for _ in range(config.n_nodes)
                )
                variants.append(AlgorithmVariant(f"ebatc_d{d:g}", Algorithm.EB_ATC, policies))
        else:
            variants.append(AlgorithmVariant(alg, Algorithm(alg)))
    return variants


def _replica_blocks(replicas: int):
    return [
        list(range(start, min(start + BLOCK_REPLICAS, replicas)))
        for start in range(0, replicas, BLOCK_REPLICAS)
    ]


def _run_block(config, variants, weights, profiles, ground_truth, replica_ids, store_error_sum):
    mu = np.array([p.mu for p in profiles])
    u, d = generate_block(profiles, ground_truth, config.horizon, config.seed, replica_ids)
    checksums = tuple(
        (r, data_checksum(u[bi], d[bi])) for bi, r in enumerate(replica_ids)
    )
    traces = {}
    for variant in variants:
        traces[variant.label] = simulate(
            variant.algorithm,
            weights,
            mu,
            list(variant.policies) if variant.policies else None,
            ground_truth,
            u,
            d,
            replica_ids=replica_ids,
            store_f_prior=False,
            store_error_sum=store_error_sum,
        )
    return checksums, traces


def _iter_blocks(config, variants, weights, profiles, ground_truth, threads, store_error_sum):
    """Yield per-block results in block order, optionally computing ahead
    with a thread pool."""
    blocks = _replica_blocks(config.replicas)
    if threads <= 1:
        for replica_ids in blocks:
            yield _run_block(
                config, variants, weights, profiles, ground_truth, replica_ids, store_error_sum
            )
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(
                _run_block,
                config, variants, weights, profiles, ground_truth, replica_ids, store_error_sum,
            )
            for replica_ids in blocks
        ]
        for future in futures:
            yield future.result()


@dataclass
class _ExecutionState:
    accumulators: dict
    err_vec_sums: dict
    checksums: list
    replicas_done: int = 0


def _execute(config, variants, weights, profiles, ground_truth, threads=1, trace_hook=None, store_error_sum=False) -> _ExecutionState:
    state = _ExecutionState(
        accumulators={v.label: CurveAccumulator(v.label) for v in variants},
        err_vec_sums={v.label: None for v in variants},
        checksums=[],
    )
    for checksums, traces in _iter_blocks(
        config, variants, weights, profiles, ground_truth, threads, store_error_sum
    ):
        state.checksums.extend(checksums)
        for variant in variants:
            trace = traces[variant.label]
            if trace_hook is not None:
                trace_hook(variant.label, trace)
            state.accumulators[variant.label].add(trace)
            if store_error_sum:
                prev = state.err_vec_sums[variant.label]
                state.err_vec_sums[variant.label] = (
                    trace.err_vec_sum if prev is None else prev + trace.err_vec_sum
                )
        state.replicas_done += len(checksums)
    return state


def run_experiment(config: ExperimentConfig, threads: int = 1, out_dir=None, trace_hook=None) -> ExperimentResult:
    """Run every configured algorithm over paired replica data and write
    learning-curve CSVs plus the run manifest.

    On a non-finite abort, curves accumulated from completed blocks are
    flushed before the error propagates.
    """
    started = time.monotonic()
    _, weights, profiles, ground_truth = build_experiment_inputs(config)
    variants = algorithm_variants(config)
    target = Path(out_dir if out_dir is not None else config.out_dir)

    def flush(state, aborted=""):
        target.mkdir(parents=True, exist_ok=True)
        curves = {}
        outputs = []
        for variant in variants:
            acc = state.accumulators[variant.label]
            if acc.n_replicas == 0:
                continue
            curve = acc.finalize(window_fraction=config.steady_state_fraction)
            curves[variant.label] = curve
            curve_name = f"curves_{variant.label}.csv"
            rate_name = f"rates_{variant.label}.csv"
            curves_to_csv(curve, target / curve_name)
            rates_to_csv(curve, target / rate_name)
            outputs.extend([curve_name, rate_name])
        manifest = RunManifest(
            config=config,
            replicas_done=state.replicas_done,
            wall_clock_seconds=time.monotonic() - started,
            outputs=tuple(outputs + ["manifest.txt"]),
            checksums=tuple(state.checksums),
            aborted=aborted,
        )
        (target / "manifest.txt").write_text(manifest.to_text(), encoding="utf-8")
        return ExperimentResult(curves=curves, manifest=manifest, out_dir=target)

    state = _ExecutionState(
        accumulators={v.label: CurveAccumulator(v.label) for v in variants},
        err_vec_sums={v.label: None for v in variants},
        checksums=[],
    )
    try:
        for checksums, traces in _iter_blocks(
            config, variants, weights, profiles, ground_truth, threads, False
        ):
            state.checksums.extend(checksums)
            for variant in variants:
                trace = traces[variant.label]
                if trace_hook is not None:
                    trace_hook(variant.label, trace)
                state.accumulators[variant.label].add(trace)
            state.replicas_done += len(checksums)
    except NonFiniteUpdate as exc:
        if state.replicas_done:
            flush(state, aborted=str(exc))
        raise
    return flush(state)


# ---------------------------------------------------------------------------
# bound vs simulation comparison
# ---------------------------------------------------------------------------


@dataclass
class BoundComparison:
    """Empirical steady-state values against the closed-form bounds."""

    label: str
    delta: float
    mean_error_empirical: float
    mean_error_bound: float
    msd_empirical: float
    msd_bound: float = None
    msd_note: str = ""
    rho_b: float = None
    rho_f: float = None
    entr_ss: float = None

    @property
    def mean_slack(self) -> float:
        return self.mean_error_bound - self.mean_error_empirical

    @property
    def msd_slack(self):
        if self.msd_bound is None:
            return None
        return self.msd_bound - self.msd_empirical

    def to_text(self) -> str:
        lines = [
            f"variant = {self.label}",
            f"delta = {self.delta!r}",
            f"mean_error_empirical = {self.mean_error_empirical!r}",
            f"mean_error_bound = {self.mean_error_bound!r}",
            f"mean_error_slack = {self.mean_slack!r}",
            f"msd_empirical = {self.msd_empirical!r}",
        ]
        if self.msd_bound is None:
            lines.append(f"msd_bound = unavailable ({self.msd_note})")
        else:
            lines.append(f"msd_bound = {self.msd_bound!r}")
            lines.append(f"msd_slack = {self.msd_slack!r}")
        lines.append(f"rho_b = {self.rho_b!r}")
        lines.append(f"rho_f = {self.rho_f!r}")
        lines.append(f"entr_ss = {self.entr_ss!r}")
        return "\n".join(lines) + "\n"


def run_bound_comparison(config: ExperimentConfig, threads: int = 1, f_cap: int = DEFAULT_F_CAP) -> list:
    """Run the event-based variants and compare empirical steady-state
    error statistics against the closed-form bounds.

    Requires M*N within the analysis cap. Returns one comparison per
    configured threshold.
    """
    if config.n_nodes * config.m > f_cap:
        raise ValidationError(
            [f"bound comparison needs n_nodes*m <= {f_cap}, got {config.n_nodes * config.m}"]
        )
    _, weights, profiles, ground_truth = build_experiment_inputs(config)
    variants = []
    for d in config.delta:
        policies = tuple(TriggerPolicy.identity(config.m, d) for _ in range(config.n_nodes))
        variants.append(AlgorithmVariant(f"ebatc_d{d:g}", Algorithm.EB_ATC, policies))

    state = _execute(
        config, variants, weights, profiles, ground_truth,
        threads=threads, store_error_sum=True,
    )
    ws = build_workspace(weights, profiles, f_cap=f_cap, materialize_f=True)
    rho_b = spectral_radius(ws.b_mean)
    rho_f = spectral_radius(ws.f_big)
    start, end = trailing_window(config.horizon, config.steady_state_fraction)

    comparisons = []
    for variant, d in zip(variants, config.delta):
        policies = list(variant.policies)
        curves = state.accumulators[variant.label].finalize(
            window_fraction=config.steady_state_fraction
        )
        summary = steady_state(curves, window_fraction=config.steady_state_fraction)
        mean_err_vec = state.err_vec_sums[variant.label] / config.replicas
        window_mean = mean_err_vec[start : end + 1].mean(axis=0)
        empirical_bmax = float(np.linalg.norm(window_mean, axis=1).max())
        bound = mean_error_bound(weights, profiles, policies)

        msd_bound = None
        msd_note = ""
        try:
            f1, f2 = msd_bound_vectors(ws, delta_total(policies))
            g_ss = empirical_trigger_matrix(curves.per_node_trigger_rate, config.m)
            msd_bound = msd_upper_bound(ws, f1, f2, g_ss)
        except (UnstableF, SingularWeighting, DimensionCapExceeded) as exc:
            msd_note = str(exc)
        comparisons.append(
            BoundComparison(
                label=variant.label,
                delta=d,
                mean_error_empirical=empirical_bmax,
                mean_error_bound=bound,
                msd_empirical=summary.msd_ss_linear,
                msd_bound=msd_bound,
                msd_note=msd_note,
                rho_b=rho_b,
                rho_f=rho_f,
                entr_ss=summary.entr_ss,
            )
        )
    return comparisons
