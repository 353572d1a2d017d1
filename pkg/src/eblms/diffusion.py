"""Per-iteration algorithms: LMS adaptation, diffusion combination, and
event-based triggering.

Each instant runs three synchronous phases across all nodes:

1. adaptation      psi = w + mu * u * (d - u . w)
2. triggering      broadcast psi (publish psi_bar = psi) iff the a priori
                   gap psi - psi_bar_prev exceeds the node's threshold in
                   its weighted squared norm; ties keep silent
3. combination     w = a_kk * psi_k + sum over neighbors of a_lk * psi_bar_l

The time-driven strategy always broadcasts; the non-cooperative variant
skips phases 2-3 and keeps w = psi. All state arrays carry nodes on the
second-to-last axis and may have a leading replica axis, so a batch of
independent replicas advances in lockstep through identical arithmetic.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .topology import CombinationMatrix, STOCHASTIC_TOL

PSD_TOL = 1e-12


class NonFiniteUpdate(ArithmeticError):
    """An adaptation step produced NaN/Inf; identifies instant and nodes."""

    def __init__(self, instant, nodes, replicas=None):
        self.instant = instant
        self.nodes = list(nodes)
        self.replicas = None if replicas is None else list(replicas)
        where = f"instant {instant}, nodes {self.nodes}"
        if self.replicas is not None:
            where += f", replicas {self.replicas}"
        super().__init__(f"non-finite estimate at {where}")


class MissingNeighborState(KeyError):
    """A combination step needs a neighbor broadcast that was never provided."""


class Algorithm(enum.Enum):
    ATC = "atc"
    EB_ATC = "ebatc"
    NONCOOP = "noncoop"


@dataclass(frozen=True)
class ThresholdSchedule:
    """Piecewise-constant triggering threshold over time.

    `steps` holds (start_instant, value) pairs with strictly increasing
    starts beginning at 0; the threshold at instant i is the value of the
    last step whose start is <= i.
    """

    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ValueError("schedule needs at least one step")
        starts = [s for s, _ in self.steps]
        if starts[0] != 0:
            raise ValueError("first step must start at instant 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("step starts must be strictly increasing")
        for _, value in self.steps:
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"threshold values must be finite and >= 0, got {value}")

    @classmethod
    def constant(cls, value: float) -> "ThresholdSchedule":
        return cls(steps=((0, float(value)),))

    def value_at(self, i: int) -> float:
        idx = bisect_right([s for s, _ in self.steps], i) - 1
        return self.steps[idx][1]

    @property
    def supremum(self) -> float:
        return max(v for _, v in self.steps)


class TriggerPolicy:
    """Weighting matrix and threshold schedule of one node's trigger rule."""

    def __init__(self, weighting, schedule):
        Y = np.asarray(weighting, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
            raise ValueError(f"weighting must be square, got shape {Y.shape}")
        if np.abs(Y - Y.T).max(initial=0.0) > PSD_TOL:
            raise ValueError("weighting must be symmetric within 1e-12")
        eig_min = float(np.linalg.eigvalsh(Y).min()) if Y.size else 0.0
        if eig_min < -PSD_TOL:
            raise ValueError(f"weighting must be PSD; min eigenvalue {eig_min}")
        self.weighting = Y
        # clamp tiny negative eigenvalues from roundoff
        self.lambda_min = max(eig_min, 0.0)
        self.is_strictly_pd = self.lambda_min > 0.0
        if isinstance(schedule, ThresholdSchedule):
            self.schedule = schedule
        else:
            self.schedule = ThresholdSchedule.constant(float(schedule))

    @classmethod
    def identity(cls, m: int, delta) -> "TriggerPolicy":
        return cls(np.eye(m), delta)

    @property
    def m(self) -> int:
        return self.weighting.shape[0]

    @property
    def delta_sup(self) -> float:
        return self.schedule.supremum

    def delta(self, i: int) -> float:
        return self.schedule.value_at(i)

    def gap_norm_bound(self) -> float:
        """Euclidean bound sqrt(delta_sup / lambda_min) on the post-trigger gap."""
        if not self.is_strictly_pd:
            return np.inf
        return float(np.sqrt(self.delta_sup / self.lambda_min))


@dataclass
class NodeState:
    """Per-node estimate triple plus the latest trigger flag."""

    w: np.ndarray
    psi: np.ndarray
    psi_bar: np.ndarray
    gamma: int = 0

    @classmethod
    def zeros(cls, m: int) -> "NodeState":
        return cls(w=np.zeros(m), psi=np.zeros(m), psi_bar=np.zeros(m))


@dataclass
class NetworkState:
    """Stacked node states; arrays are (..., N, M) with optional replica axis."""

    w: np.ndarray
    psi: np.ndarray
    psi_bar: np.ndarray
    gamma: np.ndarray

    @classmethod
    def zeros(cls, n_nodes: int, m: int, batch=None) -> "NetworkState":
        lead = () if batch is None else (batch,)
        return cls(
            w=np.zeros(lead + (n_nodes, m)),
            psi=np.zeros(lead + (n_nodes, m)),
            psi_bar=np.zeros(lead + (n_nodes, m)),
            gamma=np.zeros(lead + (n_nodes,), dtype=np.uint8),
        )

    @classmethod
    def from_node_states(cls, states) -> "NetworkState":
        return cls(
            w=np.stack([s.w for s in states]),
            psi=np.stack([s.psi for s in states]),
            psi_bar=np.stack([s.psi_bar for s in states]),
            gamma=np.array([s.gamma for s in states], dtype=np.uint8),
        )

    def to_node_states(self) -> list:
        if self.w.ndim != 2:
            raise ValueError("only unbatched states convert to per-node states")
        return [
            NodeState(
                w=self.w[k].copy(),
                psi=self.psi[k].copy(),
                psi_bar=self.psi_bar[k].copy(),
                gamma=int(self.gamma[k]),
            )
            for k in range(self.w.shape[0])
        ]

    @property
    def n_nodes(self) -> int:
        return self.w.shape[-2]


@dataclass
class StepRecord:
    """Trace entry of one instant: flags and gap norms per node."""

    gamma: np.ndarray
    f_prior: np.ndarray
    gap_sq: np.ndarray


@dataclass
class IterationTrace:
    """Per-replica, per-instant, per-node record of one simulation run.

    gamma, f_prior (a priori weighted gap), gap_sq (a posteriori squared
    Euclidean gap) and err_sq (squared distance of w from the truth) are
    (B, horizon, N); the optional estimate and error-sum arrays back the
    bitwise equivalence tests and the mean-error bound comparison.
    """

    algorithm: Algorithm
    replica_ids: np.ndarray
    gamma: np.ndarray
    gap_sq: np.ndarray
    err_sq: np.ndarray
    f_prior: np.ndarray = None
    psi: np.ndarray = None
    w: np.ndarray = None
    err_vec_sum: np.ndarray = None

    @property
    def n_replicas(self) -> int:
        return self.gamma.shape[0]

    @property
    def horizon(self) -> int:
        return self.gamma.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.gamma.shape[2]


# ---------------------------------------------------------------------------
# per-node operations
# ---------------------------------------------------------------------------


def adapt(state: NodeState, sample, mu: float) -> np.ndarray:
    """LMS adaptation: psi = w + mu * u * (d - u . w). Leaves w untouched."""
    if mu <= 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    err = sample.d - sample.u @ state.w
    psi = state.w + mu * err * sample.u
    if not np.all(np.isfinite(psi)):
        raise NonFiniteUpdate(instant=None, nodes=["?"])
    state.psi = psi
    return psi


def evaluate_trigger(state: NodeState, policy: TriggerPolicy, i: int) -> int:
    """Publish psi iff the a priori gap exceeds the threshold; ties keep silent."""
    gap = state.psi - state.psi_bar
    f = float(gap @ policy.weighting @ gap)
    if f > policy.delta(i):
        state.gamma = 1
        state.psi_bar = state.psi.copy()
    else:
        state.gamma = 0
    return state.gamma


def combine(state: NodeState, neighbor_psi_bars, weights_column, node: int) -> np.ndarray:
    """Mix own fresh psi with neighbors' last broadcasts.

    `weights_column` is column `node` of the combination matrix;
    `neighbor_psi_bars` maps 1-based neighbor ids to their psi_bar.
    """
    col = np.asarray(weights_column, dtype=float)
    if np.any(col < 0) or abs(col.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValueError("weights column violates combination invariants")
    w = col[node - 1] * state.psi
    for l, a in enumerate(col, start=1):
        if l == node or a == 0.0:
            continue
        if l not in neighbor_psi_bars:
            raise MissingNeighborState(f"node {node} needs psi_bar of neighbor {l}")
        w = w + a * neighbor_psi_bars[l]
    state.w = w
    return w


# ---------------------------------------------------------------------------
# network stepper
# ---------------------------------------------------------------------------


class _SimPlan:
    """Precomputed arrays shared by every instant of a run."""

    def __init__(self, algorithm, weights, mu, policies, horizon=None):
        algorithm = Algorithm(algorithm)
        w = weights.weights if isinstance(weights, CombinationMatrix) else np.asarray(weights, float)
        n = w.shape[0]
        if np.any(w < 0) or np.abs(w.sum(axis=0) - 1.0).max() > STOCHASTIC_TOL:
            raise ValueError("combination weights violate nonnegativity/column sums")
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).copy()
        if np.any(mu <= 0):
            raise ValueError("all step sizes must be > 0")
        self.algorithm = algorithm
        self.n_nodes = n
        self.mu = mu
        self.a_diag = np.diag(w).copy()
        self.c_t = (w - np.diag(self.a_diag)).T.copy()
        self.policies = policies
        self.y_stack = None
        self._delta_table = None
        if algorithm is Algorithm.EB_ATC:
            if policies is None or len(policies) != n:
                raise ValueError("EB-ATC needs one TriggerPolicy per node")
            m = policies[0].m
            if not all(p.m == m for p in policies):
                raise ValueError("trigger policies disagree on dimension")
            eye = np.eye(m)
            if not all(np.array_equal(p.weighting, eye) for p in policies):
                self.y_stack = np.stack([p.weighting for p in policies])
            if horizon is not None:
                self._delta_table = np.array(
                    [[p.delta(i) for p in policies] for i in range(horizon)]
                )

    def delta_at(self, i: int) -> np.ndarray:
        if self._delta_table is not None:
            return self._delta_table[i]
        return np.array([p.delta(i) for p in self.policies])


def _step(plan: _SimPlan, state: NetworkState, u_i, d_i, i: int, replica_ids=None) -> StepRecord:
    # phase 1: adaptation
    err = d_i - np.einsum("...nm,...nm->...n", u_i, state.w)
    psi = state.w + (plan.mu * err)[..., None] * u_i
    if not np.all(np.isfinite(psi)):
        bad = np.argwhere(~np.isfinite(psi).all(axis=-1))
        nodes = sorted({int(idx[-1]) + 1 for idx in bad})
        replicas = None
        if psi.ndim == 3:
            offsets = sorted({int(idx[0]) for idx in bad})
            replicas = [
                int(replica_ids[o]) if replica_ids is not None else o for o in offsets
            ]
        raise NonFiniteUpdate(instant=i, nodes=nodes, replicas=replicas)
    state.psi = psi

    # phase 2: triggering / broadcasting
    gap_prev = psi - state.psi_bar
    gap_prev_sq = np.einsum("...nm,...nm->...n", gap_prev, gap_prev)
    if plan.y_stack is None:
        f_prior = gap_prev_sq
    else:
        f_prior = np.einsum("...nm,nmj,...nj->...n", gap_prev, plan.y_stack, gap_prev)
    if plan.algorithm is Algorithm.EB_ATC:
        triggered = f_prior > plan.delta_at(i)
        gamma = triggered.astype(np.uint8)
        state.psi_bar = np.where(triggered[..., None], psi, state.psi_bar)
        gap_sq = np.where(triggered, 0.0, gap_prev_sq)
    elif plan.algorithm is Algorithm.ATC:
        gamma = np.ones(psi.shape[:-1], dtype=np.uint8)
        state.psi_bar = psi.copy()
        gap_sq = np.zeros(psi.shape[:-1])
    else:  # NONCOOP: no communication at all
        gamma = np.zeros(psi.shape[:-1], dtype=np.uint8)
        state.psi_bar = psi.copy()
        gap_sq = np.zeros(psi.shape[:-1])
    state.gamma = gamma

    # phase 3: combination
    if plan.algorithm is Algorithm.NONCOOP:
        state.w = psi.copy()
    else:
        state.w = plan.a_diag[:, None] * psi + np.matmul(plan.c_t, state.psi_bar)
    return StepRecord(gamma=gamma, f_prior=f_prior, gap_sq=gap_sq)


def step_network(algorithm, state: NetworkState, u_i, d_i, weights, mu, policies=None, i=0, plan=None) -> StepRecord:
    """Advance every node through one synchronous instant.

    `u_i` is (..., N, M) and `d_i` (..., N) for this instant; `state` is
    updated in place and the per-node trace entry is returned. Passing a
    prebuilt plan skips re-validation inside loops.
    """
    if plan is None:
        plan = _SimPlan(algorithm, weights, mu, policies)
    return _step(plan, state, np.asarray(u_i, float), np.asarray(d_i, float), i)


def simulate(
    algorithm,
    weights,
    mu,
    policies,
    ground_truth,
    u,
    d,
    replica_ids=None,
    store_f_prior=True,
    store_estimates=False,
    store_error_sum=False,
) -> IterationTrace:
    """Run one batch of replicas from zero initial conditions.

    `u` is (B, horizon, N, M) or (horizon, N, M); `d` matches with the
    trailing M axis dropped. All replicas in the batch advance through
    identical vectorized arithmetic, so results do not depend on how a
    replica population is partitioned into batches.
    """
    algorithm = Algorithm(algorithm)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if u.ndim == 3:
        u = u[None]
        d = d[None]
    if u.ndim != 4 or d.shape != u.shape[:3]:
        raise ValueError(f"incompatible data shapes u{u.shape}, d{d.shape}")
    b, horizon, n, m = u.shape
    if ground_truth.m != m:
        raise ValueError("ground truth dimension does not match data")
    if replica_ids is None:
        replica_ids = np.arange(b)
    replica_ids = np.asarray(replica_ids)

    plan = _SimPlan(algorithm, weights, mu, policies, horizon=horizon)
    if plan.n_nodes != n:
        raise ValueError("combination matrix size does not match data")
    state = NetworkState.zeros(n, m, batch=b)

    trace = IterationTrace(
        algorithm=algorithm,
        replica_ids=replica_ids,
        gamma=np.empty((b, horizon, n), dtype=np.uint8),
        gap_sq=np.empty((b, horizon, n)),
        err_sq=np.empty((b, horizon, n)),
        f_prior=np.empty((b, horizon, n)) if store_f_prior else None,
        psi=np.empty((b, horizon, n, m)) if store_estimates else None,
        w=np.empty((b, horizon, n, m)) if store_estimates else None,
        err_vec_sum=np.zeros((horizon, n, m)) if store_error_sum else None,
    )
    w_star = ground_truth.w_star
    for i in range(horizon):
        rec = _step(plan, state, u[:, i], d[:, i], i, replica_ids=replica_ids)
        trace.gamma[:, i] = rec.gamma
        trace.gap_sq[:, i] = rec.gap_sq
        err_vec = w_star - state.w
        trace.err_sq[:, i] = np.einsum("bnm,bnm->bn", err_vec, err_vec)
        if store_f_prior:
            trace.f_prior[:, i] = rec.f_prior
        if store_estimates:
            trace.psi[:, i] = state.psi
            trace.w[:, i] = state.w
        if store_error_sum:
            trace.err_vec_sum[i] += err_vec.sum(axis=0)
    return trace


def always_trigger_policies(n_nodes: int, m: int) -> list:
    """Zero-threshold policies; any nonzero drift broadcasts, reproducing ATC."""
    return [TriggerPolicy.identity(m, 0.0) for _ in range(n_nodes)]


def gap_bound_violations(trace: IterationTrace, policies, slack: float = 0.0) -> int:
    """Count recorded a posteriori gaps exceeding the per-node norm bound
    delta_sup / lambda_min(Y) in squared Euclidean norm."""
    bounds = np.array([p.gap_norm_bound() ** 2 for p in policies])
    return int((trace.gap_sq > bounds[None, None, :] + slack).sum())


def trace_to_csv(trace: IterationTrace, file) -> None:
    """Rows (replica, instant, node, gamma, gap_norm_sq, msd_contribution)."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", encoding="utf-8", newline="") if own else file
    try:
        fh.write("replica,instant,node,gamma,gap_norm_sq,msd_contribution\n")
        for bi, replica in enumerate(trace.replica_ids):
            for i in range(trace.horizon):
                for k in range(trace.n_nodes):
                    fh.write(
                        f"{int(replica)},{i},{k + 1},{int(trace.gamma[bi, i, k])},"
                        f"{float(trace.gap_sq[bi, i, k])!r},{float(trace.err_sq[bi, i, k])!r}\n"
                    )
    finally:
        if own:
            fh.close()
