"""Extended network matrices and closed-form stability conditions.

Builds the Kronecker-extended matrices of the network error recursion
and evaluates the mean-error stability condition, the steady-state
mean-error bound, and the steady-state MSD upper bound on desk-scale
networks. The MSD machinery materializes a matrix with (M*N)^4 entries
and is therefore capped by dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)
#: lower and upper step-size coefficients of the MSD convergence interval
MSD_LO_COEF = 1.0 - SQRT2 / 2.0
MSD_HI_COEF = 1.0 + SQRT2 / 2.0
#: admissible eigenvalue spread of a regressor covariance
EIGEN_SPREAD_LIMIT = (2.0 + SQRT2) / (2.0 - SQRT2)

DEFAULT_F_CAP = 64
DENSE_EIG_LIMIT = 1500


class DimensionCapExceeded(ValueError):
    """The requested matrices would exceed the configured dimension cap."""


class UnsupportedStructure(ValueError):
    """block_max_norm only handles block-diagonal matrices with symmetric blocks."""


class UnstableConfiguration(ArithmeticError):
    """The mean-error recursion is not contractive (beta >= 1)."""


class SingularWeighting(ArithmeticError):
    """A trigger weighting matrix is singular, so the gap bound is infinite."""


class UnstableF(ArithmeticError):
    """The MSD recursion matrix has spectral radius >= 1; the bound diverges."""


def vec(mat) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(mat).reshape(-1, order="F")


def block_diag(blocks) -> np.ndarray:
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r : r + b.shape[0], c : c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def spectral_radius(mat, dense_limit: int = DENSE_EIG_LIMIT, tol: float = 1e-10, max_iter: int = 10**4) -> float:
    """Spectral radius via dense eigenvalues, falling back to power iteration
    beyond `dense_limit`."""
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    if n <= dense_limit:
        return float(np.abs(np.linalg.eigvals(mat)).max()) if n else 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= tol * max(norm, 1e-300):
            return float(norm)
        estimate = norm
    raise RuntimeError(f"power iteration did not converge within {max_iter} iterations")


@dataclass
class AnalysisWorkspace:
    """Extended matrices of the network error recursion.

    a_ext, c_ext, m_ext, r_ext, b_mean, s_ext are (M*N, M*N); f_big is
    the (M*N)^2-square MSD recursion matrix, or None when it was not
    materialized because of the dimension cap.
    """

    n_nodes: int
    m: int
    weights: np.ndarray
    a_ext: np.ndarray
    c_ext: np.ndarray
    m_ext: np.ndarray
    r_ext: np.ndarray
    b_mean: np.ndarray
    s_ext: np.ndarray
    f_big: np.ndarray = None
    f_cap: int = DEFAULT_F_CAP

    @property
    def dim(self) -> int:
        return self.n_nodes * self.m


def build_workspace(weights, profiles, f_cap: int = DEFAULT_F_CAP, materialize_f=None) -> AnalysisWorkspace:
    """Assemble the extended matrices from combination weights and profiles.

    With materialize_f=None the MSD recursion matrix is built only when
    M*N <= f_cap; forcing materialize_f=True beyond the cap raises
    DimensionCapExceeded. Everything else is built regardless.
    """
    a = weights.weights if hasattr(weights, "weights") else np.asarray(weights, float)
    n = a.shape[0]
    if len(profiles) != n:
        raise ValueError(f"{len(profiles)} profiles for an {n}-node matrix")
    m = profiles[0].m
    if not all(p.m == m for p in profiles):
        raise ValueError("profiles disagree on dimension")
    dim = n * m
    eye_m = np.eye(m)
    a_ext = np.kron(a, eye_m)
    c_ext = np.kron(a - np.diag(np.diag(a)), eye_m)
    m_ext = np.kron(np.diag([p.mu for p in profiles]), eye_m)
    r_ext = block_diag([p.R_u for p in profiles])
    b_mean = a_ext.T @ (np.eye(dim) - m_ext @ r_ext)
    s_ext = block_diag([p.sigma2_v * p.R_u for p in profiles])

    if materialize_f is None:
        materialize_f = dim <= f_cap
    f_big = None
    if materialize_f:
        if dim > f_cap:
            raise DimensionCapExceeded(
                f"M*N = {dim} exceeds the cap {f_cap} for materializing the MSD recursion matrix"
            )
        f_big = 2.0 * np.kron(b_mean.T, b_mean.T)
    return AnalysisWorkspace(
        n_nodes=n, m=m, weights=a, a_ext=a_ext, c_ext=c_ext, m_ext=m_ext,
        r_ext=r_ext, b_mean=b_mean, s_ext=s_ext, f_big=f_big, f_cap=f_cap,
    )


def block_max_norm(mat, block_size: int, tol: float = 1e-12) -> float:
    """Block maximum norm of a block-diagonal matrix with symmetric blocks.

    For this matrix class the induced norm is the largest block spectral
    radius. Anything that is not block-diagonal with symmetric blocks
    raises UnsupportedStructure.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    if mat.ndim != 2 or mat.shape[1] != n or n % block_size:
        raise ValueError(f"matrix shape {mat.shape} incompatible with block size {block_size}")
    count = n // block_size
    scale = max(1.0, float(np.abs(mat).max(initial=0.0)))
    radius = 0.0
    for b in range(count):
        sl = slice(b * block_size, (b + 1) * block_size)
        block = mat[sl, sl]
        if np.abs(block - block.T).max(initial=0.0) > tol * scale:
            raise UnsupportedStructure(f"diagonal block {b} is not symmetric")
        radius = max(radius, float(np.abs(np.linalg.eigvalsh(block)).max()))
    off = mat.copy()
    for b in range(count):
        sl = slice(b * block_size, (b + 1) * block_size)
        off[sl, sl] = 0.0
    if np.abs(off).max(initial=0.0) > tol * scale:
        raise UnsupportedStructure("matrix has nonzero entries outside the diagonal blocks")
    return radius


def mean_stability_condition(profile):
    """Step-size bound 2 / lambda_max(R_u) and whether mu satisfies it."""
    lam_max = float(np.linalg.eigvalsh(profile.R_u).max())
    bound = 2.0 / lam_max
    return bound, profile.mu < bound


def contraction_factor(profiles) -> float:
    """Largest per-node spectral radius of I - mu * R_u.

    Equals the block maximum norm of the block-diagonal matrix stacking
    those (symmetric) blocks.
    """
    radius = 0.0
    for p in profiles:
        eigs = np.linalg.eigvalsh(p.R_u)
        radius = max(radius, float(np.abs(1.0 - p.mu * eigs).max()))
    return radius


def mean_error_bound(weights, profiles, policies) -> float:
    """Steady-state bound on the block-max norm of the network mean error:
    alpha / (1 - beta) * max_k sqrt(delta_k / lambda_min(Y_k))."""
    a = weights.weights if hasattr(weights, "weights") else np.asarray(weights, float)
    beta = contraction_factor(profiles)
    if beta >= 1.0:
        raise UnstableConfiguration(f"contraction factor beta = {beta} >= 1")
    if any(not p.is_strictly_pd for p in policies):
        raise SingularWeighting("all trigger weightings must be strictly positive definite")
    alpha = float((1.0 - np.diag(a)).max())
    worst_gap = max(p.gap_norm_bound() for p in policies)
    return alpha / (1.0 - beta) * worst_gap


def msd_step_size_interval(profile):
    """Step-size interval of the MSD bound recursion and the eigenvalue
    spread check that makes it non-empty.

    Returns (lo, hi, spread_ok); an empty interval is reported, never
    raised.
    """
    eigs = np.linalg.eigvalsh(profile.R_u)
    lam_min, lam_max = float(eigs.min()), float(eigs.max())
    lo = MSD_LO_COEF / lam_min
    hi = MSD_HI_COEF / lam_max
    return lo, hi, lam_max < EIGEN_SPREAD_LIMIT * lam_min


def delta_total(policies) -> float:
    """Sum over nodes of sqrt(delta_sup / lambda_min(Y))."""
    if any(not p.is_strictly_pd for p in policies):
        raise SingularWeighting("all trigger weightings must be strictly positive definite")
    return float(sum(p.gap_norm_bound() for p in policies))


def msd_bound_vectors(ws: AnalysisWorkspace, delta_sum: float):
    """The two constant forcing vectors of the MSD bound recursion:
    f1 = vec(A^T M S M A) for gradient noise, f2 = 2*Delta*vec(C^T C)
    for the triggering gaps."""
    if ws.f_big is None:
        raise DimensionCapExceeded(
            f"workspace was built without the MSD recursion matrix (cap {ws.f_cap})"
        )
    core = ws.a_ext.T @ ws.m_ext @ ws.s_ext @ ws.m_ext @ ws.a_ext
    f1 = vec(core)
    f2 = 2.0 * delta_sum * vec(ws.c_ext.T @ ws.c_ext)
    return f1, f2


def empirical_trigger_matrix(rates, m: int) -> np.ndarray:
    """diag(rate_k * I_M) - I from steady-state per-node trigger rates."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0) or np.any(rates > 1):
        raise ValueError("trigger rates must lie in [0, 1]")
    return np.kron(np.diag(rates), np.eye(m)) - np.eye(rates.size * m)


def msd_upper_bound(ws: AnalysisWorkspace, f1, f2, g_ss) -> float:
    """Steady-state network MSD upper bound
    (1/N) * (f1 + f2 + f3_ss)^T (I - F)^(-1) vec(I).

    The trigger-dependent term assumes the empirical trigger matrix is
    stationary, which collapses its limit series into the same resolvent;
    the second-order step-size remainder of the underlying recursion is
    dropped.
    """
    if ws.f_big is None:
        raise DimensionCapExceeded(
            f"workspace was built without the MSD recursion matrix (cap {ws.f_cap})"
        )
    rho_f = spectral_radius(ws.f_big)
    if rho_f >= 1.0:
        raise UnstableF(f"spectral radius of the MSD recursion matrix is {rho_f} >= 1")
    f3 = 2.0 * vec(ws.c_ext.T @ g_ss @ ws.m_ext @ ws.s_ext @ ws.m_ext @ ws.a_ext)
    dim = ws.dim
    resolvent_rhs = np.linalg.solve(np.eye(dim * dim) - ws.f_big, vec(np.eye(dim)))
    return float((f1 + f2 + f3) @ resolvent_rhs) / ws.n_nodes


def vec_trace_identity_check(dim: int, seed, tol: float = 1e-10) -> bool:
    """Self-test of trace(A @ B) == vec(A.T) . vec(B) on one random pair."""
    if dim > 32:
        raise ValueError("identity check is limited to dim <= 32")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    b = rng.standard_normal((dim, dim))
    return abs(np.trace(a @ b) - vec(a.T) @ vec(b)) <= tol


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class NodeStability:
    node: int
    mu: float
    mean_bound: float
    mean_ok: bool
    msd_lo: float
    msd_hi: float
    spread_ok: bool


@dataclass
class StabilityReport:
    """Per-node step-size margins plus the network-level spectral numbers."""

    nodes: list
    alpha: float
    beta: float
    rho_b: float
    rho_f: float
    rho_f_from_identity: bool

    def to_text(self) -> str:
        lines = [
            f"alpha = {self.alpha!r}",
            f"beta = {self.beta!r}",
            f"rho_b = {self.rho_b!r}",
            f"rho_f = {self.rho_f!r}",
            f"rho_f_from_identity = {self.rho_f_from_identity}",
        ]
        for ns in self.nodes:
            lines.append(
                f"node {ns.node}: mu = {ns.mu!r}, mean_bound = {ns.mean_bound!r}, "
                f"mean_ok = {ns.mean_ok}, msd_interval = ({ns.msd_lo!r}, {ns.msd_hi!r}), "
                f"spread_ok = {ns.spread_ok}"
            )
        return "\n".join(lines) + "\n"

    def to_csv_rows(self) -> list:
        rows = ["node,mu,mean_bound,mean_ok,msd_lo,msd_hi,spread_ok"]
        for ns in self.nodes:
            rows.append(
                f"{ns.node},{ns.mu!r},{ns.mean_bound!r},{int(ns.mean_ok)},"
                f"{ns.msd_lo!r},{ns.msd_hi!r},{int(ns.spread_ok)}"
            )
        return rows


@dataclass
class BoundReport:
    """Closed-form bounds; unavailable entries carry a reason instead of a number."""

    lemma_gap_bounds: tuple
    delta_sum: float
    mean_error_bound: float = None
    mean_error_note: str = ""
    msd_upper_bound: float = None
    msd_note: str = ""
    notes: tuple = ()

    def to_text(self) -> str:
        lines = [f"delta_sum = {self.delta_sum!r}"]
        if self.mean_error_bound is None:
            lines.append(f"mean_error_bound = unavailable ({self.mean_error_note})")
        else:
            lines.append(f"mean_error_bound = {self.mean_error_bound!r}")
        if self.msd_upper_bound is None:
            lines.append(f"msd_upper_bound = unavailable ({self.msd_note})")
        else:
            lines.append(f"msd_upper_bound = {self.msd_upper_bound!r}")
        for k, v in enumerate(self.lemma_gap_bounds, start=1):
            lines.append(f"gap_bound.{k} = {v!r}")
        for note in self.notes:
            lines.append(f"note = {note}")
        return "\n".join(lines) + "\n"


def stability_report(weights, profiles, f_cap: int = DEFAULT_F_CAP) -> StabilityReport:
    """Evaluate every closed-form stability condition for a configuration."""
    ws = build_workspace(weights, profiles, f_cap=f_cap)
    nodes = []
    for k, p in enumerate(profiles, start=1):
        bound, ok = mean_stability_condition(p)
        lo, hi, spread_ok = msd_step_size_interval(p)
        nodes.append(
            NodeStability(
                node=k, mu=p.mu, mean_bound=bound, mean_ok=ok,
                msd_lo=lo, msd_hi=hi, spread_ok=spread_ok,
            )
        )
    rho_b = spectral_radius(ws.b_mean)
    if ws.f_big is not None and ws.f_big.shape[0] <= DENSE_EIG_LIMIT:
        rho_f = spectral_radius(ws.f_big)
        from_identity = False
    else:
        rho_f = 2.0 * rho_b**2
        from_identity = True
    return StabilityReport(
        nodes=nodes,
        alpha=float((1.0 - np.diag(ws.weights)).max()),
        beta=contraction_factor(profiles),
        rho_b=rho_b,
        rho_f=rho_f,
        rho_f_from_identity=from_identity,
    )


def bound_report(weights, profiles, policies, g_ss=None, f_cap: int = DEFAULT_F_CAP) -> BoundReport:
    """Evaluate Lemma/Theorem bounds, downgrading unavailable ones to notes.

    With g_ss=None the trigger matrix of an always-broadcasting network
    (all rates one, hence zero matrix) is assumed and noted.
    """
    gap_bounds = tuple(p.gap_norm_bound() for p in policies)
    notes = ["second-order step-size remainder dropped from the MSD bound"]
    try:
        d_sum = delta_total(policies)
    except SingularWeighting:
        d_sum = float("inf")
        notes.append("singular trigger weighting: gap bounds are infinite")
    mean_bound = None
    mean_note = ""
    try:
        mean_bound = mean_error_bound(weights, profiles, policies)
    except (UnstableConfiguration, SingularWeighting) as exc:
        mean_note = str(exc)
    msd_bound = None
    msd_note = ""
    if not np.isfinite(d_sum):
        msd_note = "gap bounds are infinite (singular trigger weighting)"
    else:
        try:
            ws = build_workspace(weights, profiles, f_cap=f_cap, materialize_f=True)
            f1, f2 = msd_bound_vectors(ws, d_sum)
            if g_ss is None:
                g_ss = np.zeros((ws.dim, ws.dim))
                notes.append("trigger matrix assumed always-trigger (no simulation data)")
            msd_bound = msd_upper_bound(ws, f1, f2, g_ss)
        except (DimensionCapExceeded, UnstableF) as exc:
            msd_note = str(exc)
    return BoundReport(
        lemma_gap_bounds=gap_bounds,
        delta_sum=d_sum,
        mean_error_bound=mean_bound,
        mean_error_note=mean_note,
        msd_upper_bound=msd_bound,
        msd_note=msd_note,
        notes=tuple(notes),
    )
