"""Learning curves and communication statistics across Monte Carlo replicas.

MSD(i) is the network-average squared deviation (1/N) sum_k E|w_star -
w_k(i)|^2 estimated by replica averaging; the network triggering rate
ENTR(i) is the replica-average fraction of nodes broadcasting at instant
i. Accumulation is an associative reduction over replica traces, so
batches folded in a fixed order give byte-stable results regardless of
how the work was parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: dB value standing in for an exactly zero MSD, keeping CSV output finite
DB_FLOOR = -300.0
_LINEAR_FLOOR = 10.0 ** (DB_FLOOR / 10.0)


class ShapeMismatch(ValueError):
    """Replica traces disagree on horizon or network size."""


class HorizonTooShort(ValueError):
    """The trailing window would be empty at this horizon."""


def linear_to_db(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > _LINEAR_FLOOR, 10.0 * np.log10(np.maximum(x, _LINEAR_FLOOR)), DB_FLOOR)


def db_to_linear(db) -> np.ndarray:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass
class LearningCurves:
    """Replica-averaged MSD and triggering statistics per instant."""

    algorithm: str
    n_replicas: int
    msd_linear: np.ndarray
    msd_db: np.ndarray
    entr: np.ndarray
    node_gamma_mean: np.ndarray
    per_node_trigger_rate: np.ndarray
    rate_window: tuple

    @property
    def horizon(self) -> int:
        return self.msd_linear.size

    @property
    def n_nodes(self) -> int:
        return self.node_gamma_mean.shape[1]


@dataclass
class SteadyStateSummary:
    """Trailing-window summary of a learning curve."""

    window: tuple
    msd_ss_db: float
    msd_ss_linear: float
    entr_ss: float
    settle_instant: int


class CurveAccumulator:
    """Streaming reduction of traces into replica sums."""

    def __init__(self, algorithm=""):
        self.algorithm = algorithm
        self.n_replicas = 0
        self._err_sum = None
        self._gamma_sum = None

    def add(self, trace) -> None:
        err = trace.err_sq
        gamma = trace.gamma
        if self._err_sum is None:
            self._err_sum = np.zeros(err.shape[1:])
            self._gamma_sum = np.zeros(gamma.shape[1:])
            if not self.algorithm:
                self.algorithm = trace.algorithm.value
        if err.shape[1:] != self._err_sum.shape:
            raise ShapeMismatch(
                f"trace shape {err.shape[1:]} does not match accumulated {self._err_sum.shape}"
            )
        self._err_sum += err.sum(axis=0)
        self._gamma_sum += gamma.sum(axis=0, dtype=np.int64)
        self.n_replicas += trace.n_replicas

    def finalize(self, window_fraction: float = 0.1) -> LearningCurves:
        if self.n_replicas == 0:
            raise ValueError("no traces accumulated")
        n = self._err_sum.shape[1]
        msd_linear = self._err_sum.sum(axis=1) / (self.n_replicas * n)
        node_gamma_mean = self._gamma_sum / self.n_replicas
        entr = node_gamma_mean.sum(axis=1) / n
        start, end = trailing_window(msd_linear.size, window_fraction)
        return LearningCurves(
            algorithm=self.algorithm,
            n_replicas=self.n_replicas,
            msd_linear=msd_linear,
            msd_db=linear_to_db(msd_linear),
            entr=entr,
            node_gamma_mean=node_gamma_mean,
            per_node_trigger_rate=node_gamma_mean[start : end + 1].mean(axis=0),
            rate_window=(start, end),
        )


def accumulate(traces, window_fraction: float = 0.1) -> LearningCurves:
    """Reduce replica traces (any iterable) into learning curves."""
    acc = CurveAccumulator()
    for trace in traces:
        acc.add(trace)
    return acc.finalize(window_fraction=window_fraction)


def trailing_window(horizon: int, window_fraction: float) -> tuple:
    """Inclusive [start, end] indices of the trailing window."""
    if not 0 < window_fraction <= 1:
        raise ValueError(f"window_fraction must be in (0, 1], got {window_fraction}")
    width = int(horizon * window_fraction)
    if width < 1:
        raise HorizonTooShort(
            f"horizon {horizon} leaves an empty trailing window at fraction {window_fraction}"
        )
    return horizon - width, horizon - 1


def steady_state(curves: LearningCurves, window_fraction: float = 0.1, settle_fraction: float = 0.9) -> SteadyStateSummary:
    """Trailing-window steady-state stats and the settle instant.

    The settle instant is the first instant whose dB distance to the
    steady-state level has shrunk to (1 - settle_fraction) of the initial
    distance, i.e. the curve has covered settle_fraction of its total dB
    descent. Falls back to the window end if the band is never entered.
    """
    start, end = trailing_window(curves.horizon, window_fraction)
    msd_ss_db = float(curves.msd_db[start : end + 1].mean())
    msd_ss_linear = float(curves.msd_linear[start : end + 1].mean())
    entr_ss = float(curves.entr[start : end + 1].mean())
    band = (1.0 - settle_fraction) * abs(float(curves.msd_db[0]) - msd_ss_db)
    inside = np.flatnonzero(np.abs(curves.msd_db - msd_ss_db) <= band)
    settle = int(inside[0]) if inside.size else end
    return SteadyStateSummary(
        window=(start, end),
        msd_ss_db=msd_ss_db,
        msd_ss_linear=msd_ss_linear,
        entr_ss=entr_ss,
        settle_instant=settle,
    )


def curves_to_csv(curves: LearningCurves, file) -> None:
    """Rows (instant, msd_linear, msd_db, entr)."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", encoding="utf-8", newline="") if own else file
    try:
        fh.write("instant,msd_linear,msd_db,entr\n")
        for i in range(curves.horizon):
            fh.write(
                f"{i},{float(curves.msd_linear[i])!r},"
                f"{float(curves.msd_db[i])!r},{float(curves.entr[i])!r}\n"
            )
    finally:
        if own:
            fh.close()


def rates_to_csv(curves: LearningCurves, file) -> None:
    """Rows (node, trigger_rate) over the trailing rate window."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", encoding="utf-8", newline="") if own else file
    try:
        fh.write("node,trigger_rate\n")
        for k in range(curves.per_node_trigger_rate.size):
            fh.write(f"{k + 1},{float(curves.per_node_trigger_rate[k])!r}\n")
    finally:
        if own:
            fh.close()
