"""Distances between empirical laws, moment estimators and convergence reports."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import EmptySample, InsufficientReplications
from .fpt_reset import MarkedTrain, run_ou_with_reset, run_stein_with_reset
from .model import NetworkSpec, Scheme, SteinParams, characteristic_exponent, gaussian_exponent
from .model import limit_params, scale_params

__all__ = [
    "Sample",
    "ks_distance",
    "wasserstein1",
    "mark_frequencies",
    "total_variation_marks",
    "MarkComparison",
    "mark_law_comparison",
    "CovarianceRate",
    "covariance_rate",
    "EcfResult",
    "ecf_check",
    "TrainBatch",
    "ConvergenceReport",
    "fpt_convergence_report",
    "COLLAPSE_THRESHOLD",
]

COLLAPSE_THRESHOLD = 1e-3
MIN_REPORT_REPS = 1000


@dataclass(frozen=True, eq=False)
class Sample:
    """Equally weighted sample of reals or k-vectors with source metadata."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            raise EmptySample("sample is empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def _reals(x, what: str) -> np.ndarray:
    arr = np.asarray(x.values if isinstance(x, Sample) else x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise EmptySample(f"{what} is empty")
    return arr


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.

    Both ECDFs are evaluated right-continuously at every pooled value, so
    ties are counted only after all equal values are absorbed.
    """
    a = np.sort(_reals(a, "first sample"))
    b = np.sort(_reals(b, "second sample"))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def wasserstein1(a, b) -> float:
    return float(sps.wasserstein_distance(_reals(a, "first sample"), _reals(b, "second sample")))


def _as_mark(key) -> frozenset[int]:
    if isinstance(key, (int, np.integer)):
        return frozenset({int(key)})
    return frozenset(int(j) for j in key)


def mark_frequencies(marks: Iterable) -> dict[frozenset[int], float]:
    counts = Counter(_as_mark(m) for m in marks)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {m: c / total for m, c in counts.items()}


def _normalize(table: Mapping) -> dict[frozenset[int], float]:
    out: dict[frozenset[int], float] = {}
    for key, p in table.items():
        mark = _as_mark(key)
        out[mark] = out.get(mark, 0.0) + float(p)
    return out


def total_variation_marks(a: Mapping, b: Mapping) -> float:
    """Half the L1 distance between two mark-frequency tables.

    Keys may be 1-based component labels or sets of them.
    """
    pa, pb = _normalize(a), _normalize(b)
    return 0.5 * sum(abs(pa.get(s, 0.0) - pb.get(s, 0.0)) for s in set(pa) | set(pb))


@dataclass(frozen=True)
class MarkComparison:
    tv: float
    non_singleton: float
    collapsed: bool

    @property
    def residual_simultaneity(self) -> bool:
        return not self.collapsed


def mark_law_comparison(set_marks: Mapping, singleton_marks: Mapping,
                        threshold: float = COLLAPSE_THRESHOLD) -> MarkComparison:
    """Compare set-valued marks against singleton marks.

    When the non-singleton mass is below ``threshold`` it is dropped and the
    singleton part renormalized; otherwise the full set support is used.
    """
    pa = _normalize(set_marks)
    multi = sum(p for s, p in pa.items() if len(s) > 1)
    if multi < threshold:
        single = {s: p for s, p in pa.items() if len(s) == 1}
        mass = sum(single.values())
        if mass > 0:
            single = {s: p / mass for s, p in single.items()}
        return MarkComparison(total_variation_marks(single, singleton_marks), multi, True)
    return MarkComparison(total_variation_marks(pa, singleton_marks), multi, False)


@dataclass(frozen=True, eq=False)
class CovarianceRate:
    """Cov[Z(t)] / t with leave-one-out jackknife standard errors."""

    matrix: np.ndarray
    se: np.ndarray
    reps: int
    t: float

    def within(self, target, n_se: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.matrix - np.asarray(target)) <= n_se * self.se))


def covariance_rate(values, t: float = 1.0) -> CovarianceRate:
    """Empirical covariance rate of replicated k-vectors, shape (reps, k).

    The jackknife uses the closed form of the leave-one-out sample
    covariance, S_(i) = (C - m/(m-1) d_i) / (m-2), where C is the full
    scatter matrix and d_i the outer product of the i-th deviation.
    """
    z = np.asarray(values.values if isinstance(values, Sample) else values, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    m = z.shape[0]
    if m < 2:
        raise InsufficientReplications(f"need at least 2 replications, got {m}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    dev = z - z.mean(axis=0)
    scatter = dev.T @ dev
    cov = scatter / (m - 1)
    if m == 2:
        se = np.full_like(cov, np.nan)
    else:
        outer = np.einsum("mi,mj->mij", dev, dev)
        loo = (scatter[None] - m / (m - 1) * outer) / (m - 2)
        se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return CovarianceRate(matrix=cov / t, se=se / t, reps=m, t=float(t))


@dataclass(frozen=True, eq=False)
class EcfResult:
    u: np.ndarray
    empirical: np.ndarray
    exact: np.ndarray
    deviation: float
    gaussian_deviation: float | None


def ecf_check(values, p: SteinParams, t: float, u_grid, psi=None) -> EcfResult:
    """Max |ECF(u) - exp(t rho_n(u))| over a grid of u.

    With ``psi`` also reports the max deviation from exp(-t u.Psi.u / 2).
    """
    z = np.asarray(values.values if isinstance(values, Sample) else values, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    u = np.asarray(u_grid, dtype=float)
    if u.ndim == 1:
        u = u[:, None] if p.k == 1 else u[None, :]
    if not np.all(np.isfinite(u)):
        raise ValueError("u grid must be finite")
    empirical = np.empty(u.shape[0], dtype=complex)
    for i, ui in enumerate(u):
        empirical[i] = np.mean(np.exp(1j * (z @ ui)))
    # at u = 0 both sides are exactly 1
    zero = ~np.any(u != 0, axis=1)
    empirical[zero] = 1.0
    exact = np.exp(t * np.asarray(characteristic_exponent(p, u)))
    exact[zero] = 1.0
    deviation = float(np.max(np.abs(empirical - exact)))
    gdev = None
    if psi is not None:
        gauss = np.exp(t * np.asarray(gaussian_exponent(np.asarray(psi, dtype=float), u)))
        gdev = float(np.max(np.abs(empirical - gauss)))
    return EcfResult(u=u, empirical=empirical, exact=exact, deviation=deviation,
                     gaussian_deviation=gdev)


@dataclass(frozen=True, eq=False)
class TrainBatch:
    """Per-window summaries of a batch of marked trains truncated at ``depth``."""

    taus: np.ndarray        # (reps, depth), NaN where the window never ended
    cumulative: np.ndarray  # (reps, depth)
    pre: np.ndarray         # (reps, depth, k)
    marks: list[list[frozenset[int]]]  # marks[i] = marks of window i over trains reaching it
    ties: int

    @classmethod
    def from_trains(cls, trains: Sequence[MarkedTrain], depth: int, k: int) -> "TrainBatch":
        reps = len(trains)
        taus = np.full((reps, depth), np.nan)
        cum = np.full((reps, depth), np.nan)
        pre = np.full((reps, depth, k), np.nan)
        marks: list[list[frozenset[int]]] = [[] for _ in range(depth)]
        ties = 0
        for r, train in enumerate(trains):
            ties += train.ties
            for i, rec in enumerate(train.records[:depth]):
                taus[r, i] = rec.tau
                cum[r, i] = rec.cumulative_time
                pre[r, i] = rec.pre_state
                marks[i].append(rec.marks)
        return cls(taus=taus, cumulative=cum, pre=pre, marks=marks, ties=ties)

    def window(self, arr: np.ndarray, i: int) -> np.ndarray:
        col = arr[:, i]
        return col[~np.isnan(col)] if col.ndim == 1 else col[~np.isnan(col).any(axis=1)]


def _metric_names(depth: int, k: int) -> list[str]:
    names = []
    for i in range(1, depth + 1):
        names += [f"ks_tau_{i}", f"ks_cum_{i}", f"tv_marks_{i}", f"w1_tau_{i}"]
        names += [f"ks_pre_{i}_{j}" for j in range(1, k + 1)]
    return names


def _compare(a: TrainBatch, b: TrainBatch, depth: int, k: int) -> tuple[dict[str, float], list[float], bool]:
    """Distances of batch ``a`` from batch ``b``; also a's non-singleton mass per window."""
    out: dict[str, float] = {}
    multi: list[float] = []
    residual = False

    def safe(fn, x, y):
        return fn(x, y) if x.size and y.size else math.nan

    for i in range(depth):
        ta, tb = a.window(a.taus, i), b.window(b.taus, i)
        out[f"ks_tau_{i + 1}"] = safe(ks_distance, ta, tb)
        out[f"w1_tau_{i + 1}"] = safe(wasserstein1, ta, tb)
        out[f"ks_cum_{i + 1}"] = safe(ks_distance, a.window(a.cumulative, i), b.window(b.cumulative, i))
        pa, pb = a.window(a.pre, i), b.window(b.pre, i)
        for j in range(k):
            out[f"ks_pre_{i + 1}_{j + 1}"] = safe(ks_distance, pa[:, j] if pa.size else pa,
                                                 pb[:, j] if pb.size else pb)
        if a.marks[i] and b.marks[i]:
            cmp = mark_law_comparison(mark_frequencies(a.marks[i]), mark_frequencies(b.marks[i]))
            out[f"tv_marks_{i + 1}"] = cmp.tv
            multi.append(cmp.non_singleton)
            residual |= cmp.residual_simultaneity
        else:
            out[f"tv_marks_{i + 1}"] = math.nan
            multi.append(math.nan)
    return out, multi, residual


@dataclass
class ConvergenceReport:
    """Distances of finite-n marked trains from a small-step OU reference.

    ``floor[name]`` is the median self-distance between independent pairs of
    OU batches of the same size, the noise level a converged row sits at.
    """

    axis: list[int]
    metrics: dict[str, list[float]]
    floor: dict[str, float]
    floor_samples: dict[str, list[float]]
    non_singleton: list[list[float]]
    reference: str
    reps: int
    depth: int
    seed: int
    axis_name: str = "n"
    flags: list[str] = field(default_factory=list)
    reference_ties: int = 0
    empty_trains: list[int] = field(default_factory=list)

    def row(self, i: int) -> dict[str, float]:
        return {name: values[i] for name, values in self.metrics.items()}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, list):
                return [clean(v) for v in x]
            return x
        return json.dumps(clean(self.to_dict()), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        d = json.loads(text)

        def unclean(x):
            if x is None:
                return math.nan
            if isinstance(x, dict):
                return {k: unclean(v) for k, v in x.items()}
            if isinstance(x, list):
                return [unclean(v) for v in x]
            return x
        for key in ("metrics", "floor", "floor_samples", "non_singleton"):
            d[key] = unclean(d[key])
        return cls(**d)

    def to_table(self, names: Sequence[str] | None = None) -> str:
        names = list(names) if names is not None else [
            name for name in self.metrics if not name.startswith(("w1_", "ks_pre_"))]
        width = max(10, *(len(nm) for nm in names))
        lines = [f"reference: {self.reference}; reps={self.reps} depth={self.depth} seed={self.seed}"]
        lines.append(f"{self.axis_name:>8}  " + "  ".join(f"{nm:>{width}}" for nm in names))
        for i, value in enumerate(self.axis):
            lines.append(f"{value:>8}  " + "  ".join(
                f"{self.metrics[nm][i]:>{width}.4f}" for nm in names))
        lines.append(f"{'floor':>8}  " + "  ".join(f"{self.floor.get(nm, math.nan):>{width}.4f}"
                                                   for nm in names))
        if self.flags:
            lines.append("flags: " + ", ".join(self.flags))
        return "\n".join(lines) + "\n"


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fpt_convergence_report(spec: NetworkSpec, n_list: Sequence[int], *, ref_h: float = 1e-3,
                           bridge: bool = True, reps: int = 2000, depth: int = 3, seed: int = 0,
                           horizon: float | None = None, scheme: Scheme = scale_params,
                           floor_pairs: int = 1, threads: int = 1) -> ConvergenceReport:
    """Compare Stein marked trains at each n against an OU reference run.

    Row r uses Stein streams keyed (r, replication); OU batch 0 is the
    reference and batches 2q+1, 2q+2 form the q-th self-distance pair.
    ``horizon`` bounds every train in time, so trains may end early.
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ValueError("n_list is empty")
    if any(b < a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"n_list must be non-decreasing, got {n_list}")
    if reps < MIN_REPORT_REPS:
        raise InsufficientReplications(f"reps must be >= {MIN_REPORT_REPS}, got {reps}")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if floor_pairs < 1:
        raise ValueError("floor_pairs must be >= 1")
    k = spec.k
    lp = limit_params(spec)
    params = [scheme(spec, n) for n in n_list]

    def stein_batch(row: int) -> TrainBatch:
        p = params[row]
        trains = [run_stein_with_reset(spec, p, max_spikes=depth, horizon=horizon, seed=seed,
                                       key=(row, r)) for r in range(reps)]
        return TrainBatch.from_trains(trains, depth, k)

    def ou_batch(batch: int) -> TrainBatch:
        trains = [run_ou_with_reset(spec, lp, h=ref_h, bridge=bridge, max_spikes=depth,
                                    horizon=horizon, seed=seed, key=(batch, r)) for r in range(reps)]
        return TrainBatch.from_trains(trains, depth, k)

    ou = _map(ou_batch, range(1 + 2 * floor_pairs), threads)
    stein = _map(stein_batch, range(len(n_list)), threads)
    reference = ou[0]

    names = _metric_names(depth, k)
    metrics: dict[str, list[float]] = {nm: [] for nm in names}
    non_singleton: list[list[float]] = []
    flags: list[str] = []
    empty = []
    for n, batch in zip(n_list, stein):
        dist, multi, residual = _compare(batch, reference, depth, k)
        for nm in names:
            metrics[nm].append(dist[nm])
        non_singleton.append(multi)
        if residual:
            flags.append(f"ResidualSimultaneity(n={n})")
        empty.append(int(np.sum(np.isnan(batch.taus[:, 0]))))

    floor_samples: dict[str, list[float]] = {nm: [] for nm in names}
    for q in range(floor_pairs):
        dist, _, _ = _compare(ou[2 * q + 1], ou[2 * q + 2], depth, k)
        for nm in names:
            floor_samples[nm].append(dist[nm])
    floor = {nm: float(np.median(v)) if not np.all(np.isnan(v)) else math.nan
             for nm, v in floor_samples.items()}

    no_events = all(np.all(np.isnan(b.taus[:, 0])) for b in stein + ou)
    if no_events:
        flags.insert(0, "NoEvents")
    return ConvergenceReport(
        axis=n_list, metrics=metrics, floor=floor, floor_samples=floor_samples,
        non_singleton=non_singleton,
        reference=f"ou(h={ref_h:g}, bridge={'on' if bridge else 'off'})",
        reps=reps, depth=depth, seed=seed, flags=flags,
        reference_ties=reference.ties, empty_trains=empty)
