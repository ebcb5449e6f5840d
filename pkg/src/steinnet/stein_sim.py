"""Exact event-driven simulation of the multivariate Stein process.

The 2k + 2m Poisson inputs (N+_j, N-_j, M+_A, M-_A) are sampled as one
superposed clock of total rate Lambda with the stream picked in proportion
to its rate; between events every component decays as exp(-dt/theta).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .errors import EventBudgetExceeded, OutOfRange
from .model import SteinParams, drift_n

__all__ = [
    "StreamTable",
    "JumpEvent",
    "JumpPath",
    "simulate_stein",
    "evaluate",
    "evaluate_many",
    "martingale_part",
    "sample_martingale",
    "sample_state",
    "sample_terminal",
    "write_path",
    "read_path",
    "DEFAULT_EVENT_BUDGET",
]

DEFAULT_EVENT_BUDGET = 10**8
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class StreamTable:
    """Flattened description of every input stream of a SteinParams.

    Stream order: N+_1..N+_k, N-_1..N-_k, M+_A1..M+_Am, M-_A1..M-_Am.
    ``indptr``/``members`` give the 0-based components each stream hits.
    """

    k: int
    m: int
    rates: np.ndarray
    cum: np.ndarray
    amp: np.ndarray
    indptr: np.ndarray
    members: np.ndarray

    @classmethod
    def from_params(cls, p: SteinParams) -> "StreamTable":
        k, m = p.k, len(p.clusters)
        rates = np.concatenate([p.alpha, p.beta, p.lam, p.omega]).astype(float)
        a, b = float(p.a), float(p.b)
        amp = np.concatenate([np.full(k, a), np.full(k, b), np.full(m, a), np.full(m, b)])
        groups = [[j] for j in range(k)] * 2 + [sorted(j - 1 for j in c) for c in p.clusters] * 2
        indptr = np.zeros(len(groups) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(g) for g in groups])
        members = np.array([j for g in groups for j in g], dtype=np.int64)
        return cls(k=k, m=m, rates=rates, cum=np.cumsum(rates), amp=amp,
                   indptr=indptr, members=members)

    @property
    def total(self) -> float:
        return float(self.cum[-1]) if self.cum.size else 0.0

    def kind(self, s: int) -> tuple[str, int]:
        """(source kind, 1-based component or cluster index) of stream s."""
        k, m = self.k, self.m
        if s < k:
            return "N+", s + 1
        if s < 2 * k:
            return "N-", s - k + 1
        if s < 2 * k + m:
            return "M+", s - 2 * k + 1
        return "M-", s - 2 * k - m + 1

    def stream_id(self, kind: str, index: int) -> int:
        offset = {"N+": 0, "N-": self.k, "M+": 2 * self.k, "M-": 2 * self.k + self.m}[kind]
        return offset + index - 1

    def affected(self, s: int) -> frozenset[int]:
        return frozenset(int(j) + 1 for j in self.members[self.indptr[s]:self.indptr[s + 1]])


@dataclass(frozen=True)
class JumpEvent:
    time: float
    source: tuple[str, int]
    affected: frozenset[int]
    amplitude: float


@dataclass(frozen=True, eq=False)
class JumpPath:
    """One realisation: initial state plus the ordered list of input events."""

    x0: np.ndarray
    theta: float
    horizon: float
    times: np.ndarray
    sources: np.ndarray
    streams: StreamTable
    params_hash: str = ""
    seed: int | None = None

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self) -> Iterator[JumpEvent]:
        for i in range(self.times.size):
            yield self.event(i)

    def event(self, i: int) -> JumpEvent:
        s = int(self.sources[i])
        return JumpEvent(time=float(self.times[i]), source=self.streams.kind(s),
                         affected=self.streams.affected(s), amplitude=float(self.streams.amp[s]))

    @property
    def events(self) -> list[JumpEvent]:
        return list(self)

    @property
    def k(self) -> int:
        return self.x0.size


def simulate_stein(p: SteinParams, theta: float, horizon: float, rng: np.random.Generator,
                   *, max_events: int = DEFAULT_EVENT_BUDGET, seed: int | None = None) -> JumpPath:
    if not horizon > 0:
        raise OutOfRange(f"horizon must be positive, got {horizon}")
    table = StreamTable.from_params(p)
    times, sources, status = K.stein_events(rng, table.cum, table.rates, table.total,
                                            float(horizon), int(max_events))
    if status == K.BUDGET:
        raise EventBudgetExceeded(f"more than {max_events} events before t={horizon}")
    return JumpPath(x0=p.x0.copy(), theta=float(theta), horizon=float(horizon), times=times,
                    sources=sources, streams=table, params_hash=p.hash(), seed=seed)


def _check_times(path: JumpPath, t: np.ndarray) -> None:
    if np.any(t < 0) or np.any(t > path.horizon) or not np.all(np.isfinite(t)):
        raise OutOfRange(f"time outside [0, {path.horizon}]")


def evaluate_many(path: JumpPath, times: Sequence[float]) -> np.ndarray:
    """States at several times, shape (len(times), k)."""
    t = np.asarray(times, dtype=float).reshape(-1)
    _check_times(path, t)
    order = np.argsort(t, kind="stable")
    st = path.streams
    out = np.empty((t.size, path.k))
    out[order] = K.replay(path.x0.astype(float), path.times, path.sources, st.amp, st.indptr,
                          st.members, path.theta, t[order])
    return out


def evaluate(path: JumpPath, t: float) -> np.ndarray:
    return evaluate_many(path, [t])[0]


def martingale_part(path: JumpPath, p: SteinParams, t: float | Sequence[float]) -> np.ndarray:
    """Z_n(t): input received up to t minus the compensator Gamma_n t."""
    scalar = np.ndim(t) == 0
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    _check_times(path, tq)
    order = np.argsort(tq, kind="stable")
    st = path.streams
    sums = np.empty((tq.size, path.k))
    sums[order] = K.jump_sums(path.k, path.times, path.sources, st.amp, st.indptr, st.members,
                              tq[order])
    z = sums - np.outer(tq, drift_n(p))
    return z[0] if scalar else z


def sample_martingale(p: SteinParams, t: float, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws of Z_n(t), shape (reps, k).

    Z_n(t) only depends on the per-stream event counts on [0, t], which are
    independent Poisson(rate t); sampling them directly has the same law as
    ``martingale_part`` on full paths at a fraction of the cost.
    """
    table = StreamTable.from_params(p)
    counts = rng.poisson(table.rates * t, size=(reps, table.rates.size)).astype(float)
    hits = np.zeros((table.rates.size, p.k))
    for s in range(table.rates.size):
        hits[s, table.members[table.indptr[s]:table.indptr[s + 1]]] = table.amp[s]
    return counts @ hits - t * drift_n(p)


def sample_state(p: SteinParams, theta: float, t: float, reps: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Independent draws of X_n(t), shape (reps, k).

    Each jump contributes its amplitude damped by exp(-(t - s)/theta), so
    X_n(t) only needs the per-stream counts and the event times given the
    counts; this skips the superposed clock that ``sample_terminal`` runs.
    """
    table = StreamTable.from_params(p)
    sums = K.decayed_counts(rng, table.rates, float(t), float(theta), int(reps))
    hits = np.zeros((table.rates.size, p.k))
    for s in range(table.rates.size):
        hits[s, table.members[table.indptr[s]:table.indptr[s + 1]]] = table.amp[s]
    return p.x0 * np.exp(-t / theta) + sums @ hits


def sample_terminal(p: SteinParams, theta: float, t: float, rngs,
                    *, max_events: int = DEFAULT_EVENT_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """(X_n(t), Z_n(t)) for each generator in ``rngs``; one replication per generator."""
    table = StreamTable.from_params(p)
    gamma = drift_n(p)
    xs, zs = [], []
    for rng in rngs:
        x, jumps, _, status = K.stein_terminal(rng, p.x0.astype(float), table.cum, table.rates,
                                               table.total, table.amp, table.indptr,
                                               table.members, float(theta), float(t),
                                               int(max_events))
        if status == K.BUDGET:
            raise EventBudgetExceeded(f"more than {max_events} events before t={t}")
        xs.append(x)
        zs.append(jumps - gamma * t)
    return np.array(xs), np.array(zs)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_path(path: JumpPath, target: str | Path, fmt: str = "csv") -> None:
    """Columnar event file: time, source kind, source index, amplitude.

    The first line carries a JSON header (format version, params hash,
    seed, x0, theta, horizon, stream layout); csv puts it behind ``# ``.
    """
    st = path.streams
    header = {
        "format": "steinnet-jump-path",
        "version": FORMAT_VERSION,
        "params_hash": path.params_hash,
        "seed": path.seed,
        "k": path.k,
        "theta": path.theta,
        "horizon": path.horizon,
        "x0": [float(v) for v in path.x0],
        "amplitudes": {"a": float(st.amp[0]), "b": float(st.amp[st.k])} if st.k else {},
        "clusters": [sorted(int(j) + 1 for j in st.members[st.indptr[s]:st.indptr[s + 1]])
                     for s in range(2 * st.k, 2 * st.k + st.m)],
        "rates": [float(r) for r in st.rates],
    }
    lines = []
    if fmt == "csv":
        lines.append("# " + json.dumps(header, sort_keys=True))
        lines.append("time,source_kind,source_index,amplitude")
        for t, s in zip(path.times, path.sources):
            kind, idx = st.kind(int(s))
            lines.append(f"{_fmt(t)},{kind},{idx},{_fmt(st.amp[s])}")
    elif fmt == "ndjson":
        lines.append(json.dumps(header, sort_keys=True))
        for t, s in zip(path.times, path.sources):
            kind, idx = st.kind(int(s))
            lines.append(f'{{"time": {_fmt(t)}, "source_kind": "{kind}", '
                         f'"source_index": {idx}, "amplitude": {_fmt(st.amp[s])}}}')
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(target).write_text("\n".join(lines) + "\n")


def read_path(source: str | Path) -> JumpPath:
    text = Path(source).read_text().splitlines()
    first = text[0]
    csv = first.startswith("# ")
    header = json.loads(first[2:] if csv else first)
    if header.get("format") != "steinnet-jump-path" or header.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 jump path file")
    k = header["k"]
    clusters = [frozenset(c) for c in header["clusters"]]
    rates = np.array(header["rates"], dtype=float)
    m = len(clusters)
    a, b = header["amplitudes"]["a"], header["amplitudes"]["b"]
    p = SteinParams(n=1, a=a, b=b, alpha=rates[:k], beta=rates[k:2 * k],
                    lam=rates[2 * k:2 * k + m], omega=rates[2 * k + m:],
                    x0=header["x0"], clusters=tuple(clusters))
    table = StreamTable.from_params(p)
    rows = text[2:] if csv else text[1:]
    times = np.empty(len(rows))
    sources = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        if csv:
            t, kind, idx, _ = row.split(",")
        else:
            rec = json.loads(row)
            t, kind, idx = rec["time"], rec["source_kind"], rec["source_index"]
        times[i] = float(t)
        sources[i] = table.stream_id(kind, int(idx))
    return JumpPath(x0=np.array(header["x0"], dtype=float), theta=header["theta"],
                    horizon=header["horizon"], times=times, sources=sources, streams=table,
                    params_hash=header["params_hash"], seed=header["seed"])
