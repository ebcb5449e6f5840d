"""First-passage times with component-wise reset, window by window.

A train is built from successive windows.  Each window starts from the
previous post-reset state, runs the free dynamics until some component
exceeds its boundary, records (tau, marks, state before and after reset)
and resets the marked components.  Window m of replication r draws from
``stream(seed, tag, *key, m)`` so it can be regenerated on its own.

With a refractory delay the marked component is held at its reset value
for that long and ignores inputs, so it cannot fire again before then.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import EventBudgetExceeded, NonPositiveDiagonal, StopTooSmall
from .model import LimitParams, NetworkSpec, SteinParams
from .rng import OU, STEIN, stream
from .stein_sim import DEFAULT_EVENT_BUDGET, StreamTable

__all__ = [
    "SpikeRecord",
    "MarkedTrain",
    "WindowOutcome",
    "stein_window",
    "ou_window",
    "run_stein_with_reset",
    "run_ou_with_reset",
    "superpose",
    "split_spikes",
    "merge_spikes",
    "write_train",
    "read_train",
]

FORMAT_VERSION = 1
DEFAULT_STEP_BUDGET = 10**9


@dataclass(frozen=True, eq=False)
class SpikeRecord:
    tau: float
    cumulative_time: float
    marks: frozenset[int]
    pre_state: np.ndarray
    post_state: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpikeRecord):
            return NotImplemented
        return (self.tau == other.tau and self.cumulative_time == other.cumulative_time
                and self.marks == other.marks
                and np.array_equal(self.pre_state, other.pre_state)
                and np.array_equal(self.post_state, other.post_state))


@dataclass(frozen=True, eq=False)
class MarkedTrain:
    records: tuple[SpikeRecord, ...]
    spec_hash: str
    generator: str
    seed: int = 0
    key: tuple[int, ...] = ()
    stop: dict = field(default_factory=dict)
    status: str = "complete"
    ties: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def taus(self) -> np.ndarray:
        return np.array([r.tau for r in self.records])

    @property
    def cumulative_times(self) -> np.ndarray:
        return np.array([r.cumulative_time for r in self.records])

    @property
    def marks(self) -> list[frozenset[int]]:
        return [r.marks for r in self.records]

    def spike_times(self, component: int) -> np.ndarray:
        """Crossing times of one component (1-based)."""
        return np.array([r.cumulative_time for r in self.records if component in r.marks])

    def isis(self, component: int) -> np.ndarray:
        return np.diff(self.spike_times(component))

    def window_start(self, spec: NetworkSpec, m: int) -> tuple[np.ndarray, np.ndarray]:
        """(start state, window-relative release times) of window m (0-based)."""
        if m == 0:
            return spec.y0.astype(float).copy(), np.zeros(spec.k)
        start = self.records[m - 1].cumulative_time
        release = np.zeros(spec.k)
        for j in range(spec.k):
            last = [r.cumulative_time for r in self.records[:m] if j + 1 in r.marks]
            if last:
                release[j] = max(0.0, last[-1] + spec.refractory[j] - start)
        return self.records[m - 1].post_state.astype(float).copy(), release


@dataclass(frozen=True, eq=False)
class WindowOutcome:
    status: int
    tau: float
    state: np.ndarray
    marks: frozenset[int]
    n_events: int = 0
    event_times: np.ndarray | None = None
    event_sources: np.ndarray | None = None
    ties: int = 0

    @property
    def crossed(self) -> bool:
        return self.status == K.CROSSED


def _check_stop(max_spikes: int | None, horizon: float | None) -> None:
    if max_spikes is None and horizon is None:
        raise StopTooSmall("need max_spikes or horizon")
    if max_spikes is not None and max_spikes < 1:
        raise StopTooSmall(f"max_spikes={max_spikes} allows no complete window")
    if horizon is not None and not horizon > 0:
        raise StopTooSmall(f"horizon={horizon} allows no complete window")


def stein_window(spec: NetworkSpec, table: StreamTable, start, release, rng: np.random.Generator,
                 t_max: float = math.inf, *, record: bool = False,
                 max_events: int = DEFAULT_EVENT_BUDGET) -> WindowOutcome:
    status, tau, x, marks, n, ev_t, ev_s = K.stein_window(
        rng, np.asarray(start, dtype=float), np.asarray(release, dtype=float),
        spec.boundary.astype(float), spec.reset.astype(float), table.cum, table.rates,
        table.total, table.amp, table.indptr, table.members, spec.theta, float(t_max),
        int(max_events), record)
    if status == K.BUDGET:
        raise EventBudgetExceeded(f"more than {max_events} events in one window")
    return WindowOutcome(status=int(status), tau=float(tau), state=x,
                         marks=frozenset(int(j) + 1 for j in np.flatnonzero(marks)), n_events=int(n),
                         event_times=ev_t if record else None, event_sources=ev_s if record else None)


def ou_window(spec: NetworkSpec, lp: LimitParams, start, release, rng: np.random.Generator,
              h: float, bridge: bool, t_max: float = math.inf,
              max_steps: int = DEFAULT_STEP_BUDGET) -> WindowOutcome:
    status, tau, y, winner, ties, _ = K.ou_window(
        rng, np.asarray(start, dtype=float), np.asarray(release, dtype=float),
        spec.boundary.astype(float), spec.reset.astype(float), lp.gamma.astype(float),
        lp.chol.astype(float), np.diag(lp.psi).astype(float), spec.theta, float(h), float(t_max),
        bool(bridge), int(max_steps))
    if status == K.BUDGET:
        raise EventBudgetExceeded(f"more than {max_steps} grid steps in one window")
    marks = frozenset({int(winner) + 1}) if status == K.CROSSED else frozenset()
    return WindowOutcome(status=int(status), tau=float(tau), state=y, marks=marks, ties=int(ties))


def _record(spec: NetworkSpec, out: WindowOutcome, cumulative: float) -> SpikeRecord:
    pre = out.state.copy()
    post = pre.copy()
    for j in out.marks:
        post[j - 1] = spec.reset[j - 1]
    pre.setflags(write=False)
    post.setflags(write=False)
    return SpikeRecord(tau=out.tau, cumulative_time=cumulative, marks=out.marks,
                       pre_state=pre, post_state=post)


def _run(spec: NetworkSpec, step, max_spikes, horizon, seed, tag, key, generator, extra_stop=None):
    _check_stop(max_spikes, horizon)
    state = spec.y0.astype(float).copy()
    release = np.zeros(spec.k)
    records: list[SpikeRecord] = []
    cumulative = 0.0
    status = "complete"
    ties = 0
    m = 0
    while max_spikes is None or len(records) < max_spikes:
        t_max = math.inf if horizon is None else horizon - cumulative
        if t_max <= 0:
            status = "horizon"
            break
        out = step(state, release, stream(seed, tag, *key, m), t_max)
        if out is None or out.status == K.NEVER:
            status = "exhausted"
            break
        if out.status == K.HORIZON:
            status = "horizon"
            break
        cumulative += out.tau
        rec = _record(spec, out, cumulative)
        records.append(rec)
        ties += out.ties
        state = rec.post_state.copy()
        release = np.maximum(release - out.tau, 0.0)
        for j in out.marks:
            release[j - 1] = spec.refractory[j - 1]
        m += 1
    stop = {"max_spikes": max_spikes, "horizon": horizon}
    if extra_stop:
        stop.update(extra_stop)
    return MarkedTrain(records=tuple(records), spec_hash=spec.hash(), generator=generator,
                       seed=int(seed), key=tuple(int(v) for v in key), stop=stop, status=status,
                       ties=ties)


def run_stein_with_reset(spec: NetworkSpec, p: SteinParams, *, max_spikes: int | None = None,
                         horizon: float | None = None, seed: int = 0,
                         key: Sequence[int] = (0,),
                         max_events: int = DEFAULT_EVENT_BUDGET) -> MarkedTrain:
    """Marked train of the Stein process with reset, exact crossing times."""
    table = StreamTable.from_params(p)

    def step(state, release, rng, t_max):
        return stein_window(spec, table, state, release, rng, t_max, max_events=max_events)

    return _run(spec, step, max_spikes, horizon, seed, STEIN, tuple(key), f"stein(n={p.n})")


def _never_crosses(spec: NetworkSpec, lp: LimitParams, state, release) -> bool:
    """Noise-free OU paths are monotone between their start and Gamma theta."""
    if np.any(lp.psi != 0):
        return False
    start = np.where(release > 0, spec.reset, state)
    limit = lp.gamma * spec.theta
    return bool(np.all((start < spec.boundary) & (limit <= spec.boundary)))


def run_ou_with_reset(spec: NetworkSpec, lp: LimitParams, *, h: float, bridge: bool = False,
                      max_spikes: int | None = None, horizon: float | None = None, seed: int = 0,
                      key: Sequence[int] = (0,),
                      max_steps: int = DEFAULT_STEP_BUDGET) -> MarkedTrain:
    """Marked train of the OU process with reset on a grid of step h.

    One mark per record.  Simultaneous grid exceedances go to the largest
    overshoot, then the lowest index; the losers keep their value and fire
    in the next window.  ``ties`` counts them and vanishes as h -> 0.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    if bridge:
        zero = np.flatnonzero(np.diag(lp.psi) <= 0)
        if zero.size:
            raise NonPositiveDiagonal(
                f"component {int(zero[0]) + 1} has zero noise variance; bridge correction undefined")

    def step(state, release, rng, t_max):
        if math.isinf(t_max) and _never_crosses(spec, lp, state, release):
            return None
        return ou_window(spec, lp, state, release, rng, h, bridge, t_max, max_steps)

    tag = f"ou(h={h:g}{',bridge' if bridge else ''})"
    return _run(spec, step, max_spikes, horizon, seed, OU, tuple(key), tag,
                {"h": h, "bridge": bridge})


def superpose(train: MarkedTrain) -> list[tuple[float, frozenset[int]]]:
    return [(r.cumulative_time, r.marks) for r in train.records]


def split_spikes(events: Iterable[tuple[float, Iterable[int]]]) -> dict[int, np.ndarray]:
    """Per-component spike times from a superposed (time, marks) sequence."""
    out: dict[int, list[float]] = {}
    for t, marks in events:
        for j in marks:
            out.setdefault(int(j), []).append(float(t))
    return {j: np.array(ts) for j, ts in sorted(out.items())}


def merge_spikes(trains: dict[int, Sequence[float]]) -> list[tuple[float, frozenset[int]]]:
    """Superpose per-component spike times; equal times merge into one set mark."""
    by_time: dict[float, set[int]] = {}
    for j, times in trains.items():
        for t in times:
            by_time.setdefault(float(t), set()).add(int(j))
    return [(t, frozenset(by_time[t])) for t in sorted(by_time)]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header_path(target: Path) -> Path:
    return target.with_name(target.stem + ".header.json")


def write_train(train: MarkedTrain, target: str | Path, fmt: str = "csv") -> Path:
    """Write records plus a ``<stem>.header.json`` sidecar; returns the sidecar path."""
    target = Path(target)
    lines = []
    if fmt == "csv":
        lines.append("cumulative_time,tau,marks,pre_state,post_state")
        for r in train.records:
            lines.append(",".join([
                _fmt(r.cumulative_time), _fmt(r.tau), ";".join(str(j) for j in sorted(r.marks)),
                ";".join(_fmt(v) for v in r.pre_state), ";".join(_fmt(v) for v in r.post_state)]))
    elif fmt == "ndjson":
        for r in train.records:
            lines.append(
                f'{{"cumulative_time": {_fmt(r.cumulative_time)}, "tau": {_fmt(r.tau)}, '
                f'"marks": [{", ".join(str(j) for j in sorted(r.marks))}], '
                f'"pre_state": [{", ".join(_fmt(v) for v in r.pre_state)}], '
                f'"post_state": [{", ".join(_fmt(v) for v in r.post_state)}]}}')
    else:
        raise ValueError(f"unknown format {fmt!r}")
    target.write_text("".join(line + "\n" for line in lines))
    header = {
        "format": "steinnet-marked-train",
        "version": FORMAT_VERSION,
        "records_format": fmt,
        "spec_hash": train.spec_hash,
        "generator": train.generator,
        "seed": train.seed,
        "key": list(train.key),
        "stop": train.stop,
        "status": train.status,
        "ties": train.ties,
        "n_records": len(train.records),
    }
    sidecar = _header_path(target)
    sidecar.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_train(source: str | Path) -> MarkedTrain:
    source = Path(source)
    header = json.loads(_header_path(source).read_text())
    if header.get("format") != "steinnet-marked-train" or header.get("version") != FORMAT_VERSION:
        raise ValueError("not a version-1 marked train")
    records = []
    lines = source.read_text().splitlines()
    if header["records_format"] == "csv":
        for row in lines[1:]:
            cum, tau, marks, pre, post = row.split(",")
            records.append(SpikeRecord(
                tau=float(tau), cumulative_time=float(cum),
                marks=frozenset(int(j) for j in marks.split(";")),
                pre_state=np.array([float(v) for v in pre.split(";")]),
                post_state=np.array([float(v) for v in post.split(";")])))
    else:
        for row in lines:
            d = json.loads(row)
            records.append(SpikeRecord(
                tau=float(d["tau"]), cumulative_time=float(d["cumulative_time"]),
                marks=frozenset(d["marks"]), pre_state=np.array(d["pre_state"], dtype=float),
                post_state=np.array(d["post_state"], dtype=float)))
    return MarkedTrain(records=tuple(records), spec_hash=header["spec_hash"],
                       generator=header["generator"], seed=header["seed"], key=tuple(header["key"]),
                       stop=header["stop"], status=header["status"], ties=header["ties"])
