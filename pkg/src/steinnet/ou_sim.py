"""Grid simulation of the limiting OU process dY = (-Y/theta + Gamma) dt + dW.

With a drift matrix that is a multiple of the identity, the transition over
a step h is Gaussian with mean y e^{-h/theta} + Gamma theta (1 - e^{-h/theta})
and covariance Psi (theta/2)(1 - e^{-2h/theta}), so the grid values carry no
discretisation error.  Euler-Maruyama is kept only as a test oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import OutOfRange
from .model import LimitParams

__all__ = ["GridPath", "ou_step_law", "simulate_ou", "fluid_solution", "write_grid", "read_grid"]

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class GridPath:
    y0: np.ndarray
    h: float
    states: np.ndarray
    scheme: str = "exact"
    seed: int | None = None
    params_hash: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.h

    @property
    def k(self) -> int:
        return self.states.shape[1]


def _step_variance(theta: float, h: float) -> float:
    return theta / 2.0 * -math.expm1(-2.0 * h / theta)


def ou_step_law(lp: LimitParams, theta: float, y, h: float) -> tuple[np.ndarray, np.ndarray]:
    if not h > 0:
        raise OutOfRange(f"step must be positive, got {h}")
    y = np.asarray(y, dtype=float)
    decay = math.exp(-h / theta)
    mean = y * decay + lp.gamma * theta * -math.expm1(-h / theta)
    return mean, lp.psi * _step_variance(theta, h)


def fluid_solution(gamma, theta: float, y0, times) -> np.ndarray:
    """Noise-free path y0 e^{-t/theta} + Gamma theta (1 - e^{-t/theta}), shape (len(times), k)."""
    t = np.asarray(times, dtype=float)[:, None]
    return np.asarray(y0)[None, :] * np.exp(-t / theta) + np.asarray(gamma)[None, :] * theta * -np.expm1(-t / theta)


def simulate_ou(lp: LimitParams, theta: float, y0, horizon: float, h: float,
                rng: np.random.Generator, *, scheme: str = "exact",
                seed: int | None = None, params_hash: str = "") -> GridPath:
    if not h > 0:
        raise OutOfRange(f"step must be positive, got {h}")
    if not horizon >= h:
        raise OutOfRange(f"horizon ({horizon}) must be at least one step ({h})")
    y0 = np.asarray(y0, dtype=float)
    m = int(math.ceil(horizon / h - 1e-9))
    xi = rng.standard_normal((m, lp.k))
    if scheme == "exact":
        coef = np.full(lp.k, math.exp(-h / theta))
        drift = lp.gamma * theta * -math.expm1(-h / theta)
        factor = lp.chol * math.sqrt(_step_variance(theta, h))
    elif scheme == "euler":
        coef = np.full(lp.k, 1.0 - h / theta)
        drift = lp.gamma * h
        factor = lp.chol * math.sqrt(h)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    states = K.ou_grid(y0, coef, drift, xi @ factor.T)
    return GridPath(y0=y0, h=float(h), states=states, scheme=scheme, seed=seed, params_hash=params_hash)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_grid(path: GridPath, target: str | Path, fmt: str = "csv", fluid: np.ndarray | None = None) -> None:
    """Same layout as jump-path files: JSON header line, then one row per grid time.

    ``fluid`` optionally appends the noise-free solution as extra columns.
    """
    header = {
        "format": "steinnet-grid-path",
        "version": FORMAT_VERSION,
        "params_hash": path.params_hash,
        "seed": path.seed,
        "scheme": path.scheme,
        "k": path.k,
        "h": path.h,
        "y0": [float(v) for v in path.y0],
    }
    cols = ["time"] + [f"y{j + 1}" for j in range(path.k)]
    if fluid is not None:
        cols += [f"fluid{j + 1}" for j in range(path.k)]
    data = np.column_stack([path.times, path.states] + ([fluid] if fluid is not None else []))
    lines = []
    if fmt == "csv":
        lines.append("# " + json.dumps(header, sort_keys=True))
        lines.append(",".join(cols))
        lines.extend(",".join(_fmt(v) for v in row) for row in data)
    elif fmt == "ndjson":
        lines.append(json.dumps(header, sort_keys=True))
        for row in data:
            lines.append("{" + ", ".join(f'"{c}": {_fmt(v)}' for c, v in zip(cols, row)) + "}")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    Path(target).write_text("\n".join(lines) + "\n")


def read_grid(source: str | Path) -> tuple[GridPath, dict[str, np.ndarray]]:
    """Parse a grid file; returns the path and every column by name."""
    text = Path(source).read_text().splitlines()
    csv = text[0].startswith("# ")
    header = json.loads(text[0][2:] if csv else text[0])
    if csv:
        cols = text[1].split(",")
        data = np.array([[float(v) for v in row.split(",")] for row in text[2:]])
    else:
        recs = [json.loads(row) for row in text[1:]]
        cols = list(recs[0].keys())
        data = np.array([[float(r[c]) for c in cols] for r in recs])
    columns = {c: data[:, i] for i, c in enumerate(cols)}
    k = header["k"]
    states = np.column_stack([columns[f"y{j + 1}"] for j in range(k)])
    grid = GridPath(y0=np.array(header["y0"]), h=header["h"], states=states, scheme=header["scheme"],
                    seed=header["seed"], params_hash=header["params_hash"])
    return grid, columns
