"""Network description, finite-n scaling schemes and limit parameters.

Component labels are 1-based everywhere they are user facing (cluster
members, spike marks, config files); arrays indexed by component are
0-based as usual.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NegativeRate, NotPSD, SpecError

__all__ = [
    "Cluster",
    "NetworkSpec",
    "SteinParams",
    "SteinMoments",
    "LimitParams",
    "Scheme",
    "SchemeCheck",
    "limit_drift",
    "limit_covariance",
    "limit_params",
    "scale_params",
    "exact_moment_scheme",
    "check_scheme",
    "stein_moments",
    "drift_n",
    "second_moment_matrix",
    "characteristic_exponent",
    "gaussian_exponent",
    "cholesky_factor",
]


def _frozen_vector(values, k: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 1 and k > 1:
        arr = np.full(k, float(arr[0]))
    if arr.shape != (k,):
        raise SpecError(f"{name} must have {k} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _canonical_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Cluster:
    """A set of at least two components sharing the M+/M- input streams."""

    members: frozenset[int]
    mu: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def index(self) -> np.ndarray:
        """0-based member positions, sorted."""
        return np.array(sorted(self.members), dtype=np.int64) - 1


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Limit-model description of a k-component network with reset."""

    k: int
    theta: float
    mu: np.ndarray
    sigma2: np.ndarray
    boundary: np.ndarray
    reset: np.ndarray
    clusters: tuple[Cluster, ...] = ()
    refractory: np.ndarray | None = None
    y0: np.ndarray | None = None

    def __post_init__(self) -> None:
        k = int(self.k)
        if k < 1:
            raise SpecError(f"dimension must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", k)
        theta = float(self.theta)
        if not (np.isfinite(theta) and theta > 0):
            raise SpecError(f"theta must be positive, got {self.theta}")
        object.__setattr__(self, "theta", theta)
        for name in ("mu", "sigma2", "boundary", "reset"):
            object.__setattr__(self, name, _frozen_vector(getattr(self, name), k, name))
        refractory = np.zeros(k) if self.refractory is None else self.refractory
        object.__setattr__(self, "refractory", _frozen_vector(refractory, k, "refractory"))
        y0 = self.reset if self.y0 is None else self.y0
        object.__setattr__(self, "y0", _frozen_vector(y0, k, "y0"))
        object.__setattr__(self, "clusters", tuple(
            c if isinstance(c, Cluster) else Cluster(**c) for c in self.clusters))
        self._validate()

    def _validate(self) -> None:
        for j in range(self.k):
            label = j + 1
            if self.sigma2[j] < 0:
                raise SpecError(f"component {label}: sigma2 must be >= 0, got {self.sigma2[j]}")
            if self.refractory[j] < 0:
                raise SpecError(f"component {label}: refractory must be >= 0, got {self.refractory[j]}")
            if not self.reset[j] < self.boundary[j]:
                raise SpecError(
                    f"component {label}: reset ({self.reset[j]}) must be below boundary ({self.boundary[j]})")
            if not self.y0[j] < self.boundary[j]:
                raise SpecError(
                    f"component {label}: y0 ({self.y0[j]}) must be below boundary ({self.boundary[j]})")
        seen: set[frozenset[int]] = set()
        for i, c in enumerate(self.clusters, start=1):
            if len(c.members) < 2:
                raise SpecError(f"cluster {i}: a cluster needs at least two members, got {sorted(c.members)}")
            bad = [m for m in c.members if not 1 <= m <= self.k]
            if bad:
                raise SpecError(f"cluster {i}: members {bad} outside 1..{self.k}")
            if c.members in seen:
                raise SpecError(f"cluster {i}: duplicate member set {sorted(c.members)}")
            seen.add(c.members)
            if not np.isfinite(c.mu) or not np.isfinite(c.sigma2):
                raise SpecError(f"cluster {i}: mu and sigma2 must be finite")
            if c.sigma2 < 0:
                raise SpecError(f"cluster {i}: sigma2 must be >= 0, got {c.sigma2}")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def replace(self, **changes) -> "NetworkSpec":
        fields = self.to_dict()
        fields.update(changes)
        return NetworkSpec.from_dict(fields)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "theta": self.theta,
            "mu": self.mu.tolist(),
            "sigma2": self.sigma2.tolist(),
            "boundary": self.boundary.tolist(),
            "reset": self.reset.tolist(),
            "refractory": self.refractory.tolist(),
            "y0": self.y0.tolist(),
            "clusters": [
                {"members": sorted(c.members), "mu": c.mu, "sigma2": c.sigma2}
                for c in self.clusters
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["clusters"] = tuple(Cluster(**c) if not isinstance(c, Cluster) else c
                              for c in d.get("clusters", ()))
        return cls(**d)

    def hash(self) -> str:
        return _canonical_hash(self.to_dict())


@dataclass(frozen=True, eq=False)
class SteinParams:
    """Finite-n jump model: amplitudes and Poisson rates of every input stream.

    Amplitudes and rates are kept in extended precision.  Rates grow like
    n^2 while the drift they encode is O(1), so float64 storage alone would
    lose the drift to cancellation at large n.  Simulation uses float64.
    """

    n: int
    a: float
    b: float
    alpha: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    omega: np.ndarray
    x0: np.ndarray
    clusters: tuple[frozenset[int], ...] = ()

    def __post_init__(self) -> None:
        if int(self.n) < 1:
            raise SpecError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not self.a > 0:
            raise SpecError(f"excitatory amplitude must be > 0, got {self.a}")
        if not self.b < 0:
            raise SpecError(f"inhibitory amplitude must be < 0, got {self.b}")
        object.__setattr__(self, "a", np.longdouble(self.a))
        object.__setattr__(self, "b", np.longdouble(self.b))
        object.__setattr__(self, "clusters", tuple(frozenset(int(m) for m in c) for c in self.clusters))
        k = np.asarray(self.x0).size
        m = len(self.clusters)
        for name, size in (("alpha", k), ("beta", k), ("lam", m), ("omega", m)):
            arr = np.array(getattr(self, name), dtype=np.longdouble).reshape(-1)
            if arr.shape != (size,):
                raise SpecError(f"{name} must have {size} entries, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise SpecError(f"{name} rates must be finite")
            neg = np.flatnonzero(arr < 0)
            if neg.size:
                i = int(neg[0])
                what = f"component {i + 1}" if size == k else f"cluster {i + 1}"
                raise NegativeRate(f"n={self.n}: {name} rate for {what} is negative ({float(arr[i]):.6g})")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def k(self) -> int:
        return self.x0.size

    @property
    def total_rate(self) -> float:
        return float(self.alpha.sum() + self.beta.sum() + self.lam.sum() + self.omega.sum())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "a": float(self.a),
            "b": float(self.b),
            "alpha": self.alpha.astype(float).tolist(),
            "beta": self.beta.astype(float).tolist(),
            "lambda": self.lam.astype(float).tolist(),
            "omega": self.omega.astype(float).tolist(),
            "x0": self.x0.tolist(),
            "clusters": [sorted(c) for c in self.clusters],
        }

    def hash(self) -> str:
        return _canonical_hash(self.to_dict())


@dataclass(frozen=True, eq=False)
class LimitParams:
    """Drift Gamma, noise covariance Psi and its lower Cholesky factor."""

    gamma: np.ndarray
    psi: np.ndarray
    chol: np.ndarray

    @property
    def k(self) -> int:
        return self.gamma.size


Scheme = Callable[[NetworkSpec, int], SteinParams]


def limit_drift(spec: NetworkSpec) -> np.ndarray:
    gamma = spec.mu.copy()
    for c in spec.clusters:
        gamma[c.index] += c.mu
    return gamma


def limit_covariance(spec: NetworkSpec) -> np.ndarray:
    psi = np.diag(spec.sigma2.astype(float))
    for c in spec.clusters:
        idx = c.index
        psi[np.ix_(idx, idx)] += c.sigma2
    return psi


def limit_params(spec: NetworkSpec) -> LimitParams:
    psi = limit_covariance(spec)
    return LimitParams(gamma=limit_drift(spec), psi=psi, chol=cholesky_factor(psi))


def scale_params(spec: NetworkSpec, n: int) -> SteinParams:
    """Default scheme: a = -b = 1/n with rates chosen so the drift is exact.

    alpha = (mu + sigma2 n / 2) n and beta = sigma2 n^2 / 2, and the same
    form for the cluster rates.  The excitatory/inhibitory drift is then
    mu for every n while the second moment carries an extra mu/n.
    """
    n = int(n)
    if n < 1:
        raise SpecError(f"n must be a positive integer, got {n}")
    nf = np.longdouble(n)
    mu, s2 = spec.mu.astype(np.longdouble), spec.sigma2.astype(np.longdouble)
    alpha = (mu + s2 * nf / 2) * nf
    beta = s2 / 2 * nf * nf
    c_mu = np.array([c.mu for c in spec.clusters], dtype=np.longdouble)
    c_s2 = np.array([c.sigma2 for c in spec.clusters], dtype=np.longdouble)
    lam = (c_mu + c_s2 * nf / 2) * nf
    omega = c_s2 / 2 * nf * nf
    return SteinParams(
        n=n, a=1 / nf, b=-1 / nf, alpha=alpha, beta=beta, lam=lam, omega=omega,
        x0=spec.y0, clusters=tuple(c.members for c in spec.clusters),
    )


def exact_moment_scheme(ratio: float = 2.0) -> Scheme:
    """Scheme with a = 1/n, b = -ratio/n matching drift and variance exactly.

    Solving alpha a + beta b = mu and alpha a^2 + beta b^2 = sigma2 gives
    beta = (sigma2 n^2 - mu n) / (ratio (1 + ratio)) and alpha = mu n + ratio beta.
    Admissible only once sigma2 n >= mu for every stream.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")

    def solve(mu, s2, nf):
        beta = (s2 * nf * nf - mu * nf) / (ratio * (1.0 + ratio))
        return mu * nf + ratio * beta, beta

    def scheme(spec: NetworkSpec, n: int) -> SteinParams:
        nf = np.longdouble(n)
        alpha, beta = solve(spec.mu.astype(np.longdouble), spec.sigma2.astype(np.longdouble), nf)
        c_mu = np.array([c.mu for c in spec.clusters], dtype=np.longdouble)
        c_s2 = np.array([c.sigma2 for c in spec.clusters], dtype=np.longdouble)
        lam, omega = solve(c_mu, c_s2, nf)
        return SteinParams(
            n=n, a=1 / nf, b=-ratio / nf, alpha=alpha, beta=beta, lam=lam, omega=omega,
            x0=spec.y0, clusters=tuple(c.members for c in spec.clusters),
        )

    scheme.__name__ = f"exact_moment_scheme(ratio={ratio:g})"
    return scheme


@dataclass(frozen=True)
class SteinMoments:
    mu: np.ndarray
    sigma2: np.ndarray
    mu_cluster: np.ndarray
    sigma2_cluster: np.ndarray


def stein_moments(p: SteinParams) -> SteinMoments:
    """Per-stream drift and second moment, summed in extended precision."""
    a, b = p.a, p.b
    return SteinMoments(
        mu=(p.alpha * a + p.beta * b).astype(float),
        sigma2=(p.alpha * a * a + p.beta * b * b).astype(float),
        mu_cluster=(p.lam * a + p.omega * b).astype(float),
        sigma2_cluster=(p.lam * a * a + p.omega * b * b).astype(float),
    )


def _membership(p: SteinParams) -> np.ndarray:
    """(m, k) 0/1 matrix of cluster membership."""
    mat = np.zeros((len(p.clusters), p.k))
    for i, members in enumerate(p.clusters):
        mat[i, np.array(sorted(members)) - 1] = 1.0
    return mat


def drift_n(p: SteinParams) -> np.ndarray:
    """Compensator slope Gamma_n of the martingale part."""
    mom = stein_moments(p)
    return mom.mu + mom.mu_cluster @ _membership(p)


def second_moment_matrix(p: SteinParams) -> np.ndarray:
    """c~_n: integral of x_j x_l against the Levy measure of the inputs."""
    mom = stein_moments(p)
    memb = _membership(p)
    return np.diag(mom.sigma2) + memb.T @ (mom.sigma2_cluster[:, None] * memb)


def characteristic_exponent(p: SteinParams, u) -> complex | np.ndarray:
    """rho_n(u) with E exp(i u . Z_n(t)) = exp(t rho_n(u)).

    ``u`` may be a single k-vector or an (m, k) stack; the result is a
    complex scalar or an m-vector accordingly.
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != p.k:
        raise ValueError(f"u must have {p.k} components")
    g_a = u @ _membership(p).T
    a, b = float(p.a), float(p.b)
    rho = (
        -1j * (u @ drift_n(p))
        + np.expm1(1j * u * a) @ p.alpha.astype(float)
        + np.expm1(1j * u * b) @ p.beta.astype(float)
        + np.expm1(1j * g_a * a) @ p.lam.astype(float)
        + np.expm1(1j * g_a * b) @ p.omega.astype(float)
    )
    return complex(rho[0]) if single else rho


def gaussian_exponent(psi: np.ndarray, u) -> float | np.ndarray:
    """-u.Psi.u / 2, the exponent of the Wiener limit."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return float(-0.5 * u @ psi @ u)
    return -0.5 * np.einsum("mi,ij,mj->m", u, psi, u)


def cholesky_factor(psi, tol: float = 1e-8) -> np.ndarray:
    """Lower factor L with L L^T = psi, tolerating positive semi-definite input.

    Falls back to an outer-product factorisation that zeroes columns whose
    pivot is within ``tol * max(diag)`` of zero; a pivot below minus that
    bound means the matrix is not PSD.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
        raise NotPSD(f"expected a square matrix, got shape {psi.shape}")
    if not np.allclose(psi, psi.T, rtol=1e-12, atol=1e-14):
        raise NotPSD("matrix is not symmetric")
    k = psi.shape[0]
    scale = float(np.max(np.abs(np.diag(psi)))) if k else 0.0
    if scale == 0.0:
        if np.any(psi != 0):
            raise NotPSD("zero diagonal with non-zero off-diagonal entries")
        return np.zeros_like(psi)
    try:
        chol = np.linalg.cholesky(psi)
    except np.linalg.LinAlgError:
        chol = _semidefinite_cholesky(psi, tol * scale)
    err = np.max(np.abs(chol @ chol.T - psi))
    if err > tol * scale:
        raise NotPSD(f"factor does not reproduce the matrix (max error {err:.3g})")
    return chol


def _semidefinite_cholesky(psi: np.ndarray, floor: float) -> np.ndarray:
    k = psi.shape[0]
    work = psi.copy()
    chol = np.zeros_like(psi)
    for j in range(k):
        pivot = work[j, j]
        if pivot < -floor:
            raise NotPSD(f"negative pivot {pivot:.3g} at position {j + 1}")
        if pivot <= floor:
            continue
        root = np.sqrt(pivot)
        chol[j:, j] = work[j:, j] / root
        work[j:, j:] -= np.outer(chol[j:, j], chol[j:, j])
    return chol


@dataclass
class SchemeCheck:
    """Numerical admissibility report for a scaling scheme over a probe set of n."""

    ns: list[int]
    admissible: list[bool]
    errors: list[str]
    amplitude: list[float] = field(default_factory=list)
    drift_error: list[float] = field(default_factory=list)
    variance_error: list[float] = field(default_factory=list)
    min_rate: list[float] = field(default_factory=list)

    @property
    def converging(self) -> bool:
        """Amplitudes shrink and moment errors do not grow along admissible n."""
        ok = [i for i, flag in enumerate(self.admissible) if flag]
        if len(ok) < 2:
            return False
        amp = [self.amplitude[i] for i in ok]
        d = [self.drift_error[i] for i in ok]
        v = [self.variance_error[i] for i in ok]
        shrinking = all(x > y for x, y in zip(amp, amp[1:]))
        tol = 1e-9
        return (shrinking
                and all(y <= x + tol for x, y in zip(d, d[1:]))
                and all(y <= x + tol for x, y in zip(v, v[1:])))

    @property
    def ok(self) -> bool:
        return bool(self.admissible and self.admissible[-1] and self.converging)

    def smallest_admissible(self) -> int | None:
        for n, flag in zip(self.ns, self.admissible):
            if flag:
                return n
        return None


def check_scheme(spec: NetworkSpec, scheme: Scheme = scale_params,
                 ns: Iterable[int] = (1, 10, 100, 1000, 10000)) -> SchemeCheck:
    """Probe the drift/variance conditions of a scheme at the given n values."""
    ns = sorted(int(n) for n in ns)
    report = SchemeCheck(ns=ns, admissible=[], errors=[])
    c_mu = np.array([c.mu for c in spec.clusters])
    c_s2 = np.array([c.sigma2 for c in spec.clusters])
    for n in ns:
        try:
            p = scheme(spec, n)
        except NegativeRate as exc:
            report.admissible.append(False)
            report.errors.append(str(exc))
            for lst in (report.amplitude, report.drift_error, report.variance_error, report.min_rate):
                lst.append(float("nan"))
            continue
        mom = stein_moments(p)
        d_err = np.concatenate([mom.mu - spec.mu, mom.mu_cluster - c_mu])
        v_err = np.concatenate([mom.sigma2 - spec.sigma2, mom.sigma2_cluster - c_s2])
        rates = np.concatenate([p.alpha, p.beta, p.lam, p.omega])
        report.admissible.append(True)
        report.errors.append("")
        report.amplitude.append(float(max(p.a, -p.b)))
        report.drift_error.append(float(np.max(np.abs(d_err))) if d_err.size else 0.0)
        report.variance_error.append(float(np.max(np.abs(v_err))) if v_err.size else 0.0)
        report.min_rate.append(float(rates.min()) if rates.size else 0.0)
    return report
