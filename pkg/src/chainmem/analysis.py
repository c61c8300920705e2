"""Convergence certificates, tau scans, transit times and decay fits."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, DomainError, NumericalError
from .hamiltonian import ChainSpec
from .propagator import ChainEvolver, SectorContraction
from .protocol import ProtocolSchedule, TrajectoryRecord, _Engine, _check_input, format_float
from .sectors import SiteLayout, split_by_region

CONDITION_TOL = 1e-10
DEGENERATE_RHO = 1.0 - 1e-8
GELFAND_TOL = 1e-6


class BoundaryWarning(UserWarning):
    """An argmax landed on the edge of the sampled window."""


def _as_matrix(T) -> np.ndarray:
    mat = T.matrix if isinstance(T, SectorContraction) else np.asarray(T, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DomainError(f"spectral radius needs a square matrix, got shape {mat.shape}")
    return mat


def gelfand_estimate(T, k_max: int = 10) -> float:
    """``||T^(2^k)||^(1/2^k)`` at ``k = k_max``, by rescaled repeated squaring."""
    mat = _as_matrix(T)
    if mat.shape[0] == 0:
        return 0.0
    log_scale = 0.0
    power = mat.copy()
    for _ in range(k_max):
        power = power @ power
        log_scale *= 2.0
        size = np.linalg.norm(power, 2)
        if size == 0.0:
            return 0.0
        power /= size
        log_scale += np.log(size)
    return float(np.exp(log_scale / 2.0**k_max))


def spectral_radius(T) -> float:
    """Largest eigenvalue modulus of a (generally non-normal) square matrix."""
    mat = _as_matrix(T)
    if mat.shape[0] == 0:
        return 0.0
    try:
        return float(np.max(np.abs(np.linalg.eigvals(mat))))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}", fallback=gelfand_estimate(mat)) from exc


@dataclass(frozen=True)
class RadiusCertificate:
    rho: float
    gelfand: float
    flagged: bool  # eigenvalue and Gelfand values disagree by more than GELFAND_TOL


def certify_radius(T, k_max: int = 10, tol: float = GELFAND_TOL) -> RadiusCertificate:
    rho = spectral_radius(T)
    gelfand = gelfand_estimate(T, k_max)
    return RadiusCertificate(rho, gelfand, abs(rho - gelfand) > tol)


@dataclass(frozen=True)
class SectorCondition:
    n: int
    violated: bool
    worst_b_weight: float
    offending_eigenvalue: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "violated": self.violated,
            "worst_b_weight": self.worst_b_weight,
            "offending_eigenvalue": self.offending_eigenvalue,
        }


@dataclass(frozen=True)
class ConditionReport:
    tol: float
    sectors: tuple

    @property
    def violated(self) -> bool:
        return any(s.violated for s in self.sectors)

    def sector(self, n: int) -> SectorCondition:
        for s in self.sectors:
            if s.n == n:
                return s
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {"tol": self.tol, "any_violated": self.violated, "sectors": [s.to_dict() for s in self.sectors]}


def _eigen_clusters(evals: np.ndarray, tol: float):
    scale = max(1.0, float(np.max(np.abs(evals)))) if evals.size else 1.0
    start = 0
    for k in range(1, evals.size + 1):
        if k == evals.size or evals[k] - evals[k - 1] > tol * scale:
            yield start, k
            start = k


def check_condition(spec: ChainSpec, n: int, tol: float = CONDITION_TOL, evolver: ChainEvolver | None = None,
                    degeneracy_tol: float = 1e-9) -> SectorCondition:
    """Look for an eigenstate of ``H_n`` with Bob's block empty.

    Degenerate eigenvalues are grouped first: a factorizing vector may be a
    combination of eigenvectors even when no computed eigenvector is one.
    For an eigenspace with orthonormal columns ``V``, the smallest Bob weight
    over its unit vectors is ``sigma_min(V[bob_occupied])^2``.
    """
    if n < 1 or n > spec.n_sites:
        raise DomainError(f"sector {n} outside [1, {spec.n_sites}]")
    evolver = evolver or ChainEvolver(spec)
    spectrum = evolver.spectrum(n)
    split = split_by_region(spectrum.basis, spec.layout.bob_sites)
    occupied = np.setdiff1d(np.arange(spectrum.basis.dim), split.empty)
    worst, worst_energy = np.inf, None
    for lo, hi in _eigen_clusters(spectrum.eigenvalues, degeneracy_tol):
        block = spectrum.eigenvectors[np.ix_(occupied, np.arange(lo, hi))]
        if block.shape[0] < block.shape[1]:
            weight = 0.0
        else:
            weight = float(np.linalg.svd(block, compute_uv=False)[-1] ** 2)
        if weight < worst:
            worst, worst_energy = weight, float(np.mean(spectrum.eigenvalues[lo:hi]))
    violated = bool(worst < tol)
    return SectorCondition(n, violated, float(min(worst, 1.0)), worst_energy if violated else None)


def condition_report(spec: ChainSpec, sectors=None, tol: float = CONDITION_TOL,
                     evolver: ChainEvolver | None = None) -> ConditionReport:
    evolver = evolver or ChainEvolver(spec)
    sectors = range(1, spec.n_sites + 1) if sectors is None else sectors
    return ConditionReport(tol, tuple(check_condition(spec, n, tol, evolver) for n in sectors))


@dataclass(frozen=True)
class TauScan:
    n: int
    taus: np.ndarray
    rho: np.ndarray
    flags: np.ndarray

    def unflagged(self) -> np.ndarray:
        return self.taus[~self.flags]

    def to_csv(self, fh=None):
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tau_or_step", "value", "flag"])
        for t, r, f in zip(self.taus, self.rho, self.flags):
            writer.writerow([format_float(t), format_float(r), int(f)])
        return buf.getvalue() if fh is None else None


def scan_tau(spec: ChainSpec, n: int, tau_grid, evolver: ChainEvolver | None = None) -> TauScan:
    """Spectral radius of ``T_n(tau)`` over a grid; flags near-unit values."""
    taus = np.asarray(tau_grid, dtype=float).reshape(-1)
    if taus.size == 0:
        raise DomainError("tau grid is empty")
    if np.any(taus <= 0) or not np.all(np.isfinite(taus)):
        raise DomainError("tau grid must be positive and finite")
    evolver = evolver or ChainEvolver(spec)
    rho = np.array([spectral_radius(evolver.contraction(n, t)) for t in taus])
    return TauScan(n, taus, rho, rho >= DEGENERATE_RHO)


def common_unflagged(scans) -> np.ndarray:
    """Taus left unflagged in every sector scan (all scans share one grid)."""
    scans = list(scans)
    mask = np.ones_like(scans[0].flags, dtype=bool)
    for s in scans:
        if not np.array_equal(s.taus, scans[0].taus):
            raise DomainError("scans use different tau grids")
        mask &= ~s.flags
    return scans[0].taus[mask]


def arrival_curve(spec: ChainSpec, times, evolver: ChainEvolver | None = None) -> np.ndarray:
    """Bob-block occupation after a single excitation starts on site 0."""
    evolver = evolver or ChainEvolver(spec)
    spectrum = evolver.spectrum(1)
    v = spectrum.eigenvectors
    overlap = v.conj()[0]  # <E_k|site 0>
    phases = np.exp(-1j * np.outer(spectrum.eigenvalues, np.asarray(times, dtype=float)))
    bob = v[list(spec.layout.bob_sites)]  # single-excitation index == site
    amps = bob @ (phases * overlap[:, None])
    return np.sum(np.abs(amps) ** 2, axis=0)


def estimate_Te(spec: ChainSpec, t_max: float, dt: float, evolver: ChainEvolver | None = None) -> float:
    """Time of peak Bob occupation for an excitation launched at site 0."""
    if not t_max > 0 or not dt > 0:
        raise DomainError("t_max and dt must be positive")
    count = int(np.floor(t_max / dt + 1e-9))
    if count < 1:
        raise DomainError("grid has no points in (0, t_max]")
    times = dt * np.arange(1, count + 1)
    occ = arrival_curve(spec, times, evolver)
    if np.max(occ) < 1e-12:
        raise AnalysisError("excitation never reaches Bob's block (disconnected chain?)")
    k = int(np.argmax(occ))
    if k == count - 1:
        warnings.warn("transit-time argmax at the end of the window; increase t_max", BoundaryWarning, stacklevel=2)
    return float(times[k])


@dataclass(frozen=True)
class TimescaleModel:
    transit_time: float
    rate: float
    model_rate: float
    n_a: int
    n_sites: int
    n_b: int
    points: int = field(default=0)

    def time_to_fidelity(self, fidelity: float) -> float:
        """Large-N estimate ``N T_e (ln N_A + |ln(1 - F)|) / N_B``."""
        if not 0 <= fidelity < 1:
            raise DomainError("fidelity must lie in [0, 1)")
        return self.n_sites * self.transit_time * (np.log(self.n_a) + abs(np.log1p(-fidelity))) / self.n_b

    def fidelity_lower_bound(self, step: int) -> float:
        """``1 - (1 - N_B/N)^j N_A`` (may be negative for small ``j``)."""
        return 1.0 - self.model_rate**step * self.n_a

    def expected_excitations(self, step: int) -> float:
        return self.model_rate**step * self.n_a

    def to_dict(self) -> dict:
        return {
            "transit_time": self.transit_time,
            "fitted_rate": self.rate,
            "model_rate": self.model_rate,
            "n_a": self.n_a,
            "n_sites": self.n_sites,
            "n_b": self.n_b,
            "points": self.points,
        }


def fit_decay(record: TrajectoryRecord, layout: SiteLayout, transit_time: float | None = None) -> TimescaleModel:
    """Least-squares geometric rate of the A+C excitation count after each swap.

    Only the leading run of strictly positive values is used. ``transit_time``
    defaults to the mean swap interval of the record.
    """
    steps = record.steps.astype(float)
    values = record.chain_excitations
    positive = values > 0
    stop = int(np.argmin(positive)) if not np.all(positive) else values.size
    if stop < 2:
        raise AnalysisError("need at least two positive excitation counts to fit a rate")
    slope, _ = np.polyfit(steps[:stop], np.log(values[:stop]), 1)
    rate = float(np.exp(slope))
    if not 0 < rate < 1:
        raise AnalysisError(f"fitted rate {rate:.6g} shows no decay")
    te = float(np.mean(record.taus)) if transit_time is None else float(transit_time)
    if not te > 0:
        raise DomainError("transit time must be positive")
    return TimescaleModel(te, rate, 1.0 - layout.n_b / layout.n_sites, layout.n_a, layout.n_sites, layout.n_b, stop)


def optimize_schedule(spec: ChainSpec, steps: int, tau_window, grid_points: int, psi="all_up",
                      evolver: ChainEvolver | None = None) -> ProtocolSchedule:
    """Greedy swap times: each step picks the grid tau maximizing Bob's expected occupancy.

    Ties go to the smallest tau. The default input is Alice's all-up state.
    """
    lo, hi = (float(x) for x in tau_window)
    if not lo > 0 or hi < lo:
        raise DomainError(f"invalid tau window [{lo}, {hi}]")
    if grid_points < 2:
        raise DomainError("need at least two grid points")
    if steps < 1:
        raise DomainError("need at least one step")
    if hi == lo:
        return ProtocolSchedule.uniform(lo, steps)
    grid = np.linspace(lo, hi, int(grid_points))
    psi = _check_input(spec.layout, psi)
    engine = _Engine(spec, psi[:, None], evolver)
    taus = []
    for _ in range(steps):
        occ = np.array([engine.b_occupancy(t)[0] for t in grid])
        tau = float(grid[int(np.argmax(occ))])
        engine.step(tau)
        taus.append(tau)
    return ProtocolSchedule(tuple(taus))


def default_tau_window(spec: ChainSpec, evolver: ChainEvolver | None = None, lower_fraction: float = 0.05):
    """Greedy search window ``[lower_fraction * T_e, T_e]`` and ``T_e`` itself.

    ``T_e`` is sampled over ``(0, N / mean|J|]`` at resolution ``0.01 / mean|J|``.
    """
    scale = float(np.mean(np.abs(spec.couplings)))
    if scale == 0:
        raise AnalysisError("chain has no couplings")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        te = estimate_Te(spec, spec.n_sites / scale, 0.01 / scale, evolver)
    return (lower_fraction * te, te), te
