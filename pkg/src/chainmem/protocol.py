"""Exact swap-and-evolve protocol on the chain plus memory registers.

The joint chain+memory state is stored in blocks keyed by
``(memory_key, chain_excitations)``. A block holds chain amplitudes over the
full-chain sector basis with Bob's block empty. A free-evolution step
multiplies every block by ``U_m(tau)``. The swap with register ``M_i`` then
moves each Bob occupation pattern into memory bits
``[(i - 1) * n_b, i * n_b)`` and resets Bob to all-down. Memory registers
never evolve.

Memory keys are tuples of the set memory bits in descending order, so tuple
comparison matches integer comparison of the memory bit pattern. They stay
short (at most ``n_a`` entries) however many registers are used.

Once the chain is empty it only picks up the vacuum phase ``exp(-i E_0 tau)``,
common to all such components. Chain-vacuum amplitudes therefore live in an
append-only store with one lazily applied phase. This keeps a step's cost
independent of how many registers have been filled.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResourceError
from .hamiltonian import ChainSpec
from .propagator import ChainEvolver
from .sectors import SiteLayout, popcount, region_pattern

MAX_AMPLITUDES = 10_000_000
MAX_SURVIVAL_DIM = 4096
NORM_TOL = 1e-9


def memory_key_to_int(key) -> int:
    out = 0
    for bit in key:
        out |= 1 << bit
    return out


def memory_key_from_int(pattern: int) -> tuple:
    bits = []
    k = 0
    while pattern:
        if pattern & 1:
            bits.append(k)
        pattern >>= 1
        k += 1
    return tuple(reversed(bits))


@dataclass(frozen=True)
class ProtocolSchedule:
    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in np.atleast_1d(self.taus))
        if not taus:
            raise DomainError("schedule needs at least one step")
        if not all(np.isfinite(t) and t > 0 for t in taus):
            raise DomainError("swap intervals must be positive and finite")
        object.__setattr__(self, "taus", taus)

    @classmethod
    def uniform(cls, tau: float, steps: int) -> "ProtocolSchedule":
        if steps < 1:
            raise DomainError("schedule needs at least one step")
        return cls((float(tau),) * int(steps))

    @property
    def steps(self) -> int:
        return len(self.taus)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.taus)) == 1

    def elapsed(self) -> np.ndarray:
        """Time at each swap."""
        return np.cumsum(self.taus)


def alice_state(layout: SiteLayout, spec) -> np.ndarray:
    """Alice input vector over ``2**n_a`` patterns.

    ``spec`` is ``"all_up"``, ``"plus_state"``, ``"vacuum"``, an integer
    pattern, or an explicit amplitude vector.
    """
    dim = 1 << layout.n_a
    if isinstance(spec, str):
        psi = np.zeros(dim, dtype=complex)
        if spec == "all_up":
            psi[dim - 1] = 1.0
        elif spec == "plus_state":
            psi[:] = dim**-0.5
        elif spec == "vacuum":
            psi[0] = 1.0
        else:
            raise DomainError(f"unknown input preset {spec!r}")
        return psi
    if isinstance(spec, (int, np.integer)):
        if not 0 <= spec < dim:
            raise DomainError(f"pattern {spec} outside Alice's {layout.n_a} sites")
        psi = np.zeros(dim, dtype=complex)
        psi[spec] = 1.0
        return psi
    psi = np.asarray(spec, dtype=complex).reshape(-1)
    if psi.shape != (dim,):
        raise DomainError(f"input must have {dim} amplitudes, got {psi.size}")
    return psi


@dataclass
class JointState:
    """Chain+memory state after ``step`` swaps for one input vector.

    ``blocks[(memory_key, m)]`` is the chain vector over the ``m``-excitation
    sector of the chain. Entries of Bob-occupied states are zero between steps.
    """

    layout: SiteLayout
    step: int
    blocks: dict
    bases: dict = field(repr=False)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(v, v).real for v in self.blocks.values())))

    def excitation_numbers(self) -> set:
        return {m + len(key) for key, m in self.blocks}

    def success_probability(self) -> float:
        return float(sum(np.vdot(v, v).real for (key, m), v in self.blocks.items() if m == 0))

    def memory_state(self) -> dict:
        """Memory amplitudes conditioned on an empty chain (unnormalized).

        This is the finite-step truncation of the asymptotic memory state.
        """
        return {key: complex(v[0]) for (key, m), v in sorted(self.blocks.items()) if m == 0}

    def amplitudes(self):
        """Yield ``(global_index, amplitude)``; chain sites are the low bits."""
        n = self.layout.n_sites
        for (key, m), v in self.blocks.items():
            states = self.bases[m].states
            high = memory_key_to_int(key) << n
            for k in np.flatnonzero(v):
                yield high | int(states[k]), complex(v[k])

    def dense(self) -> np.ndarray:
        """Full state vector over ``2**(N + step * n_b)`` amplitudes (small cases only)."""
        total = self.layout.n_sites + self.step * self.layout.n_b
        if total > 24:
            raise ResourceError("dense joint state too large")
        out = np.zeros(1 << total, dtype=complex)
        for idx, amp in self.amplitudes():
            out[idx] += amp
        return out


@dataclass(frozen=True)
class StepRecord:
    step: int
    tau: float
    success_prob: float
    fidelity_bound: float
    occupation: tuple  # P_1 .. P_{n_a}
    chain_excitations: float
    b_occupancy: float


@dataclass
class TrajectoryRecord:
    n_a: int
    rows: list = field(default_factory=list)

    def _column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def steps(self) -> np.ndarray:
        return self._column("step")

    @property
    def taus(self) -> np.ndarray:
        return self._column("tau")

    @property
    def success_prob(self) -> np.ndarray:
        return self._column("success_prob")

    @property
    def fidelity_bound(self) -> np.ndarray:
        return self._column("fidelity_bound")

    @property
    def chain_excitations(self) -> np.ndarray:
        return self._column("chain_excitations")

    @property
    def b_occupancy(self) -> np.ndarray:
        return self._column("b_occupancy")

    def occupation(self, n: int) -> np.ndarray:
        """``P_n`` per step: probability of at least ``n`` excitations in A+C."""
        if n < 1:
            raise DomainError("occupation index starts at 1")
        if n > self.n_a:
            return np.zeros(len(self.rows))
        return np.array([r.occupation[n - 1] for r in self.rows])

    def header(self) -> list:
        return (
            ["step", "tau_i", "success_prob", "fidelity_bound"]
            + [f"P_{n}" for n in range(1, self.n_a + 1)]
            + ["chain_excitation_expectation", "B_occupancy_before_swap"]
        )

    def to_csv(self, fh=None):
        """Write CSV to ``fh``, or return it as a string when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for r in self.rows:
            values = [r.tau, r.success_prob, r.fidelity_bound, *r.occupation, r.chain_excitations, r.b_occupancy]
            writer.writerow([r.step] + [format_float(v) for v in values])
        return buf.getvalue() if fh is None else None


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


class _Engine:
    """Block-sparse propagation of several input columns at once.

    ``columns`` has one row per Alice pattern and one column per tracked
    input; the identity propagates every basis input.
    """

    def __init__(self, spec: ChainSpec, columns: np.ndarray, evolver: ChainEvolver | None = None):
        self.spec = spec
        self.layout = spec.layout
        self.evolver = evolver or ChainEvolver(spec)
        self.n_b = self.layout.n_b
        self.step_count = 0
        self._splits = {}
        self._occupied_rows = {}
        columns = np.asarray(columns, dtype=complex)
        self.width = columns.shape[1]
        self.excited = {}
        # Vacuum store: actual row = stored row * vacuum_phase.
        self.vacuum_keys = []
        self.vacuum_rows = []
        self.vacuum_step = []  # step count at which each row arrived
        self.vacuum_phase = 1.0 + 0.0j
        self._unitaries = {}
        for x in range(columns.shape[0]):
            if not np.any(columns[x]):
                continue
            m = popcount(x)
            if m == 0:
                self._store_vacuum((), columns[x])
                continue
            key = ((), m)
            if key not in self.excited:
                self.excited[key] = np.zeros((self.evolver.basis(m).dim, self.width), dtype=complex)
            self.excited[key][self.evolver.basis(m).index(x)] = columns[x]
        self._guard()

    def _store_vacuum(self, key, row):
        self.vacuum_keys.append(key)
        self.vacuum_rows.append(row / self.vacuum_phase)
        self.vacuum_step.append(self.step_count)

    def _unitary(self, m: int, tau: float) -> np.ndarray:
        key = (m, tau)
        mat = self._unitaries.get(key)
        if mat is None:
            mat = self._unitaries[key] = self.evolver.unitary(m, tau).matrix
        return mat

    @property
    def gram(self) -> np.ndarray:
        """``K^dagger K`` of the current transfer map (phase-independent)."""
        if not self.vacuum_rows:
            return np.zeros((self.width, self.width), dtype=complex)
        rows = np.asarray(self.vacuum_rows)
        return rows.conj().T @ rows

    def gram_history(self) -> np.ndarray:
        """``K_j^dagger K_j`` after every completed step ``j = 1 .. step_count``."""
        out = np.zeros((self.step_count + 1, self.width, self.width), dtype=complex)
        if self.vacuum_rows:
            rows = np.asarray(self.vacuum_rows)
            outer = rows.conj()[:, :, None] * rows[:, None, :]
            np.add.at(out, np.asarray(self.vacuum_step), outer)
        return np.cumsum(out, axis=0)[1:]

    def bases(self) -> dict:
        ms = {m for _, m in self.excited} | {0}
        return {m: self.evolver.basis(m) for m in ms}

    def _split(self, m: int):
        """Bob-pattern groups of sector ``m``: ``(new_bits, weight, src, dst)``.

        ``new_bits`` are the Bob sites' offsets within a register, descending.
        """
        if m not in self._splits:
            basis = self.evolver.basis(m)
            keys = region_pattern(basis.states, self.layout.bob_sites)
            groups = []
            for b in np.unique(keys):
                b = int(b)
                src = np.flatnonzero(keys == b)
                w = popcount(b)
                cleared = basis.states[src] & ~self.layout.bob_mask
                dst = self.evolver.basis(m - w).indices(cleared)
                offsets = tuple(k for k in reversed(range(self.n_b)) if b >> k & 1)
                groups.append((offsets, w, src, dst))
            self._splits[m] = groups
        return self._splits[m]

    def _occupied(self, m: int) -> np.ndarray:
        rows = self._occupied_rows.get(m)
        if rows is None:
            parts = [src for offsets, w, src, dst in self._split(m) if w]
            rows = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
            self._occupied_rows[m] = rows
        return rows

    def amplitude_count(self) -> int:
        return sum(v.size for v in self.excited.values()) + len(self.vacuum_rows) * self.width

    def _guard(self):
        total = self.amplitude_count()
        if total > MAX_AMPLITUDES:
            raise ResourceError(
                f"exact simulation needs {total} amplitudes (cap {MAX_AMPLITUDES}); "
                "use survival-bound mode instead"
            )

    def b_occupancy(self, tau: float) -> np.ndarray:
        """Expected Bob excitations per column after evolving by ``tau`` (no swap)."""
        occ = np.zeros(self.width)
        for (key, m), block in self.excited.items():
            evolved = self._unitary(m, tau) @ block
            for offsets, w, src, dst in self._split(m):
                if w:
                    occ += w * np.sum(np.abs(evolved[src]) ** 2, axis=0)
        return occ

    def step(self, tau: float, track=None) -> float:
        """Evolve and swap into the next register.

        Returns the expected Bob occupancy just before the swap for the
        combination ``track`` of the columns, or 0 when not given.
        """
        shift = self.step_count * self.n_b
        occ = 0.0
        vac_phase = complex(self._unitary(0, tau)[0, 0])
        new_excited = {}
        fresh_vacuum = []
        for (key, m), block in self.excited.items():
            evolved = self._unitary(m, tau) @ block
            for offsets, w, src, dst in self._split(m):
                if not w:
                    continue
                part = evolved[src]
                if not part.any():
                    continue
                if track is not None:
                    v = part @ track
                    occ += w * np.vdot(v, v).real
                new_key = tuple(shift + o for o in offsets) + key
                if m == w:
                    fresh_vacuum.append((new_key, part[0]))
                    continue
                target = new_excited.get((new_key, m - w))
                if target is None:
                    target = np.zeros((self.evolver.basis(m - w).dim, self.width), dtype=complex)
                    new_excited[(new_key, m - w)] = target
                target[dst] += part
            # Bob-empty part keeps its key and sector: zero the occupied rows in place.
            occupied = self._occupied(m)
            if occupied.size:
                evolved[occupied] = 0.0
            if evolved.any():
                new_excited[(key, m)] = evolved
        self.vacuum_phase *= vac_phase
        self.step_count += 1
        for key, row in fresh_vacuum:
            self._store_vacuum(key, row)
        self.excited = new_excited
        self._guard()
        return occ

    def vacuum_matrix(self):
        """Sorted memory keys and the chain-vacuum amplitude rows."""
        if not self.vacuum_keys:
            return (), np.zeros((0, self.width), dtype=complex)
        order = sorted(range(len(self.vacuum_keys)), key=self.vacuum_keys.__getitem__)
        rows = np.vstack([self.vacuum_rows[i] for i in order]) * self.vacuum_phase
        return tuple(self.vacuum_keys[i] for i in order), rows

    def blocks_for(self, psi) -> dict:
        """Per-block vectors of the input combination ``psi``."""
        blocks = {key: block @ psi for key, block in self.excited.items()}
        keys, rows = self.vacuum_matrix()
        for key, amp in zip(keys, rows @ psi):
            blocks[(key, 0)] = np.array([amp])
        return {key: v for key, v in blocks.items() if np.any(v)}


@dataclass(frozen=True)
class TransferMap:
    """Memory component of ``W_j |x, 0, 0, 0>`` with the chain projected on vacuum.

    ``matrix[r, x]`` is the amplitude on memory key ``patterns[r]`` for Alice
    basis input ``x``. Memory patterns that never appear are omitted (their
    rows are zero).
    """

    step: int
    n_a: int
    n_b: int
    patterns: tuple
    matrix: np.ndarray = field(repr=False)

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrix, axis=0)

    def apply(self, psi) -> dict:
        out = self.matrix @ np.asarray(psi, dtype=complex)
        return dict(zip(self.patterns, out))

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "memory_bits": self.step * self.n_b,
            "patterns": [list(p) for p in self.patterns],
            "columns": [
                [[float(z.real), float(z.imag)] for z in self.matrix[:, x]] for x in range(self.matrix.shape[1])
            ],
        }


@dataclass(frozen=True)
class RecoveryMetrics:
    singular_values: np.ndarray
    worst_case_fidelity_bound: float
    decoder: np.ndarray = field(repr=False)  # polar isometry, same shape as K
    positive_factor: np.ndarray = field(repr=False)

    def input_fidelity_bound(self, psi) -> float:
        """Fidelity lower bound ``<psi|P|psi>^2`` for one normalized input."""
        return _psd_fidelity(self.positive_factor, psi)

    def to_dict(self) -> dict:
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "worst_case_fidelity_bound": self.worst_case_fidelity_bound,
        }


def _psd_fidelity(positive, psi) -> float:
    psi = np.asarray(psi, dtype=complex)
    return _clip01(np.vdot(psi, positive @ psi).real ** 2)


def _transfer_from_engine(engine: _Engine) -> TransferMap:
    keys, rows = engine.vacuum_matrix()
    lay = engine.layout
    return TransferMap(engine.step_count, lay.n_a, lay.n_b, keys, rows)


def recovery_metrics(K: TransferMap) -> RecoveryMetrics:
    """SVD and polar decoder of the finite-step transfer map.

    The decoder is the isometry factor ``V`` of ``K = V P``; Bob undoes it on
    the memory. Every normalized input then decodes with fidelity at least
    ``<psi|P|psi>^2 >= sigma_min^2``.
    """
    mat = K.matrix
    cols = mat.shape[1]
    if mat.shape[0] == 0:
        zero = np.zeros((0, cols), dtype=complex)
        return RecoveryMetrics(np.zeros(cols), 0.0, zero, np.zeros((cols, cols), dtype=complex))
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    decoder = u @ vh
    positive = (vh.conj().T * s) @ vh
    sv = np.zeros(cols)
    sv[: s.size] = s
    sv = np.sort(sv)[::-1]
    return RecoveryMetrics(sv, _clip01(sv[-1] ** 2), decoder, positive)


def _check_input(layout: SiteLayout, psi) -> np.ndarray:
    psi = alice_state(layout, psi)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > NORM_TOL:
        raise DomainError(f"input state has norm {norm:.12g}; normalize it first")
    return psi


def _run(spec: ChainSpec, schedule: ProtocolSchedule, psi, evolver: ChainEvolver | None):
    layout = spec.layout
    psi = _check_input(layout, psi)
    engine = _Engine(spec, np.eye(1 << layout.n_a, dtype=complex), evolver)
    steps = schedule.steps
    excited = np.zeros((steps, layout.n_a + 1))  # probabilities of m >= 1 chain excitations
    b_occupancy = np.zeros(steps)
    for i, tau in enumerate(schedule.taus):
        b_occupancy[i] = engine.step(tau, track=psi)
        for (key, m), block in engine.excited.items():
            v = block @ psi
            excited[i, m] += np.vdot(v, v).real
    grams = engine.gram_history()
    probs = excited
    probs[:, 0] = np.einsum("i,sij,j->s", psi.conj(), grams, psi).real
    evals, evecs = np.linalg.eigh(grams)
    roots = np.sqrt(np.clip(evals, 0.0, None))
    overlaps = np.abs(np.einsum("i,sik->sk", psi.conj(), evecs)) ** 2
    fidelity = np.einsum("sk,sk->s", overlaps, roots) ** 2
    tail = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]  # tail[:, n] = P(chain >= n)
    chain = probs @ np.arange(layout.n_a + 1)
    record = TrajectoryRecord(layout.n_a)
    for i, tau in enumerate(schedule.taus):
        record.rows.append(
            StepRecord(
                step=i + 1,
                tau=tau,
                success_prob=_clip01(probs[i, 0]),
                fidelity_bound=_clip01(fidelity[i]),
                occupation=tuple(_clip01(tail[i, n]) for n in range(1, layout.n_a + 1)),
                chain_excitations=float(chain[i]),
                b_occupancy=float(b_occupancy[i]),
            )
        )
    state = JointState(layout, engine.step_count, engine.blocks_for(psi), engine.bases())
    return engine, state, record


def simulate(spec: ChainSpec, schedule: ProtocolSchedule, psi, evolver: ChainEvolver | None = None):
    """Run the protocol on Alice input ``psi``; return ``(JointState, TrajectoryRecord)``.

    All ``2**n_a`` basis inputs are propagated together so that the transfer
    map, and with it the decoded-fidelity bound, is known at every step.
    """
    _, state, record = _run(spec, schedule, psi, evolver)
    return state, record


def run_protocol(spec: ChainSpec, schedule: ProtocolSchedule, psi, evolver: ChainEvolver | None = None):
    """:func:`simulate` plus the final :class:`TransferMap` from the same run."""
    engine, state, record = _run(spec, schedule, psi, evolver)
    return state, record, _transfer_from_engine(engine)


def transfer_map(spec: ChainSpec, schedule: ProtocolSchedule, evolver: ChainEvolver | None = None) -> TransferMap:
    engine = _Engine(spec, np.eye(1 << spec.layout.n_a, dtype=complex), evolver)
    for tau in schedule.taus:
        engine.step(tau)
    return _transfer_from_engine(engine)


def eta_direct(spec: ChainSpec, tau: float, j: int, evolver: ChainEvolver | None = None) -> float:
    """Closed-form single-qubit recovery after one or two swaps.

    Uses the single-excitation propagator only: the basis index of an
    excitation on site ``k`` is ``k`` and Bob is the last site.
    """
    lay = spec.layout
    if lay.n_a != 1 or lay.n_b != 1:
        raise DomainError("closed forms need n_a = n_b = 1")
    if j not in (1, 2):
        raise DomainError("closed forms exist for j = 1 and j = 2 only")
    evolver = evolver or ChainEvolver(spec)
    u = evolver.unitary(1, tau).matrix
    last = lay.n_sites - 1
    eta1 = abs(u[last, 0]) ** 2
    if j == 1:
        return float(eta1)
    path = np.dot(u[last, :last], u[:last, 0])
    return float(eta1 + abs(path) ** 2)


def _contraction_matrix(spec, tau, n, evolver):
    if evolver.basis(n).dim > MAX_SURVIVAL_DIM:
        raise ResourceError(f"sector {n} too large for survival bounds")
    return evolver.contraction(n, tau).matrix


def _q(power: np.ndarray) -> float:
    return min(1.0, float(np.linalg.norm(power, 2)) ** 2)


def survival_curve(spec: ChainSpec, tau: float, n: int, j_max: int, evolver: ChainEvolver | None = None) -> np.ndarray:
    """``Q_n(j) = ||T_n^j||_2^2`` for ``j = 0 .. j_max`` by repeated multiplication."""
    if n < 0:
        raise DomainError("excitation number must be nonnegative")
    if n == 0:
        return np.ones(j_max + 1)
    evolver = evolver or ChainEvolver(spec)
    T = _contraction_matrix(spec, tau, n, evolver)
    out = np.zeros(j_max + 1)
    if T.shape[0] == 0:
        return out
    power = np.eye(T.shape[0], dtype=complex)
    out[0] = 1.0
    for j in range(1, j_max + 1):
        power = T @ power
        out[j] = _q(power)
    return out


def survival_bound(spec: ChainSpec, tau: float, n: int, j: int, evolver: ChainEvolver | None = None) -> float:
    """Largest probability that an ``n``-excitation A+C state keeps all of them for ``j`` steps."""
    if j < 0:
        raise DomainError("step count must be nonnegative")
    if n < 0:
        raise DomainError("excitation number must be nonnegative")
    if n == 0:
        return 1.0
    evolver = evolver or ChainEvolver(spec)
    T = _contraction_matrix(spec, tau, n, evolver)
    if T.shape[0] == 0:
        return 0.0
    if j == 0:
        return 1.0
    return _q(np.linalg.matrix_power(T, j))


def steps_to_survival(spec: ChainSpec, tau: float, n: int, threshold: float, j_max: int = 10_000_000,
                      evolver: ChainEvolver | None = None) -> int:
    """Smallest ``j`` with ``Q_n(j) <= threshold``.

    ``Q_n`` is nonincreasing in ``j``, so the search doubles ``j`` until the
    threshold is crossed and then bisects, using binary powering throughout.
    """
    if n == 0:
        raise DomainError("Q_0 is identically 1")
    evolver = evolver or ChainEvolver(spec)
    T = _contraction_matrix(spec, tau, n, evolver)
    if T.shape[0] == 0 or threshold >= 1.0:
        return 0
    hi = 1
    while _q(np.linalg.matrix_power(T, hi)) > threshold:
        if hi >= j_max:
            raise DomainError(f"Q_{n} stays above {threshold} for {j_max} steps")
        hi = min(2 * hi, j_max)
    lo = hi // 2  # Q(lo) > threshold, or lo == 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _q(np.linalg.matrix_power(T, mid)) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi
