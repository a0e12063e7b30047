"""Sparse hybrid Fock/spin register simulation.

States live on an ordered register of modes: photon-number-truncated bosonic
modes and two-level spin qubits.  Amplitudes are stored sparsely as a mapping
``occupation tuple -> complex``, which keeps the cost proportional to the
populated support rather than the full tensor-product dimension.  Modes carry
a ``system``/``environment`` partition tag so that loss channels (fictitious
beamsplitters into fresh vacuum modes) can be traced out late, after all
interference has happened.

Bookkeeping rules enforced throughout:

* unitary operations preserve ``sum |amp|^2`` up to the truncation weight that
  fell above a mode cutoff; that weight is accumulated in ``state.leakage``
  and never silently dropped,
* sub-normalized states are legal and carry their squared norm as branch
  probability (post-selection weights come for free),
* a dense density-matrix path (:func:`to_density_matrix`) exists as a
  verification oracle for registers up to ``DENSE_DIM_CAP``.

Spin convention: qubit level 0 is spin-down, level 1 is spin-up, and
``rot_y(pi/2)`` maps down onto ``(down + up)/sqrt(2)``.  Beamsplitters follow
the minus-sign convention ``a† -> (a† - b†)/sqrt(2)`` at 50:50.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BOSONIC = "bosonic"
QUBIT = "qubit"
SYSTEM = "system"
ENVIRONMENT = "environment"

DOWN, UP = 0, 1

#: Largest dense dimension for which the density-matrix oracle is allowed.
DENSE_DIM_CAP = 4096

#: Default tolerance on the truncated tail of a coherent state.
COHERENT_TAIL_TOL = 1e-8

#: Relative tolerance on norm conservation for unitary operations.
UNITARITY_TOL = 1e-12

_ZERO_CUT = 1e-300  # amplitudes below this are exact-zero as far as float64 goes


class HilbertError(ValueError):
    """Raised on register/contract violations (bad modes, cutoffs, norms)."""


# ---------------------------------------------------------------------------
# Register
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mode:
    """One register slot: a truncated bosonic mode or a spin qubit.

    ``cutoff`` is the largest photon number kept for a bosonic mode (dimension
    ``cutoff + 1``); qubits are always two-dimensional and ignore it.
    """

    label: str
    kind: str = BOSONIC
    cutoff: int = 6
    partition: str = SYSTEM

    def __post_init__(self) -> None:
        if self.kind not in (BOSONIC, QUBIT):
            raise HilbertError(f"unknown mode kind {self.kind!r}")
        if self.partition not in (SYSTEM, ENVIRONMENT):
            raise HilbertError(f"unknown partition {self.partition!r}")
        if self.kind == BOSONIC and self.cutoff < 1:
            raise HilbertError(f"bosonic cutoff must be >= 1, got {self.cutoff}")

    @property
    def dim(self) -> int:
        return 2 if self.kind == QUBIT else self.cutoff + 1


def qubit(label: str, partition: str = SYSTEM) -> Mode:
    return Mode(label, kind=QUBIT, cutoff=1, partition=partition)


def bosonic(label: str, cutoff: int = 6, partition: str = SYSTEM) -> Mode:
    return Mode(label, kind=BOSONIC, cutoff=cutoff, partition=partition)


@dataclass(frozen=True)
class Register:
    """Ordered collection of modes with unique labels."""

    modes: tuple[Mode, ...]

    def __post_init__(self) -> None:
        labels = [m.label for m in self.modes]
        if len(set(labels)) != len(labels):
            raise HilbertError(f"duplicate mode labels in register: {labels}")

    def __len__(self) -> int:
        return len(self.modes)

    def index(self, label: str) -> int:
        for k, m in enumerate(self.modes):
            if m.label == label:
                return k
        raise HilbertError(f"no mode labeled {label!r} in register")

    def mode(self, label: str) -> Mode:
        return self.modes[self.index(label)]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.dim for m in self.modes)

    @property
    def dense_dim(self) -> int:
        d = 1
        for m in self.modes:
            d *= m.dim
        return d

    def extended(self, *new_modes: Mode) -> "Register":
        return Register(self.modes + tuple(new_modes))

    def without(self, indices: Iterable[int]) -> "Register":
        drop = set(indices)
        return Register(tuple(m for k, m in enumerate(self.modes) if k not in drop))

    def partition_indices(self, partition: str) -> tuple[int, ...]:
        return tuple(k for k, m in enumerate(self.modes) if m.partition == partition)


def register(*modes: Mode) -> Register:
    return Register(tuple(modes))


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass
class HybridState:
    """Sparse pure state over a register, possibly sub-normalized.

    ``leakage`` accumulates the probability weight pushed above a cutoff by
    operations on this state (and its ancestors).  Treat instances as
    immutable: operations return new states.
    """

    register: Register
    amps: dict[tuple[int, ...], complex]
    leakage: float = 0.0

    def norm2(self) -> float:
        return float(sum(a.real * a.real + a.imag * a.imag for a in self.amps.values()))

    def normalized(self) -> "HybridState":
        n2 = self.norm2()
        if n2 <= 0.0:
            raise HilbertError("cannot normalize a zero state")
        s = 1.0 / math.sqrt(n2)
        return HybridState(self.register, {k: a * s for k, a in self.amps.items()}, self.leakage)

    def amplitude(self, occupations: Mapping[str, int]) -> complex:
        key = [0] * len(self.register)
        for label, occ in occupations.items():
            key[self.register.index(label)] = occ
        return self.amps.get(tuple(key), 0.0 + 0.0j)

    def dense_vector(self) -> np.ndarray:
        dims = self.register.dims
        dim = self.register.dense_dim
        if dim > DENSE_DIM_CAP:
            raise HilbertError(f"dense dimension {dim} exceeds cap {DENSE_DIM_CAP}")
        vec = np.zeros(dim, dtype=complex)
        for key, amp in self.amps.items():
            vec[int(np.ravel_multi_index(key, dims))] = amp
        return vec

    def map_keys(self, fn: Callable[[tuple[int, ...]], tuple[int, ...]]) -> "HybridState":
        out: dict[tuple[int, ...], complex] = {}
        for key, amp in self.amps.items():
            nk = fn(key)
            out[nk] = out.get(nk, 0.0) + amp
        return HybridState(self.register, out, self.leakage)


@dataclass
class MixedState:
    """Classically weighted ensemble of pure states.

    Weights are probabilities; a total below one encodes post-selection (the
    missing weight was discarded upstream and should be reported by whoever
    discarded it).
    """

    branches: list[tuple[float, HybridState]]

    def __post_init__(self) -> None:
        for w, _ in self.branches:
            if w < -1e-15:
                raise HilbertError(f"negative branch weight {w}")
        if self.total_weight() > 1.0 + 1e-12:
            raise HilbertError(f"ensemble weight {self.total_weight()} exceeds 1")

    def total_weight(self) -> float:
        return float(sum(w for w, _ in self.branches))

    def map(self, fn: Callable[[HybridState], HybridState]) -> "MixedState":
        return MixedState([(w, fn(s)) for w, s in self.branches])

    @property
    def register(self) -> Register:
        return self.branches[0][1].register

    def leakage(self) -> float:
        return float(sum(w * s.leakage for w, s in self.branches))


def as_mixed(state: HybridState | MixedState) -> MixedState:
    if isinstance(state, MixedState):
        return state
    n2 = state.norm2()
    if n2 <= 0.0:
        return MixedState([])
    return MixedState([(n2, state.normalized())])


@dataclass
class DensityMatrix:
    """Dense density matrix used as a verification oracle for small registers."""

    matrix: np.ndarray
    dims: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise HilbertError("density matrix must be square")
        if np.max(np.abs(m - m.conj().T)) > 1e-10:
            raise HilbertError("density matrix is not Hermitian within 1e-10")
        tr = float(m.trace().real)
        if tr > 1.0 + 1e-10:
            raise HilbertError(f"density matrix trace {tr} exceeds 1")
        if float(np.linalg.eigvalsh(m).min()) < -1e-10:
            raise HilbertError("density matrix has negative eigenvalues")
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> float:
        return float(self.matrix.trace().real)

    def purity(self) -> float:
        return float((self.matrix @ self.matrix).trace().real)

    def expectation(self, operator: np.ndarray) -> float:
        return float((self.matrix @ operator).trace().real)


def vacuum(reg: Register) -> HybridState:
    return HybridState(reg, {tuple(0 for _ in reg.modes): 1.0 + 0.0j})


def basis_state(reg: Register, occupations: Mapping[str, int]) -> HybridState:
    key = [0] * len(reg)
    for label, occ in occupations.items():
        mode = reg.mode(label)
        if occ < 0 or occ >= mode.dim:
            raise HilbertError(f"occupation {occ} out of range for {label!r}")
        key[reg.index(label)] = occ
    return HybridState(reg, {tuple(key): 1.0 + 0.0j})


# ---------------------------------------------------------------------------
# Coherent states
# ---------------------------------------------------------------------------


def coherent_amplitudes(alpha: complex, cutoff: int) -> tuple[np.ndarray, float]:
    """Truncated coherent amplitudes ``alpha^n e^{-|alpha|^2/2}/sqrt(n!)``.

    Returns the length ``cutoff+1`` vector and the exact tail weight beyond
    the cutoff.
    """
    n = np.arange(cutoff + 1)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, cutoff + 1)))))
    mag = np.exp(n * math.log(abs(alpha)) - 0.5 * log_fact) if alpha != 0 else (n == 0).astype(float)
    phase = np.exp(1j * n * cmath.phase(alpha)) if alpha != 0 else np.ones(cutoff + 1)
    vec = np.exp(-0.5 * abs(alpha) ** 2) * mag * phase
    tail = max(0.0, 1.0 - float(np.sum(np.abs(vec) ** 2)))
    return vec.astype(complex), tail


def coherent_cutoff(alpha: complex, tol: float = COHERENT_TAIL_TOL, floor: int = 6) -> int:
    """Smallest cutoff >= ``floor`` whose coherent tail is below ``tol``."""
    cut = max(1, floor)
    while True:
        _, tail = coherent_amplitudes(alpha, cut)
        if tail < tol:
            return cut
        cut += 1
        if cut > 512:
            raise HilbertError(f"no acceptable cutoff below 512 for alpha={alpha}")


def prepare_coherent(
    state: HybridState,
    mode: str,
    alpha: complex,
    tail_tol: float = COHERENT_TAIL_TOL,
    allow_tail: bool = False,
    renormalize: bool = False,
) -> tuple[HybridState, float]:
    """Populate a vacuum bosonic mode with a truncated coherent state.

    Returns ``(state, tail_weight)``.  Errors if the mode is non-vacuum or the
    truncated tail exceeds ``tail_tol`` (unless ``allow_tail``).  The state is
    left sub-normalized by the tail unless ``renormalize`` is set.
    """
    idx = state.register.index(mode)
    m = state.register.modes[idx]
    if m.kind != BOSONIC:
        raise HilbertError(f"mode {mode!r} is not bosonic")
    if any(key[idx] != 0 for key in state.amps):
        raise HilbertError(f"mode {mode!r} is not in vacuum")
    vec, tail = coherent_amplitudes(alpha, m.cutoff)
    if tail > tail_tol and not allow_tail:
        raise HilbertError(
            f"coherent tail {tail:.3e} above tolerance {tail_tol:.1e} for "
            f"alpha={alpha}, cutoff={m.cutoff}; raise the cutoff or pass allow_tail"
        )
    if renormalize:
        vec = vec / math.sqrt(1.0 - tail)
    coeffs = [complex(c) for c in vec]
    out: dict[tuple[int, ...], complex] = {}
    for key, amp in state.amps.items():
        for n in range(m.cutoff + 1):
            c = coeffs[n]
            if abs(c) > _ZERO_CUT:
                nk = key[:idx] + (n,) + key[idx + 1 :]
                out[nk] = out.get(nk, 0.0) + amp * c
    new_leak = state.leakage + (0.0 if renormalize else tail * state.norm2())
    return HybridState(state.register, out, new_leak), tail


# ---------------------------------------------------------------------------
# Beamsplitters and loss
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _bs_kernel(t: float, phase: float, n_total: int) -> np.ndarray:
    """Fock-sector transfer matrix W[na, ma] for a two-mode mixer.

    Mode operators transform as ``a† -> sqrt(t) a† - sqrt(1-t) e^{i phase} b†``
    and ``b† -> sqrt(1-t) e^{-i phase} a† + sqrt(t) b†``; photon number is
    conserved so each total-``n`` sector is closed.
    """
    u_aa = math.sqrt(t)
    u_ab = -math.sqrt(1.0 - t) * cmath.exp(1j * phase)
    u_ba = math.sqrt(1.0 - t) * cmath.exp(-1j * phase)
    u_bb = math.sqrt(t)
    n = n_total
    fact = [math.factorial(k) for k in range(n + 1)]
    w = np.zeros((n + 1, n + 1), dtype=complex)
    for na in range(n + 1):
        nb = n - na
        # polynomial in the output a† power from (u_aa x + u_ab)^na (u_ba x + u_bb)^nb
        pa = np.zeros(na + 1, dtype=complex)
        for k in range(na + 1):
            pa[k] = math.comb(na, k) * (u_aa**k) * (u_ab ** (na - k))
        pb = np.zeros(nb + 1, dtype=complex)
        for k in range(nb + 1):
            pb[k] = math.comb(nb, k) * (u_ba**k) * (u_bb ** (nb - k))
        conv = np.convolve(pa, pb)
        for ma in range(n + 1):
            mb = n - ma
            w[na, ma] = conv[ma] * math.sqrt(fact[ma] * fact[mb] / (fact[na] * fact[nb]))
    return w


@lru_cache(maxsize=None)
def _bs_rows(t: float, phase: float, n_total: int) -> tuple[tuple[complex, ...], ...]:
    return tuple(tuple(complex(c) for c in row) for row in _bs_kernel(t, phase, n_total))


def apply_beamsplitter(
    state: HybridState,
    mode_a: str,
    mode_b: str,
    transmissivity: float = 0.5,
    phase: float = 0.0,
) -> HybridState:
    """Mix two bosonic modes; overflow above either cutoff goes to leakage."""
    if mode_a == mode_b:
        raise HilbertError("beamsplitter modes must differ")
    if not 0.0 <= transmissivity <= 1.0:
        raise HilbertError(f"transmissivity {transmissivity} outside [0, 1]")
    reg = state.register
    ia, ib = reg.index(mode_a), reg.index(mode_b)
    ma_, mb_ = reg.modes[ia], reg.modes[ib]
    if ma_.kind != BOSONIC or mb_.kind != BOSONIC:
        raise HilbertError("beamsplitter modes must be bosonic")
    if ma_.cutoff != mb_.cutoff:
        raise HilbertError(f"cutoff mismatch {ma_.cutoff} != {mb_.cutoff}")
    cut = ma_.cutoff

    before = state.norm2()
    out: dict[tuple[int, ...], complex] = {}
    leaked = 0.0
    overflow: dict[tuple[int, ...], complex] = {}
    for key, amp in state.amps.items():
        na, nb = key[ia], key[ib]
        n = na + nb
        if n == 0:
            out[key] = out.get(key, 0.0) + amp
            continue
        row = _bs_rows(float(transmissivity), float(phase), n)[na]
        lk = list(key)
        for m_out in range(n + 1):
            c = row[m_out]
            if abs(c) <= _ZERO_CUT:
                continue
            lk[ia], lk[ib] = m_out, n - m_out
            nk = tuple(lk)
            if m_out > cut or n - m_out > cut:
                overflow[nk] = overflow.get(nk, 0.0) + amp * c
            else:
                out[nk] = out.get(nk, 0.0) + amp * c
    leaked = float(sum(a.real * a.real + a.imag * a.imag for a in overflow.values()))
    out = {k: a for k, a in out.items() if abs(a) > _ZERO_CUT}
    result = HybridState(reg, out, state.leakage + leaked)
    after = result.norm2() + leaked
    if abs(after - before) > UNITARITY_TOL * max(before, 1.0) * 1e2:
        raise HilbertError(f"beamsplitter norm drift {after - before:.3e}")
    return result


_ENV_COUNTER = [0]


def apply_loss(state: HybridState, mode: str, transmission: float) -> HybridState:
    """Lossy channel as a fictitious beamsplitter into a fresh environment mode.

    The environment mode stays in the register (partition ``environment``)
    until :func:`trace_out` removes it.
    """
    if not 0.0 <= transmission <= 1.0:
        raise HilbertError(f"transmission {transmission} outside [0, 1]")
    src = state.register.mode(mode)
    if src.kind != BOSONIC:
        raise HilbertError(f"loss target {mode!r} is not bosonic")
    _ENV_COUNTER[0] += 1
    env = Mode(f"_env{_ENV_COUNTER[0]}_{mode}", BOSONIC, src.cutoff, ENVIRONMENT)
    reg = state.register.extended(env)
    lifted = HybridState(reg, {key + (0,): amp for key, amp in state.amps.items()}, state.leakage)
    return apply_beamsplitter(lifted, mode, env.label, transmissivity=transmission)


# ---------------------------------------------------------------------------
# Qubit gates and generic unitaries
# ---------------------------------------------------------------------------


def rot_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rot_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rot_z(theta: float) -> np.ndarray:
    return np.array([[cmath.exp(-1j * theta / 2.0), 0.0], [0.0, cmath.exp(1j * theta / 2.0)]])


PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def apply_unitary(state: HybridState, labels: Sequence[str], matrix: np.ndarray) -> HybridState:
    """Apply an exact unitary on one or more qubits (no truncation possible)."""
    reg = state.register
    idx = [reg.index(lb) for lb in labels]
    for k in idx:
        if reg.modes[k].kind != QUBIT:
            raise HilbertError(f"unitary target {reg.modes[k].label!r} is not a qubit")
    u = np.asarray(matrix, dtype=complex)
    d = 2 ** len(idx)
    if u.shape != (d, d):
        raise HilbertError(f"matrix shape {u.shape} does not match {len(idx)} qubit(s)")
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-10:
        raise HilbertError("matrix is not unitary within 1e-10")
    cols = [[complex(u[row, col]) for row in range(d)] for col in range(d)]

    before = state.norm2()
    out: dict[tuple[int, ...], complex] = {}
    for key, amp in state.amps.items():
        col = 0
        for k in idx:
            col = (col << 1) | key[k]
        lk = list(key)
        for row, c in enumerate(cols[col]):
            if abs(c) <= _ZERO_CUT:
                continue
            for pos, k in enumerate(idx):
                lk[k] = (row >> (len(idx) - 1 - pos)) & 1
            nk = tuple(lk)
            out[nk] = out.get(nk, 0.0) + amp * c
    result = HybridState(reg, {k: a for k, a in out.items() if abs(a) > _ZERO_CUT}, state.leakage)
    if abs(result.norm2() - before) > UNITARITY_TOL * max(before, 1.0) * 1e2:
        raise HilbertError("unitary norm drift")
    return result


def apply_rotation(state: HybridState, label: str, axis: str, theta: float) -> HybridState:
    gate = {"x": rot_x, "y": rot_y, "z": rot_z}[axis]
    return apply_unitary(state, [label], gate(theta))


def apply_cnot(
    state: HybridState,
    control: str,
    target: str,
    control_value: int = DOWN,
    target_gate: np.ndarray | None = None,
) -> HybridState:
    """Flip (or rotate) ``target`` on the branch where ``control`` equals
    ``control_value``; the default target gate is Pauli X."""
    g = PAULI_X if target_gate is None else np.asarray(target_gate, dtype=complex)
    u = np.eye(4, dtype=complex)
    # basis order: |control target> with control the leading bit
    block = slice(2 * control_value, 2 * control_value + 2)
    u[block, block] = g
    return apply_unitary(state, [control, target], u)


def apply_cz(state: HybridState, qubit_a: str, qubit_b: str) -> HybridState:
    u = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
    return apply_unitary(state, [qubit_a, qubit_b], u)


def depolarize_qubit(state: HybridState | MixedState, label: str, p: float) -> MixedState:
    """Depolarizing channel ``rho -> (1-p) rho + p I/2`` on one qubit.

    Realized as the four-branch Pauli mixture with weights ``1 - 3p/4`` on the
    identity and ``p/4`` on each of X, Y, Z.
    """
    if not 0.0 <= p <= 1.0:
        raise HilbertError(f"depolarizing probability {p} outside [0, 1]")
    mixed = as_mixed(state)
    if p == 0.0:
        return mixed
    branches: list[tuple[float, HybridState]] = []
    for w, s in mixed.branches:
        branches.append((w * (1.0 - 0.75 * p), s))
        for pauli in (PAULI_X, PAULI_Y, PAULI_Z):
            branches.append((w * 0.25 * p, apply_unitary(s, [label], pauli)))
    return MixedState(branches)


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


@dataclass
class FockOutcome:
    counts: tuple[int, ...]
    state: HybridState
    probability: float


def measure_fock(
    state: HybridState, modes: Sequence[str], min_probability: float = 0.0
) -> list[FockOutcome]:
    """Photon-number-resolving projection of the listed bosonic modes.

    Enumerates every count tuple with nonzero probability; the measured modes
    are removed from the post-measurement states (which keep any environment
    modes, so probabilities implicitly trace over the environment).  Outcome
    probabilities sum to the state norm squared; ``min_probability`` drops
    lighter outcomes (callers must account for the missing weight).
    """
    reg = state.register
    idx = [reg.index(m) for m in modes]
    for k in idx:
        if reg.modes[k].kind != BOSONIC:
            raise HilbertError(f"measured mode {reg.modes[k].label!r} is not bosonic")
    keep = [k for k in range(len(reg)) if k not in set(idx)]
    new_reg = Register(tuple(reg.modes[k] for k in keep))

    buckets: dict[tuple[int, ...], dict[tuple[int, ...], complex]] = {}
    for key, amp in state.amps.items():
        counts = tuple(key[k] for k in idx)
        rest = tuple(key[k] for k in keep)
        b = buckets.setdefault(counts, {})
        b[rest] = b.get(rest, 0.0) + amp
    out = []
    for counts, amps in sorted(buckets.items()):
        prob = sum(a.real * a.real + a.imag * a.imag for a in amps.values())
        if prob <= 0.0 or prob < min_probability:
            continue
        out.append(FockOutcome(counts, HybridState(new_reg, amps, state.leakage), prob))
    return out


def measure_mode_in_basis(
    state: HybridState, mode: str, basis: np.ndarray, min_probability: float = 0.0
) -> list[FockOutcome]:
    """Projective measurement of one bosonic mode in an arbitrary orthonormal
    basis given as the columns of ``basis`` (dimension ``cutoff + 1``)."""
    reg = state.register
    i = reg.index(mode)
    d = reg.modes[i].dim
    v = np.asarray(basis, dtype=complex)
    if v.shape != (d, d):
        raise HilbertError(f"basis shape {v.shape} does not match mode dim {d}")
    if np.max(np.abs(v.conj().T @ v - np.eye(d))) > 1e-10:
        raise HilbertError("measurement basis is not orthonormal")
    vc = [[complex(v[n, outcome].conjugate()) for outcome in range(d)] for n in range(d)]
    keep = [k for k in range(len(reg)) if k != i]
    new_reg = Register(tuple(reg.modes[k] for k in keep))
    buckets: dict[int, dict[tuple[int, ...], complex]] = {}
    for key, amp in state.amps.items():
        n = key[i]
        rest = tuple(key[k] for k in keep)
        for outcome in range(d):
            c = vc[n][outcome]
            if abs(c) <= _ZERO_CUT:
                continue
            b = buckets.setdefault(outcome, {})
            b[rest] = b.get(rest, 0.0) + amp * c
    out = []
    for outcome, amps in sorted(buckets.items()):
        amps = {k: a for k, a in amps.items() if abs(a) > _ZERO_CUT}
        prob = sum(a.real * a.real + a.imag * a.imag for a in amps.values())
        if prob <= 1e-30 or prob < min_probability:
            continue
        out.append(FockOutcome((outcome,), HybridState(new_reg, amps, state.leakage), prob))
    return out


@dataclass
class QubitOutcome:
    outcome: int  # Z basis: 0 = down, 1 = up; X basis: 0 = plus, 1 = minus
    state: HybridState
    probability: float


def measure_qubit(state: HybridState, label: str, basis: str = "Z") -> list[QubitOutcome]:
    """Projective qubit measurement; branch probabilities sum to norm^2.

    The measured qubit is removed from the post-measurement states.
    """
    reg = state.register
    i = reg.index(label)
    if reg.modes[i].kind != QUBIT:
        raise HilbertError(f"{label!r} is not a qubit")
    if basis == "Z":
        vecs = np.eye(2, dtype=complex)
    elif basis == "X":
        vecs = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)
    else:
        raise HilbertError(f"unsupported basis {basis!r}")
    keep = [k for k in range(len(reg)) if k != i]
    new_reg = Register(tuple(reg.modes[k] for k in keep))
    out = []
    for outcome in (0, 1):
        amps: dict[tuple[int, ...], complex] = {}
        for key, amp in state.amps.items():
            c = vecs[key[i], outcome].conjugate()
            if abs(c) <= _ZERO_CUT:
                continue
            rest = tuple(key[k] for k in keep)
            amps[rest] = amps.get(rest, 0.0) + amp * c
        post = HybridState(new_reg, {k: a for k, a in amps.items() if abs(a) > _ZERO_CUT}, state.leakage)
        out.append(QubitOutcome(outcome, post, post.norm2()))
    return out


# ---------------------------------------------------------------------------
# Partial trace and fidelity
# ---------------------------------------------------------------------------


def trace_out(
    state: HybridState | MixedState,
    partition: str = ENVIRONMENT,
    dense: bool = False,
) -> MixedState | DensityMatrix:
    """Trace out every mode in ``partition``.

    The default ensemble form groups amplitudes by environment configuration
    (an exact purification-based unraveling); ``dense=True`` returns the
    density-matrix oracle instead and errors above ``DENSE_DIM_CAP``.
    """
    mixed = as_mixed(state)
    if not mixed.branches:
        raise HilbertError("cannot trace an empty ensemble")
    reg = mixed.register
    drop = reg.partition_indices(partition)
    keep = [k for k in range(len(reg)) if k not in set(drop)]
    new_reg = Register(tuple(reg.modes[k] for k in keep))

    branches: list[tuple[float, HybridState]] = []
    for w, s in mixed.branches:
        groups: dict[tuple[int, ...], dict[tuple[int, ...], complex]] = {}
        for key, amp in s.amps.items():
            env = tuple(key[k] for k in drop)
            rest = tuple(key[k] for k in keep)
            g = groups.setdefault(env, {})
            g[rest] = g.get(rest, 0.0) + amp
        for env in sorted(groups):
            sub = HybridState(new_reg, groups[env], s.leakage)
            p = sub.norm2()
            if p > 0.0:
                branches.append((w * p, sub.normalized()))
    out = MixedState(branches)
    if dense:
        return to_density_matrix(out)
    return out


def to_density_matrix(state: HybridState | MixedState) -> DensityMatrix:
    mixed = as_mixed(state)
    reg = mixed.register
    dim = reg.dense_dim
    if dim > DENSE_DIM_CAP:
        raise HilbertError(
            f"dense dimension {dim} exceeds cap {DENSE_DIM_CAP}; use the ensemble form"
        )
    rho = np.zeros((dim, dim), dtype=complex)
    for w, s in mixed.branches:
        vec = s.dense_vector()
        rho += w * np.outer(vec, vec.conj())
    return DensityMatrix(rho, reg.dims)


def reduced_density_matrix(state: HybridState | MixedState, labels: Sequence[str]) -> DensityMatrix:
    """Dense reduced density matrix on the listed modes (everything else traced)."""
    mixed = as_mixed(state)
    reg = mixed.register
    keep = [reg.index(lb) for lb in labels]
    drop = [k for k in range(len(reg)) if k not in set(keep)]
    dims = [reg.modes[k].dim for k in keep]
    dim = int(np.prod(dims))
    if dim > DENSE_DIM_CAP:
        raise HilbertError(f"dense dimension {dim} exceeds cap {DENSE_DIM_CAP}")
    rho = np.zeros((dim, dim), dtype=complex)
    for w, s in mixed.branches:
        groups: dict[tuple[int, ...], dict[tuple[int, ...], complex]] = {}
        for key, amp in s.amps.items():
            env = tuple(key[k] for k in drop)
            kept = tuple(key[k] for k in keep)
            g = groups.setdefault(env, {})
            g[kept] = g.get(kept, 0.0) + amp
        for g in groups.values():
            vec = np.zeros(dim, dtype=complex)
            for kept, amp in g.items():
                vec[int(np.ravel_multi_index(kept, dims))] = amp
            rho += w * np.outer(vec, vec.conj())
    return DensityMatrix(rho, tuple(dims))


def _as_matrix(obj) -> np.ndarray:
    if isinstance(obj, DensityMatrix):
        return obj.matrix
    if isinstance(obj, MixedState):
        return to_density_matrix(obj).matrix
    if isinstance(obj, HybridState):
        v = obj.dense_vector()
        n2 = float(np.vdot(v, v).real)
        if n2 <= 0:
            raise HilbertError("zero state has no fidelity")
        return np.outer(v, v.conj()) / n2
    v = np.asarray(obj, dtype=complex)
    if v.ndim == 1:
        n2 = float(np.vdot(v, v).real)
        return np.outer(v, v.conj()) / n2
    return DensityMatrix(v).matrix


def fidelity(a, b) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``.

    Accepts pure states (HybridState or vectors), ensembles, density matrices
    or raw arrays; pure inputs reduce to ``|<a|b>|^2``.  States are normalized
    before comparison, so post-selection weights do not enter.
    """
    ra, rb = _as_matrix(a), _as_matrix(b)
    if ra.shape != rb.shape:
        raise HilbertError(f"dimension mismatch {ra.shape} vs {rb.shape}")
    ta, tb = float(ra.trace().real), float(rb.trace().real)
    if ta <= 0 or tb <= 0:
        raise HilbertError("cannot compare zero-trace states")
    ra, rb = ra / ta, rb / tb
    wa, va = np.linalg.eigh(ra)
    wa = np.clip(wa, 0.0, None)
    sqrt_a = (va * np.sqrt(wa)) @ va.conj().T
    inner = sqrt_a @ rb @ sqrt_a
    ev = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    f = float(np.sum(np.sqrt(ev)) ** 2)
    return min(max(f, 0.0), 1.0)
