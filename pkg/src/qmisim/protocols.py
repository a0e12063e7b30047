"""End-to-end protocol pipelines.

Three pipelines compose the gate and erasure primitives into the full
quantum-memory-assisted measurements:

* :func:`run_parallel_entanglement` / :func:`run_nuclear_entanglement` --
  dual-rail weak-coherent entanglement generation between the stations,
  heralded by a single detector click behind the recombining beamsplitter
  (electron-electron via the conditional-reflection gate, nucleus-nucleus
  via the photon-nucleus entangler with mid-circuit error detection).
* :func:`run_timebin_sensing` -- single-station sensing of the phase between
  two temporal modes: collect both bins onto the electron/nucleus pair,
  erase the temporal information against LO pulses with X feedback, herald a
  photon on the spin-up electron outcome, read the nucleus in Z.
* :func:`run_nonlocal_sensing` -- the two-station protocol: pre-armed
  nuclear Bell pair, signal collection through per-station spin-photon
  gates, which-path erasure with per-station Z feedback, local
  CNOT + pi/2 disentangling, electron parity post-selection (even parity
  heralds a photon without locating it), nuclear XX parity versus the
  station differential phase.

Signal model: a weak coherent state whose local phases are uniformly random
at fixed difference.  Phase averaging kills every coherence between total
photon numbers, so the thermal signal is exactly the Poisson mixture of
fixed-photon-number sectors; the default ``thermal="sectors"`` mode runs one
pipeline pass per sector, ``"grid"`` averages explicit phase offsets over a
uniform grid (exact for trigonometric polynomials up to the grid order, used
as a cross-check), and ``"fixed"`` pins the offset at zero.

Two exact reorderings keep the cost down: spin gates and electron readout
commute with the photonic erasure measurement, so electrons are measured
before the click patterns are enumerated; and the pattern-conditioned Pauli
feedback conjugates the nuclear parity operator into ``+/- XX``, so the
feedback enters the accumulated parity as a sign instead of a gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import erasure as er
from . import spin_photon as sp
from .hilbert import (
    DOWN,
    UP,
    ENVIRONMENT,
    HilbertError,
    HybridState,
    MixedState,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    Register,
    apply_beamsplitter,
    apply_cnot,
    apply_loss,
    apply_rotation,
    apply_unitary,
    as_mixed,
    basis_state,
    bosonic,
    coherent_cutoff,
    depolarize_qubit,
    measure_fock,
    measure_mode_in_basis,
    measure_qubit,
    prepare_coherent,
    qubit,
    register,
    rot_y,
)
from .params import NoiseModel

XX = np.kron(PAULI_X.real, PAULI_X.real)

# Two-qubit basis order used throughout: |q1 q2> = dd, du, ud, uu.
PSI_MINUS = np.array([0.0, -1.0, 1.0, 0.0]) / math.sqrt(2.0)
PSI_PLUS = np.array([0.0, 1.0, 1.0, 0.0]) / math.sqrt(2.0)
PHI_MINUS = np.array([-1.0, 0.0, 0.0, 1.0]) / math.sqrt(2.0)
PHI_PLUS = np.array([1.0, 0.0, 0.0, 1.0]) / math.sqrt(2.0)

_Z_LEFT = np.array([1.0, 1.0, -1.0, -1.0])
_Z_RIGHT = np.array([1.0, -1.0, 1.0, -1.0])


@dataclass(frozen=True)
class ProtocolConfig:
    """One protocol run's knobs.

    ``signal_input`` switches between the physical weak coherent state and a
    one-photon Fock oracle input; ``erasure_mode`` switches the full
    LO/click simulation against the abstract mode-parity measurement it
    approximates.  ``coherent_error`` injects a correlated microwave
    miscalibration (electron reset over-rotation plus matching
    controlled-flip over-rotation), the mechanism that biases false heralds
    toward the down-down outcome.  ``prune_tol`` drops probability branches
    below that absolute weight (reported via the result's leakage field).
    """

    mu_sig: float = 0.25
    phi: float = 0.0
    delta_phi_e: float = math.pi
    mu_ent: float = 0.1
    gate_flavor: str = sp.AMPLITUDE
    noise: NoiseModel = field(default_factory=NoiseModel)
    strategy: str = er.STRATEGY_2
    herald: bool = True
    phase_jitter_sigma: float = 0.0
    seed: int = 0
    # numerics / modeling toggles
    cutoff: int | None = None
    thermal: str = "sectors"
    phase_grid: int | None = None
    erasure_mode: str = "lo"
    signal_input: str = "coherent"
    bell_fidelity: float = 1.0
    coherent_error: float = 0.0
    prune_tol: float = 1e-13
    sector_tail: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("mu_sig", "mu_ent", "phase_jitter_sigma", "prune_tol", "sector_tail"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.gate_flavor not in sp.FLAVORS:
            raise ValueError(f"unknown gate flavor {self.gate_flavor!r}")
        if self.strategy not in er.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.thermal not in ("sectors", "grid", "fixed"):
            raise ValueError(f"unknown thermal mode {self.thermal!r}")
        if self.erasure_mode not in ("lo", "ideal"):
            raise ValueError(f"unknown erasure mode {self.erasure_mode!r}")
        if self.signal_input not in ("coherent", "fock1"):
            raise ValueError(f"unknown signal input {self.signal_input!r}")
        if not 0.25 <= self.bell_fidelity <= 1.0:
            raise ValueError(f"bell_fidelity={self.bell_fidelity} outside [0.25, 1]")

    def signal_cutoff(self) -> int:
        if self.cutoff is not None:
            return self.cutoff
        amps = [math.sqrt(self.mu_sig / 2.0), abs(self.noise.lo_alpha)]
        return max(coherent_cutoff(a) for a in amps)

    def phase_offsets(self) -> np.ndarray:
        k = self.phase_grid if self.phase_grid is not None else 2 * self.signal_cutoff() + 1
        return 2.0 * math.pi * np.arange(k) / k

    def sector_weights(self) -> list[tuple[int, float]]:
        """Poisson weights of the total-photon-number sectors, truncated once
        the remaining tail drops below ``sector_tail`` (and always at the
        register cutoff).  Truncated weight is reported as leakage."""
        out = []
        remaining = 1.0
        n = 0
        cap = self.signal_cutoff()
        while remaining > self.sector_tail and n <= cap:
            w = math.exp(-self.mu_sig) * self.mu_sig**n / math.factorial(n)
            out.append((n, w))
            remaining -= w
            n += 1
        return out


@dataclass
class ProtocolResult:
    herald_prob_upup: float
    herald_prob_downdown: float
    success_prob: float
    nuclear_parity_expectation: float
    nuclear_parity_heralded: float
    nuclear_parity_unheralded: float
    post_selected_state: MixedState | None
    discarded_weight: float
    reject_weight: float
    leakage: float
    branch_log: list[dict]

    @property
    def herald_prob(self) -> float:
        return self.herald_prob_upup + self.herald_prob_downdown


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def bell_state_vector(which: str) -> np.ndarray:
    return {
        "psi_minus": PSI_MINUS,
        "psi_plus": PSI_PLUS,
        "phi_minus": PHI_MINUS,
        "phi_plus": PHI_PLUS,
    }[which]


def werner_branches(bell_fidelity: float) -> list[tuple[float, np.ndarray]]:
    """Isotropic Bell-error model: the target odd Bell state with probability
    equal to the requested fidelity, the other three Bell states sharing the
    rest evenly."""
    f = bell_fidelity
    rest = (1.0 - f) / 3.0
    out: list[tuple[float, np.ndarray]] = [(f, PSI_MINUS)]
    if rest > 0.0:
        out += [(rest, PSI_PLUS), (rest, PHI_PLUS), (rest, PHI_MINUS)]
    return out


def _two_qubit_amps(reg: Register, labels: tuple[str, str], vec4: np.ndarray) -> dict:
    i1, i2 = reg.index(labels[0]), reg.index(labels[1])
    amps: dict[tuple[int, ...], complex] = {}
    base = [0] * len(reg)
    for idx, amp in enumerate(vec4):
        if abs(amp) == 0.0:
            continue
        key = list(base)
        key[i1], key[i2] = (idx >> 1) & 1, idx & 1
        amps[tuple(key)] = complex(amp)
    return amps


def _rho2q_unnorm(state: HybridState, label_a: str, label_b: str) -> np.ndarray:
    """Unnormalized 4x4 reduced density matrix on two qubits (everything else
    traced); trace equals the state's squared norm."""
    reg = state.register
    ia, ib = reg.index(label_a), reg.index(label_b)
    lo, hi = min(ia, ib), max(ia, ib)
    groups: dict[tuple, np.ndarray] = {}
    for key, amp in state.amps.items():
        rest = key[:lo] + key[lo + 1 : hi] + key[hi + 1 :]
        vec = groups.setdefault(rest, np.zeros(4, dtype=complex))
        vec[2 * key[ia] + key[ib]] += amp
    rho = np.zeros((4, 4), dtype=complex)
    for vec in groups.values():
        rho += np.outer(vec, vec.conj())
    return rho


def _rho1q_unnorm(state: HybridState, label: str) -> np.ndarray:
    reg = state.register
    i = reg.index(label)
    groups: dict[tuple, np.ndarray] = {}
    for key, amp in state.amps.items():
        rest = key[:i] + key[i + 1 :]
        vec = groups.setdefault(rest, np.zeros(2, dtype=complex))
        vec[key[i]] += amp
    rho = np.zeros((2, 2), dtype=complex)
    for vec in groups.values():
        rho += np.outer(vec, vec.conj())
    return rho


def _xx_unnorm(state: HybridState, label_a: str, label_b: str) -> float:
    """Unnormalized ``<XX>`` on two qubits: pairs each amplitude with the
    both-flipped key, tracing everything else implicitly."""
    reg = state.register
    ia, ib = reg.index(label_a), reg.index(label_b)
    total = 0.0
    for key, amp in state.amps.items():
        lk = list(key)
        lk[ia], lk[ib] = 1 - lk[ia], 1 - lk[ib]
        other = state.amps.get(tuple(lk))
        if other is not None:
            total += (amp.conjugate() * other).real
    return total


def _ensemble_from_rho(rho: np.ndarray, labels: tuple[str, str]) -> MixedState:
    """Eigen-decompose a (sub-normalized) two-qubit density matrix into an
    ensemble of pure states on a fresh register."""
    reg = register(qubit(labels[0]), qubit(labels[1]))
    vals, vecs = np.linalg.eigh(rho)
    branches = []
    for val, vec in zip(vals, vecs.T):
        if val > 1e-14:
            branches.append((float(val), HybridState(reg, _two_qubit_amps(reg, labels, vec))))
    return MixedState(branches)


def _depolarize_rho(rho: np.ndarray, qubit_pos: int, p: float) -> np.ndarray:
    """Depolarizing channel on one qubit of a two-qubit density matrix."""
    if p == 0.0:
        return rho
    out = (1.0 - 0.75 * p) * rho
    for pauli in (PAULI_X, PAULI_Y, PAULI_Z):
        op = np.kron(pauli, np.eye(2)) if qubit_pos == 0 else np.kron(np.eye(2), pauli)
        out = out + 0.25 * p * (op @ rho @ op.conj().T)
    return out


# ---------------------------------------------------------------------------
# Erasure tables: pattern-resolved scalar accumulators
# ---------------------------------------------------------------------------


@dataclass
class _PatternEntry:
    weight: float = 0.0
    xx: float = 0.0
    rho: np.ndarray | None = None


def _prune_state(state: HybridState, weight_tol: float) -> HybridState:
    """Drop amplitudes whose total discarded weight stays below
    ``weight_tol`` (callers recover it from the probability deficit)."""
    if weight_tol <= 0.0 or not state.amps:
        return state
    per_amp = weight_tol / len(state.amps)
    kept = {k: a for k, a in state.amps.items() if a.real * a.real + a.imag * a.imag >= per_amp}
    if len(kept) == len(state.amps):
        return state
    return HybridState(state.register, kept, state.leakage)


def _ideal_erasure_basis(dim: int) -> np.ndarray:
    """Mode-measurement basis for the abstract erasure: the 0/1 subspace is
    read in its X-like basis (erasing presence information), higher Fock
    layers are revealed as plain number states."""
    v = np.eye(dim, dtype=complex)
    r = 1.0 / math.sqrt(2.0)
    v[0, 0], v[1, 0] = r, r
    v[0, 1], v[1, 1] = r, -r
    return v


def _entry_for(state: HybridState, pair: tuple[str, ...] | None, collect_rho: bool) -> _PatternEntry:
    entry = _PatternEntry(weight=state.norm2())
    if pair is not None and len(pair) == 2:
        entry.xx = _xx_unnorm(state, pair[0], pair[1])
        if collect_rho:
            entry.rho = _rho2q_unnorm(state, pair[0], pair[1])
    elif pair is not None:
        entry.rho = _rho1q_unnorm(state, pair[0])
    return entry


def _dark_shift(tables: dict, dark_total: float) -> dict:
    """Single-increment dark-count model on pattern-resolved accumulators:
    with probability ``dark_total/4`` per detector (at most one per shot) the
    observed pattern gains one count on that detector."""
    if dark_total == 0.0:
        return tables
    p_each = dark_total / 4.0
    out: dict = {}

    def add(pattern, scale, entry):
        tgt = out.setdefault(pattern, _PatternEntry())
        tgt.weight += scale * entry.weight
        tgt.xx += scale * entry.xx
        if entry.rho is not None:
            tgt.rho = entry.rho * scale if tgt.rho is None else tgt.rho + entry.rho * scale

    for pattern, entry in tables.items():
        add(pattern, 1.0 - dark_total, entry)
        for d in range(4):
            bumped = list(pattern)
            bumped[d] += 1
            add(er.ClickPattern(*bumped), p_each, entry)
    return out


def _erasure_tables(
    state: HybridState,
    noise: NoiseModel,
    mode: str,
    signal_modes: tuple[str, str],
    transmission: float,
    pair: tuple[str, ...] | None,
    collect_rho: bool,
    prune_tol: float,
) -> tuple[dict, list]:
    """Enumerate erasure outcomes of ``state`` and reduce each to scalar
    accumulators on ``pair``.

    Returns ``(pattern_tables, ideal_events)``: for the LO mode, a dict
    ``ClickPattern -> _PatternEntry`` (dark counts folded in); for the ideal
    mode, a list of ``(sign_left, sign_right, _PatternEntry)``.  Outcomes
    below ``prune_tol`` are dropped; callers recover the missing weight from
    the final probability deficit.
    """
    left, right = signal_modes

    if mode == "ideal":
        if transmission < 1.0:
            state = apply_loss(state, left, transmission)
            state = apply_loss(state, right, transmission)
        basis = _ideal_erasure_basis(state.register.mode(left).dim)
        events = []
        for left_out in measure_mode_in_basis(state, left, basis, prune_tol):
            s_l = {0: 1, 1: -1}.get(left_out.counts[0], 0)
            for right_out in measure_mode_in_basis(left_out.state, right, basis, prune_tol):
                s_r = {0: 1, 1: -1}.get(right_out.counts[0], 0)
                events.append((s_l, s_r, _entry_for(right_out.state, pair, collect_rho)))
        return {}, events

    st = er.erasure_station(_prune_state(state, prune_tol), left, "_lo_l", noise.lo_alpha, transmission)
    st = er.erasure_station(_prune_state(st, prune_tol), right, "_lo_r", noise.lo_alpha, transmission)
    st = _prune_state(st, prune_tol)
    tables: dict = {}
    for out in measure_fock(st, [left, "_lo_l", right, "_lo_r"], prune_tol):
        pattern = er.ClickPattern(*out.counts)
        entry = _entry_for(out.state, pair, collect_rho)
        tgt = tables.setdefault(pattern, _PatternEntry())
        tgt.weight += entry.weight
        tgt.xx += entry.xx
        if entry.rho is not None:
            tgt.rho = entry.rho if tgt.rho is None else tgt.rho + entry.rho
    return _dark_shift(tables, noise.dark_total), []


# ---------------------------------------------------------------------------
# Non-local phase sensing
# ---------------------------------------------------------------------------

_NL_LABELS = ("n_l", "n_r")


def _nonlocal_register(cutoff: int, flavor: str) -> Register:
    modes = [
        bosonic("sig_l", cutoff),
        bosonic("sig_r", cutoff),
        bosonic("refl_l", cutoff),
        bosonic("refl_r", cutoff),
    ]
    if flavor == sp.AMPLITUDE:
        modes += [
            bosonic("lost_l", cutoff, ENVIRONMENT),
            bosonic("lost_r", cutoff, ENVIRONMENT),
        ]
    modes += [qubit("e_l"), qubit("n_l"), qubit("e_r"), qubit("n_r")]
    return Register(tuple(modes))


def _inject_signal(
    state: HybridState, labels: tuple[str, str], kind: str, spec: tuple
) -> HybridState:
    """Populate the two signal modes.

    ``kind='sector'``: the n-photon sector of a balanced thermal signal,
    ``sum_k sqrt(C(n,k)) 2^{-n/2} e^{i k phi} |k, n-k>``.
    ``kind='coherent'``: product of coherent amplitudes (fixed phases).
    ``kind='fock1'``: ``(e^{i phi}|10> + |01>)/sqrt(2)``.
    """
    reg = state.register
    il, ir = reg.index(labels[0]), reg.index(labels[1])

    if kind == "coherent":
        a_l, a_r = spec
        state, _ = prepare_coherent(state, labels[0], a_l, allow_tail=True)
        state, _ = prepare_coherent(state, labels[1], a_r, allow_tail=True)
        return state

    if kind == "fock1":
        (phi,) = spec
        comps = [(1, 0, np.exp(1j * phi) / math.sqrt(2.0)), (0, 1, 1.0 / math.sqrt(2.0))]
    else:
        n, phi = spec
        comps = [
            (k, n - k, math.sqrt(math.comb(n, k)) * 2.0 ** (-n / 2.0) * np.exp(1j * k * phi))
            for k in range(n + 1)
        ]

    new: dict[tuple[int, ...], complex] = {}
    for key, a in state.amps.items():
        for k_l, k_r, c in comps:
            lk = list(key)
            lk[il], lk[ir] = k_l, k_r
            nk = tuple(lk)
            new[nk] = new.get(nk, 0.0) + a * c
    return HybridState(reg, new, state.leakage)


def _heralding_gates(state: HybridState, electron: str, nucleus: str, eps: float) -> HybridState:
    """Local disentangling before electron readout: pi/2 on the electron,
    then a nucleus-controlled flip (over-rotated by the coherent error)."""
    state = apply_rotation(state, electron, "y", math.pi / 2.0)
    flip = rot_y(2.0 * eps) @ PAULI_X if eps else PAULI_X
    return apply_cnot(state, nucleus, electron, control_value=DOWN, target_gate=flip)


def _nonlocal_single(
    config: ProtocolConfig,
    nuclear_vec: np.ndarray,
    input_kind: str,
    input_spec: tuple,
    collect_rho: bool,
    prune_tol: float,
) -> dict:
    """One pure-input pipeline pass; returns unnormalized accumulators.

    Probability weight lost to cutoff truncation or pruning shows up as the
    deficit ``1 - (buckets + reject)`` and is reported in ``acc['lost']``.
    """
    flavor = config.gate_flavor
    reg = _nonlocal_register(config.signal_cutoff(), flavor)
    state = HybridState(reg, _two_qubit_amps(reg, _NL_LABELS, nuclear_vec))
    for e_label in ("e_l", "e_r"):
        # electron reset; the coherent error over-rotates it
        state = apply_rotation(state, e_label, "y", math.pi / 2.0 + 2.0 * config.coherent_error)
    state = _inject_signal(state, ("sig_l", "sig_r"), input_kind, input_spec)

    for side in ("l", "r"):
        state = sp.spin_photon_gate(
            state,
            f"sig_{side}",
            f"refl_{side}",
            f"e_{side}",
            flavor,
            lost_mode=f"lost_{side}" if flavor == sp.AMPLITUDE else None,
        )

    # Spin gates and electron readout commute with the photonic erasure, so
    # the electrons are disentangled and measured first.
    for e_label, n_label in (("e_l", "n_l"), ("e_r", "n_r")):
        state = _heralding_gates(state, e_label, n_label, config.coherent_error)

    if config.noise.eps_mw > 0.0:
        mixed = depolarize_qubit(state, "e_l", config.noise.eps_mw)
        mixed = depolarize_qubit(mixed, "e_r", config.noise.eps_mw)
        pre = list(mixed.branches)
    else:
        pre = [(1.0, state)]

    acc = {
        "uu": [0.0, 0.0],
        "dd": [0.0, 0.0],
        "odd": [0.0, 0.0],
        "reject": 0.0,
        "lost": 0.0,
        "rho_herald": np.zeros((4, 4), dtype=complex) if collect_rho else None,
    }

    for w_pre, s_pre in pre:
        for el in measure_qubit(s_pre, "e_l"):
            if el.probability < prune_tol:
                continue
            for erout in measure_qubit(el.state, "e_r"):
                if erout.probability < prune_tol:
                    continue
                parity = (el.outcome, erout.outcome)
                bucket = {(UP, UP): "uu", (DOWN, DOWN): "dd"}.get(parity, "odd")
                # The amplitude flavor models gate routing explicitly, so
                # only the path transmission enters as white loss.
                tables, events = _erasure_tables(
                    erout.state,
                    config.noise,
                    config.erasure_mode,
                    ("refl_l", "refl_r"),
                    config.noise.transmission_path,
                    _NL_LABELS,
                    collect_rho and bucket != "odd",
                    prune_tol,
                )
                for pattern, entry in tables.items():
                    decision = er.accept(pattern, config.strategy)
                    if not decision.accepted:
                        acc["reject"] += w_pre * entry.weight
                        continue
                    _accumulate(acc, bucket, w_pre, decision, entry, collect_rho)
                for s_l, s_r, entry in events:
                    _accumulate(acc, bucket, w_pre, er.Decision(True, s_l, s_r), entry, collect_rho)
    counted = acc["uu"][0] + acc["dd"][0] + acc["odd"][0] + acc["reject"]
    acc["lost"] = max(0.0, 1.0 - counted)
    return acc


def _accumulate(acc, bucket, w, decision, entry, collect_rho) -> None:
    sign = float(decision.sign_left * decision.sign_right) or 1.0
    acc[bucket][0] += w * entry.weight
    acc[bucket][1] += w * sign * entry.xx
    if collect_rho and bucket in ("uu", "dd") and entry.rho is not None:
        # apply the Z feedback by conjugation
        z = np.ones(4)
        if decision.sign_left < 0:
            z = z * _Z_LEFT
        if decision.sign_right < 0:
            z = z * _Z_RIGHT
        acc["rho_herald"] += w * (z[:, None] * entry.rho * z[None, :])


def _readout_scramble(acc: dict, flip: float) -> dict:
    """Classical per-electron readout bit flips reshuffle the parity labels;
    the underlying nuclear states travel with their shots."""
    if flip == 0.0:
        return acc
    keep2 = (1.0 - flip) ** 2
    both = flip**2
    one = flip * (1.0 - flip)
    uu, dd, odd = acc["uu"], acc["dd"], acc["odd"]
    new_uu = [keep2 * uu[k] + both * dd[k] + one * odd[k] for k in (0, 1)]
    new_dd = [keep2 * dd[k] + both * uu[k] + one * odd[k] for k in (0, 1)]
    new_odd = [2.0 * one * (uu[k] + dd[k]) + (keep2 + both) * odd[k] for k in (0, 1)]
    acc["uu"], acc["dd"], acc["odd"] = new_uu, new_dd, new_odd
    return acc


def _signal_inputs(config: ProtocolConfig) -> list[tuple[float, str, tuple]]:
    """Weighted pure inputs realizing the configured signal model."""
    if config.signal_input == "fock1":
        return [(1.0, "fock1", (config.phi,))]
    if config.thermal == "sectors":
        return [(w, "sector", (n, config.phi)) for n, w in config.sector_weights()]
    amp = math.sqrt(config.mu_sig / 2.0)
    offsets = [0.0] if config.thermal == "fixed" else list(config.phase_offsets())
    return [
        (
            1.0 / len(offsets),
            "coherent",
            (amp * np.exp(1j * (psi + config.phi)), amp * np.exp(1j * psi)),
        )
        for psi in offsets
    ]


def run_nonlocal_sensing(config: ProtocolConfig, collect_state: bool = True) -> ProtocolResult:
    """Two-station phase sensing at one differential phase.

    Returns heralded (even electron parity) and unheralded nuclear XX parity
    expectations, heralding probabilities split by electron outcome, and the
    post-selected nuclear ensemble.
    """
    total = {"uu": [0.0, 0.0], "dd": [0.0, 0.0], "odd": [0.0, 0.0], "reject": 0.0, "lost": 0.0}
    rho_herald = np.zeros((4, 4), dtype=complex)
    inputs = _signal_inputs(config)
    input_weight = sum(w for w, _, _ in inputs)
    total["lost"] += 1.0 - input_weight  # truncated signal sectors
    for w_bell, vec in werner_branches(config.bell_fidelity):
        for w_in, kind, spec in inputs:
            scale = w_bell * w_in
            # prune at the level that matters after scaling by this branch
            prune = config.prune_tol / max(scale, 1e-30)
            acc = _nonlocal_single(config, vec, kind, spec, collect_state, prune)
            for key in ("uu", "dd", "odd"):
                total[key][0] += scale * acc[key][0]
                total[key][1] += scale * acc[key][1]
            total["reject"] += scale * acc["reject"]
            total["lost"] += scale * acc["lost"]
            if collect_state:
                rho_herald += scale * acc["rho_herald"]

    total = _readout_scramble(total, config.noise.readout_flip)

    mix = config.noise.mis_herald_mix
    if mix:
        for key in ("uu", "dd"):
            total[key][1] *= 1.0 - mix
        if collect_state:
            sub = np.diag([0.0, 0.5, 0.5, 0.0])  # mixed state on the herald subspace
            herald_w = total["uu"][0] + total["dd"][0]
            rho_herald = (1.0 - mix) * rho_herald + mix * herald_w * sub

    w_uu, xx_uu = total["uu"]
    w_dd, xx_dd = total["dd"]
    w_odd, xx_odd = total["odd"]
    herald_w = w_uu + w_dd
    all_w = herald_w + w_odd
    xx_herald = (xx_uu + xx_dd) / herald_w if herald_w > 0 else 0.0
    xx_all = (xx_uu + xx_dd + xx_odd) / all_w if all_w > 0 else 0.0

    post = None
    if collect_state and herald_w > 0:
        post = _ensemble_from_rho(rho_herald / herald_w, _NL_LABELS)
    branch_log = [
        {"branch": "upup", "weight": w_uu},
        {"branch": "downdown", "weight": w_dd},
        {"branch": "odd_parity", "weight": w_odd},
        {"branch": "rejected", "weight": total["reject"]},
        {"branch": "lost", "weight": total["lost"]},
    ]
    return ProtocolResult(
        herald_prob_upup=w_uu,
        herald_prob_downdown=w_dd,
        success_prob=herald_w if config.herald else all_w,
        nuclear_parity_expectation=xx_herald if config.herald else xx_all,
        nuclear_parity_heralded=xx_herald,
        nuclear_parity_unheralded=xx_all,
        post_selected_state=post,
        discarded_weight=w_odd if config.herald else 0.0,
        reject_weight=total["reject"],
        leakage=total["lost"],
        branch_log=branch_log,
    )


@dataclass
class ParityCurve:
    phis: np.ndarray
    heralded: np.ndarray
    unheralded: np.ndarray
    herald_prob: np.ndarray
    reject_weight: np.ndarray


def xx_parity_curve(config: ProtocolConfig, phis) -> ParityCurve:
    h, u, p, r = [], [], [], []
    for phi in phis:
        res = run_nonlocal_sensing(replace(config, phi=float(phi)), collect_state=False)
        h.append(res.nuclear_parity_heralded)
        u.append(res.nuclear_parity_unheralded)
        p.append(res.herald_prob)
        r.append(res.reject_weight)
    return ParityCurve(
        np.asarray(list(phis), dtype=float),
        np.asarray(h),
        np.asarray(u),
        np.asarray(p),
        np.asarray(r),
    )


def herald_probability_curve(config: ProtocolConfig, mu_grid) -> list[dict]:
    rows = []
    for mu in mu_grid:
        res = run_nonlocal_sensing(replace(config, mu_sig=float(mu)), collect_state=False)
        rows.append(
            {
                "mu_sig": float(mu),
                "p_upup": res.herald_prob_upup,
                "p_downdown": res.herald_prob_downdown,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Parallel entanglement generation
# ---------------------------------------------------------------------------


@dataclass
class EntangleResult:
    rho: np.ndarray  # normalized 4x4 on the heralded (and error-filtered) pair
    herald_prob: float
    fidelity_psi_minus: float
    discard_fraction: float = 0.0
    fidelity_unselected: float = 0.0  # without discarding flagged electrons


def _gauss_nodes(sigma: float, n: int = 21) -> list[tuple[float, float]]:
    if sigma == 0.0:
        return [(0.0, 1.0)]
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / w.sum()
    return [(float(sigma * xi), float(wi)) for xi, wi in zip(x, w)]


def _entangle_once(config: ProtocolConfig, delta: float, nuclear: bool) -> tuple[np.ndarray, float, float]:
    """One dual-rail attempt at interferometer phase ``delta_phi_e + delta``.

    Returns (unnormalized 4x4 on the target pair given a herald, herald
    probability, error-detect discard weight)."""
    flavor = config.gate_flavor
    cutoff = (
        config.cutoff
        if config.cutoff is not None
        else coherent_cutoff(math.sqrt(config.mu_ent / 2.0))
    )
    modes = [
        bosonic("rail_l", cutoff),
        bosonic("rail_r", cutoff),
        bosonic("refl_l", cutoff),
        bosonic("refl_r", cutoff),
    ]
    if nuclear or flavor == sp.AMPLITUDE:
        modes += [bosonic("lost_l", cutoff, ENVIRONMENT), bosonic("lost_r", cutoff, ENVIRONMENT)]
    modes += [qubit("e_l"), qubit("e_r")]
    if nuclear:
        modes += [qubit("n_l"), qubit("n_r")]
    reg = Register(tuple(modes))

    state = basis_state(reg, {"e_l": UP, "e_r": UP} if nuclear else {})
    if nuclear:
        for n_label in ("n_l", "n_r"):
            state = apply_rotation(state, n_label, "y", math.pi / 2.0)
    else:
        for e_label in ("e_l", "e_r"):
            state = apply_rotation(state, e_label, "y", math.pi / 2.0)

    if config.signal_input == "fock1":
        il, ir = reg.index("rail_l"), reg.index("rail_r")
        new: dict[tuple[int, ...], complex] = {}
        for key, a in state.amps.items():
            kl, kr = list(key), list(key)
            kl[il], kr[ir] = 1, 1
            new[tuple(kl)] = new.get(tuple(kl), 0.0) + a / math.sqrt(2.0)
            new[tuple(kr)] = new.get(tuple(kr), 0.0) + a / math.sqrt(2.0)
        state = HybridState(reg, new, state.leakage)
    else:
        amp = math.sqrt(config.mu_ent / 2.0)
        state, _ = prepare_coherent(state, "rail_l", amp, allow_tail=True)
        state, _ = prepare_coherent(state, "rail_r", amp, allow_tail=True)

    if nuclear:
        branches: list[tuple[float, HybridState]] = []
        first = sp.photon_nucleus_gate(
            state, "rail_l", "refl_l", "lost_l", "e_l", "n_l", eps_mw=config.noise.eps_mw
        )
        for w2, s2 in first.branches:
            second = sp.photon_nucleus_gate(
                s2, "rail_r", "refl_r", "lost_r", "e_r", "n_r",
                eps_mw=config.noise.eps_mw, check=False,
            )
            branches += [(w2 * w3, s3) for w3, s3 in second.branches]
        mixed = MixedState(branches)
    else:
        def collect(s: HybridState) -> HybridState:
            for side in ("l", "r"):
                s = sp.spin_photon_gate(
                    s, f"rail_{side}", f"refl_{side}", f"e_{side}", flavor,
                    lost_mode=f"lost_{side}" if flavor == sp.AMPLITUDE else None,
                )
            return s

        mixed = as_mixed(state).map(collect)

    # Recombine; the heralding detector sits on the first output port, and
    # the sign convention matches the closed-form heralded state.
    phase = -(config.delta_phi_e + delta)
    mixed = mixed.map(lambda s: apply_beamsplitter(s, "refl_l", "refl_r", 0.5, phase))

    pair = ("n_l", "n_r") if nuclear else ("e_l", "e_r")
    rho = np.zeros((4, 4), dtype=complex)
    rho_all = np.zeros((4, 4), dtype=complex)
    herald = 0.0
    discard = 0.0
    for w, s in mixed.branches:
        for out in measure_fock(s, ["refl_l", "refl_r"]):
            if out.counts[0] < 1:
                continue
            herald += w * out.probability
            post = out.state  # unnormalized: norm^2 equals the click probability
            if nuclear:
                rho_all += w * _rho2q_unnorm(post, *pair)
                keep: HybridState | None = post
                dropped = 0.0
                for e_label in ("e_l", "e_r"):
                    outcomes = {b.outcome: b for b in measure_qubit(keep, e_label)}
                    dropped += outcomes[DOWN].probability
                    keep = outcomes[UP].state
                    if keep.norm2() <= 1e-30:
                        keep = None
                        break
                discard += w * dropped
                if keep is not None:
                    rho += w * _rho2q_unnorm(keep, *pair)
            else:
                rho += w * _rho2q_unnorm(post, *pair)
    if not nuclear and config.noise.eps_mw > 0.0:
        rho = _depolarize_rho(rho, 0, config.noise.eps_mw)
        rho = _depolarize_rho(rho, 1, config.noise.eps_mw)
    if not nuclear:
        rho_all = rho
    return rho, herald, discard, rho_all


def _run_entanglement(config: ProtocolConfig, nuclear: bool) -> EntangleResult:
    rho = np.zeros((4, 4), dtype=complex)
    rho_all = np.zeros((4, 4), dtype=complex)
    herald = 0.0
    discard = 0.0
    for delta, w in _gauss_nodes(config.phase_jitter_sigma):
        r, h, d, r_all = _entangle_once(config, delta, nuclear)
        rho += w * r
        rho_all += w * r_all
        herald += w * h
        discard += w * d
    kept = float(rho.trace().real)
    if kept <= 0.0:
        raise HilbertError("no heralded weight; raise mu_ent or check the lock phase")
    rho_n = rho / kept
    fid = float((PSI_MINUS @ rho_n @ PSI_MINUS).real)
    rho_a = rho_all / float(rho_all.trace().real)
    fid_all = float((PSI_MINUS @ rho_a @ PSI_MINUS).real)
    return EntangleResult(
        rho_n, herald, fid,
        discard_fraction=discard / max(herald, 1e-300),
        fidelity_unselected=fid_all,
    )


def run_parallel_entanglement(config: ProtocolConfig) -> EntangleResult:
    """Electron-electron entanglement via dual-rail reflection and a single
    heralding click."""
    return _run_entanglement(config, nuclear=False)


def run_nuclear_entanglement(config: ProtocolConfig) -> EntangleResult:
    """Nucleus-nucleus entanglement with photon-nucleus gates and mid-circuit
    electron error detection (spin-down outcomes discarded)."""
    return _run_entanglement(config, nuclear=True)


# ---------------------------------------------------------------------------
# Interferometer phase sensitivity
# ---------------------------------------------------------------------------


@dataclass
class JitterPenalty:
    deltas: np.ndarray
    fidelities: np.ndarray
    quadratic_coefficient: float
    f0: float

    def gaussian_penalty(self, sigma: float) -> float:
        """Mean fidelity loss for Gaussian lock error of spread ``sigma``."""
        loss = 0.0
        for d, w in _gauss_nodes(sigma, 41):
            vec, _ = sp.entangling_projection((math.pi + d) % (2.0 * math.pi))
            loss += w * (1.0 - sp.psi_minus_fidelity(vec))
        return loss


def phase_jitter_penalty(max_delta: float = 0.2, n: int = 21) -> JitterPenalty:
    """Heralded-pair fidelity versus lock offset around the pi setpoint, with
    the fitted quadratic coefficient of ``F = F0 - c delta^2``."""
    deltas = np.linspace(-max_delta, max_delta, n)
    fids = np.empty_like(deltas)
    for k, d in enumerate(deltas):
        vec, _ = sp.entangling_projection((math.pi + float(d)) % (2.0 * math.pi))
        fids[k] = sp.psi_minus_fidelity(vec)
    coeffs = np.polyfit(deltas, fids, 2)
    return JitterPenalty(deltas, fids, float(-coeffs[0]), float(coeffs[2]))


# ---------------------------------------------------------------------------
# Time-bin sensing on a single station
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _timebin_gates() -> tuple[np.ndarray, np.ndarray]:
    """Electron-nucleus gates for the time-bin collection sequence.

    With the electron prepared at an eighth-turn tilt, the mid-bin transfer B
    and the final disentangler R are fixed (up to unitary completion) by
    requiring the three collection branches to come out as

        vacuum -> |down>|+>,   early -> |+>|+>,
        late   -> (|+>|down> + |->|up>)/sqrt(2),

    which makes the spin-up electron outcome herald a photon in either bin
    with equal amplitude and orthogonal nuclear imprints (unit visibility)
    while the vacuum branch never heralds.
    """
    down = np.array([1.0, 0.0])
    up = np.array([0.0, 1.0])
    plus = (down + up) / math.sqrt(2.0)
    minus = (down - up) / math.sqrt(2.0)
    z_e = np.kron(np.diag([1.0, -1.0]), np.eye(2))

    g = math.pi / 8.0
    p1 = np.kron(math.cos(g) * down + math.sin(g) * up, plus)
    p2 = z_e @ p1
    q1 = p1.copy()
    c1 = (1.0 / math.sqrt(2.0) + 0.5) / (2.0 * math.cos(g))
    c2 = (1.0 / math.sqrt(2.0) - 0.5) / (2.0 * math.sin(g))
    c3 = math.sqrt(max(0.0, 1.0 - c1 * c1 - c2 * c2))
    q2 = c1 * np.kron(down, plus) + c2 * np.kron(up, plus) + c3 * np.kron(down, minus)

    def unitary_extension(sources: list[np.ndarray], images: list[np.ndarray]) -> np.ndarray:
        def orthonormal_basis(vs: list[np.ndarray]) -> list[np.ndarray]:
            basis: list[np.ndarray] = []
            for v in list(vs) + [e for e in np.eye(4)]:
                u = v.astype(complex).copy()
                for b in basis:
                    u -= np.vdot(b, u) * b
                norm = np.linalg.norm(u)
                if norm > 1e-12:
                    basis.append(u / norm)
            return basis[:4]

        a = orthonormal_basis(sources)
        b = orthonormal_basis(images)
        return sum(np.outer(bi, ai.conj()) for ai, bi in zip(a, b))

    b_gate = unitary_extension([p1, p2], [q1, q2])
    v_t = np.kron(down, plus)
    e_t = np.kron(plus, plus)
    l_t = (np.kron(plus, down) + np.kron(minus, up)) / math.sqrt(2.0)
    r_gate = unitary_extension([q1, q2, z_e @ q1], [v_t, e_t, l_t])
    return b_gate, r_gate


def collection_branch_states() -> dict[str, np.ndarray]:
    """Electron-nucleus states produced by the time-bin collection for the
    vacuum / early-photon / late-photon branches (basis dd, du, ud, uu)."""
    b_gate, r_gate = _timebin_gates()
    g = math.pi / 8.0
    z_e = np.kron(np.diag([1.0, -1.0]), np.eye(2))
    prep = np.kron([math.cos(g), math.sin(g)], np.array([1.0, 1.0]) / math.sqrt(2.0))
    return {
        "vacuum": r_gate @ b_gate @ prep,
        "early": r_gate @ b_gate @ z_e @ prep,
        "late": r_gate @ z_e @ b_gate @ prep,
    }


@dataclass
class TimebinPoint:
    theta: float
    p_down_heralded: float
    p_down_unheralded: float
    herald_prob: float
    accept_prob: float
    leakage: float


def run_timebin_sensing(config: ProtocolConfig, theta: float) -> TimebinPoint:
    """Single-station two-temporal-mode sensing at bin phase ``theta``.

    Only the phase gate flavor is supported: the collection sequence is the
    unitary early/late photon-parity imprint, and the reflection-amplitude
    gate's extra heralding loss enters through the mis-heralding noise
    parameters instead.
    """
    if config.gate_flavor != sp.PHASE:
        raise HilbertError("time-bin sensing models the unitary (phase-flavor) collection only")
    cutoff = config.signal_cutoff()
    b_gate, r_gate = _timebin_gates()
    reg = register(
        bosonic("early", cutoff),
        bosonic("late", cutoff),
        bosonic("refl_early", cutoff),
        bosonic("refl_late", cutoff),
        qubit("e"),
        qubit("n"),
    )
    base = basis_state(reg, {})
    base = apply_rotation(base, "n", "y", math.pi / 2.0)
    base = apply_rotation(base, "e", "y", math.pi / 4.0)

    if config.signal_input == "fock1":
        inputs = [(1.0, "fock1", (theta,))]
    elif config.thermal == "sectors":
        inputs = [(w, "sector", (n, theta)) for n, w in config.sector_weights()]
    else:
        amp = math.sqrt(config.mu_sig / 2.0)
        offsets = [0.0] if config.thermal == "fixed" else list(config.phase_offsets())
        inputs = [
            (1.0 / len(offsets), "coherent",
             (amp * np.exp(1j * psi), amp * np.exp(1j * (psi + theta))))
            for psi in offsets
        ]
    # sector/fock1 phase convention: the late bin carries e^{i theta}; the
    # injector phases the FIRST listed mode, so order (late, early) and swap.

    herald = np.zeros((2, 2), dtype=complex)
    unherald = np.zeros((2, 2), dtype=complex)
    reject_w = 0.0
    for w_in, kind, spec in inputs:
        if kind == "coherent":
            state = _inject_signal(base, ("early", "late"), kind, spec)
        else:
            state = _inject_signal(base, ("late", "early"), kind, spec)
        state = sp.spin_photon_gate(state, "early", "refl_early", "e", sp.PHASE)
        state = apply_unitary(state, ["e", "n"], b_gate)
        state = sp.spin_photon_gate(state, "late", "refl_late", "e", sp.PHASE)
        state = apply_unitary(state, ["e", "n"], r_gate)

        mixed = as_mixed(state)
        init_p = 1.0 - config.noise.init_z_visibility
        if init_p > 0.0:
            mixed = depolarize_qubit(mixed, "n", init_p)

        for w_b, s in mixed.branches:
            scale = w_in * w_b
            prune = config.prune_tol / max(scale, 1e-30)
            for eout in measure_qubit(s, "e"):
                if eout.probability < prune:
                    continue
                tables, events = _erasure_tables(
                    eout.state, config.noise, config.erasure_mode,
                    ("refl_early", "refl_late"), config.noise.transmission,
                    ("n",), collect_rho=False, prune_tol=prune,
                )
                for pattern, entry in tables.items():
                    decision = er.accept(pattern, config.strategy)
                    if not decision.accepted:
                        reject_w += scale * entry.weight
                        continue
                    rho = entry.rho
                    if decision.flip:
                        rho = PAULI_X @ rho @ PAULI_X
                    unherald += scale * rho
                    if eout.outcome == UP:
                        herald += scale * rho
                for s_l, s_r, entry in events:
                    rho = entry.rho
                    if s_l * s_r < 0:
                        rho = PAULI_X @ rho @ PAULI_X
                    unherald += scale * rho
                    if eout.outcome == UP:
                        herald += scale * rho

    accept_w = float(unherald.trace().real)
    herald_w = float(herald.trace().real)
    lost = max(0.0, 1.0 - accept_w - reject_w)

    mix = config.noise.mis_herald_mix
    if mix is None and config.noise.eps_mw > 0.0:
        from .metrics import p_mh

        # herald-conditioned false-positive rate at the amplitude-gate
        # heralding efficiency, plus the state-preparation share
        mix = min(1.0, p_mh(config.noise.eps_mw, 0.5, config.mu_sig) + config.noise.eps_mw)
    if mix:
        herald = (1.0 - mix) * herald + mix * herald_w / 2.0 * np.eye(2)

    flip = config.noise.readout_flip

    def p_down(rho: np.ndarray) -> float:
        tr = float(rho.trace().real)
        if tr <= 0.0:
            return float("nan")
        p = float(rho[DOWN, DOWN].real) / tr
        return (1.0 - flip) * p + flip * (1.0 - p)

    return TimebinPoint(
        theta=float(theta),
        p_down_heralded=p_down(herald),
        p_down_unheralded=p_down(unherald),
        herald_prob=herald_w,
        accept_prob=accept_w,
        leakage=lost,
    )


def timebin_curve(config: ProtocolConfig, thetas) -> list[TimebinPoint]:
    return [run_timebin_sensing(config, float(t)) for t in thetas]
