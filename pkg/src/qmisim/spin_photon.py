"""Spin-photon gate primitives.

Two flavors of conditional reflection are supported:

* ``amplitude`` -- the photon is reflected only when the electron is
  spin-up; on the spin-down branch it is routed to a lost (environment)
  mode.  Non-unitary on the system partition, heralding efficiency 1/2.
* ``phase`` -- the photon is always reflected and picks up a pi phase on the
  spin-up branch (a photon-number-controlled Z).  Unitary, no loss.

Multi-photon components route multiplicatively: every photon in the mode
sees the same spin-conditional per-photon amplitudes, so an n-photon Fock
component splits binomially between the reflected and lost modes on the
spin-down branch (with optional residual reflectivity ``r_down``) and
acquires ``(-1)^n`` on the spin-up branch for the phase flavor.

Also here: the photon-number-to-nucleus entangler (a conditional-reflection
gate dressed by electron-nucleus CNOTs, leaving the electron spin-up unless
a microwave error occurred) and the closed-form two-electron state heralded
by the dual-rail single-click projection.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .hilbert import (
    DOWN,
    UP,
    BOSONIC,
    ENVIRONMENT,
    QUBIT,
    HilbertError,
    HybridState,
    MixedState,
    as_mixed,
    apply_cnot,
    depolarize_qubit,
    reduced_density_matrix,
)

AMPLITUDE = "amplitude"
PHASE = "phase"
FLAVORS = (AMPLITUDE, PHASE)


def spin_photon_gate(
    state: HybridState,
    in_mode: str,
    reflected_mode: str,
    electron: str,
    flavor: str = AMPLITUDE,
    lost_mode: str | None = None,
    r_down: float = 0.0,
) -> HybridState:
    """Apply one conditional-reflection gate, moving ``in_mode`` photons to
    ``reflected_mode`` (and, for the amplitude flavor, ``lost_mode``).

    ``r_down`` is the residual per-photon reflection amplitude on the
    spin-down branch (optical contrast; 0 reproduces the idealized gate).
    """
    if flavor not in FLAVORS:
        raise HilbertError(f"unknown gate flavor {flavor!r}")
    reg = state.register
    ii = reg.index(in_mode)
    ir = reg.index(reflected_mode)
    ie = reg.index(electron)
    if reg.modes[ie].kind != QUBIT:
        raise HilbertError(f"electron {electron!r} is not a qubit")
    if reg.modes[ii].kind != BOSONIC or reg.modes[ir].kind != BOSONIC:
        raise HilbertError("photon modes must be bosonic")
    if any(key[ir] != 0 for key in state.amps):
        raise HilbertError(f"reflected mode {reflected_mode!r} must start in vacuum")

    if flavor == PHASE:
        out: dict[tuple[int, ...], complex] = {}
        for key, amp in state.amps.items():
            n = key[ii]
            if key[ie] == UP and n % 2 == 1:
                amp = -amp
            lk = list(key)
            lk[ii], lk[ir] = 0, n + key[ir]
            nk = tuple(lk)
            out[nk] = out.get(nk, 0.0) + amp
        return HybridState(reg, out, state.leakage)

    if lost_mode is None:
        raise HilbertError("amplitude flavor needs a lost mode")
    il = reg.index(lost_mode)
    if len({ii, ir, il}) != 3:
        raise HilbertError("in/reflected/lost modes must be distinct")
    if reg.modes[il].partition != ENVIRONMENT:
        raise HilbertError(f"lost mode {lost_mode!r} must sit in the environment partition")
    if any(key[il] != 0 for key in state.amps):
        raise HilbertError(f"lost mode {lost_mode!r} must start in vacuum")
    if not 0.0 <= r_down <= 1.0:
        raise HilbertError(f"r_down={r_down} outside [0, 1]")

    t_down = math.sqrt(max(0.0, 1.0 - r_down * r_down))
    out = {}
    for key, amp in state.amps.items():
        n = key[ii]
        lk = list(key)
        lk[ii] = 0
        if n == 0:
            out[tuple(lk)] = out.get(tuple(lk), 0.0) + amp
            continue
        if key[ie] == UP:
            lk[ir], lk[il] = n, 0
            nk = tuple(lk)
            out[nk] = out.get(nk, 0.0) + amp
        else:
            for k in range(n + 1):
                c = math.sqrt(math.comb(n, k)) * (r_down**k) * (t_down ** (n - k))
                if c == 0.0:
                    continue
                lk[ir], lk[il] = k, n - k
                nk = tuple(lk)
                out[nk] = out.get(nk, 0.0) + amp * c
    return HybridState(reg, out, state.leakage)


def _check_photon_nucleus_preconditions(state: HybridState, electron: str, nucleus: str) -> None:
    rho_e = reduced_density_matrix(state, [electron]).matrix
    n2 = state.norm2()
    if rho_e[DOWN, DOWN].real > 1e-9 * max(n2, 1e-30):
        raise HilbertError("photon-nucleus gate requires the electron initialized spin-up")
    rho_n = reduced_density_matrix(state, [nucleus]).matrix / n2
    plus = np.array([1.0, 1.0]) / math.sqrt(2.0)
    overlap = float((plus @ rho_n @ plus).real)
    if overlap < 1.0 - 1e-9:
        raise HilbertError("photon-nucleus gate requires the nucleus in (down+up)/sqrt(2)")


def photon_nucleus_gate(
    state: HybridState,
    photon_mode: str,
    reflected_mode: str,
    lost_mode: str,
    electron: str,
    nucleus: str,
    eps_mw: float = 0.0,
    check: bool = True,
) -> MixedState:
    """Entangle a Fock-basis photonic qubit with the nuclear spin.

    The electron (prepared spin-up) is flipped conditionally on the nucleus,
    mediates one amplitude-flavor reflection, and is flipped back, so it ends
    spin-up on every error-free branch:

        (|0> + |1>) |up>_e |+>_n  ->  |up>_e (|0>|+>_n + |1>|down>_n / sqrt2)

    with the complementary half of the single-photon amplitude routed to the
    lost mode alongside the nuclear up component.  A microwave error of
    strength ``eps_mw`` enters as a depolarizing channel on the electron
    before the sequence; error branches leave spin-down weight on the
    electron, which downstream error detection can discard.
    """
    if check:
        _check_photon_nucleus_preconditions(state, electron, nucleus)

    def circuit(s: HybridState) -> HybridState:
        s = apply_cnot(s, nucleus, electron, control_value=UP)
        s = spin_photon_gate(s, photon_mode, reflected_mode, electron, AMPLITUDE, lost_mode)
        return apply_cnot(s, nucleus, electron, control_value=UP)

    return depolarize_qubit(state, electron, eps_mw).map(circuit)


# ---------------------------------------------------------------------------
# Heralded two-electron projection
# ---------------------------------------------------------------------------

# Basis order |e_left e_right>: down-down, down-up, up-down, up-up.
BELL_PSI_MINUS = np.array([0.0, -1.0, 1.0, 0.0]) / math.sqrt(2.0)
BELL_PSI_PLUS = np.array([0.0, 1.0, 1.0, 0.0]) / math.sqrt(2.0)


def entangling_projection(delta_phi_e: float) -> tuple[np.ndarray, float]:
    """Two-electron state heralded by a single click behind the recombining
    beamsplitter at interferometer phase ``delta_phi_e``.

    Returns ``(state, weight)``: the normalized four-component electron state
    (basis ``|e_L e_R>`` = dd, du, ud, uu) and the heralding probability per
    incident signal photon, ``(2 + cos delta_phi_e) / 8`` (the two ports
    together collect the reflected half of the photons).  Locking the phase
    to pi leaves the odd Bell state with weight 1/8.
    """
    if not 0.0 <= delta_phi_e < 2.0 * math.pi + 1e-12:
        raise HilbertError(f"delta_phi_e={delta_phi_e} outside [0, 2*pi)")
    z = cmath.exp(1j * delta_phi_e)
    s = 1.0 / 4.0
    # (e^{i d} |+, up> + |up, +>) / 2 written out in the computational basis
    psi = np.array([0.0, z * s, s, (1.0 + z) * s], dtype=complex)
    weight = float(np.vdot(psi, psi).real)
    return psi / math.sqrt(weight), weight


def psi_minus_fidelity(state4: np.ndarray) -> float:
    v = np.asarray(state4, dtype=complex)
    v = v / math.sqrt(float(np.vdot(v, v).real))
    return float(abs(np.vdot(BELL_PSI_MINUS.astype(complex), v)) ** 2)
