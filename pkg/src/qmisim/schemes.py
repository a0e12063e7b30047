"""Long-baseline scheme comparison.

Success-probability models per signal photon for three ways of measuring a
differential optical phase over a fiber baseline of length ``L``:

* direct detection at a midpoint beamsplitter, paying ``e^{-L/(2 L0)}`` in
  transmission (each photon travels half the baseline),
* a path-entangled single-photon source scheme, parameterized as a duty
  factor times the direct-detection loss (no repeaters),
* the memory-based scheme, where a fixed measurement window competes with an
  entanglement-generation time that grows as ``e^{L/(2 L0)}``, so the success
  probability saturates instead of decaying and the gain over direct
  detection plateaus at ``tau_meas / tau_ent0``.

Resource counting for the binary-encoded memory loading: ``N`` timebins need
``ceil(log2 N)`` memory qubits per side, and a signal of bandwidth beyond a
single memory linewidth splits into ``M`` frequency windows with another
``ceil(log2 M)`` qubits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BaselineParams:
    """Inputs for the scheme comparison. Lengths in km, times in seconds,
    frequencies in Hz."""

    attenuation_db_per_km: float = 0.3
    tau_meas: float = 1.0
    tau_ent0: float = 1e-3
    delta_f_signal: float = 1e6
    delta_f_memory: float = 1e9
    source_duty: float = 0.01

    def __post_init__(self) -> None:
        for name in ("attenuation_db_per_km", "tau_meas", "tau_ent0", "delta_f_signal", "delta_f_memory"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.source_duty <= 1.0:
            raise ValueError(f"source_duty={self.source_duty} outside [0, 1]")

    @property
    def attenuation_length_km(self) -> float:
        """L0 such that power transmission over d km is ``e^{-d/L0}``."""
        return 10.0 / (self.attenuation_db_per_km * math.log(10.0))

    def tau_ent(self, length_km: float) -> float:
        """Entanglement-generation time at baseline ``length_km``."""
        return self.tau_ent0 * math.exp(length_km / (2.0 * self.attenuation_length_km))


def p_direct(params: BaselineParams, length_km: float) -> float:
    """Direct-detection success probability ``e^{-L/(2 L0)}`` (loss to the
    midpoint beamsplitter: each arm spans half the baseline)."""
    _check_length(length_km)
    return math.exp(-length_km / (2.0 * params.attenuation_length_km))


def p_memory_assisted(params: BaselineParams, length_km: float) -> float:
    """Memory-based scheme success probability
    ``tau_meas / (tau_meas + tau_ent0 e^{L/(2 L0)})``."""
    _check_length(length_km)
    return params.tau_meas / (params.tau_meas + params.tau_ent(length_km))


def gain_memory_assisted(params: BaselineParams, length_km: float) -> float:
    """Gain of the memory-based scheme over direct detection; grows like
    ``e^{L/(2 L0)}`` until ``L = 2 L0 ln(tau_meas/tau_ent0)`` and saturates at
    ``tau_meas / tau_ent0``."""
    return p_memory_assisted(params, length_km) / p_direct(params, length_km)


def gain_saturation(params: BaselineParams) -> float:
    return params.tau_meas / params.tau_ent0


def gain_kink_km(params: BaselineParams) -> float:
    """Baseline where the measurement window equals the entanglement time."""
    return 2.0 * params.attenuation_length_km * math.log(params.tau_meas / params.tau_ent0)


def p_source_based(params: BaselineParams, length_km: float) -> float:
    """Path-entangled-source scheme without repeaters: a source duty factor
    (probability that a source photon covers a given timebin) times the
    direct-detection transmission.  Duty 1 recovers direct detection."""
    return params.source_duty * p_direct(params, length_km)


# Aliases matching the two schemes' usual initialisms.
p_kbgl = p_memory_assisted
gain_kbgl = gain_memory_assisted
gjc_success = p_source_based


def _check_length(length_km: float) -> None:
    if length_km < 0.0:
        raise ValueError(f"baseline length {length_km} must be >= 0")


@dataclass(frozen=True)
class MultiplexResources:
    n_timebins: int
    qubits_per_node: int
    freq_windows: int
    freq_qubits: int


def multiplex_resources(params: BaselineParams) -> MultiplexResources:
    """Binary-encoding resource counts: ``N = ceil(delta_f * tau_meas)``
    timebins need ``ceil(log2 N)`` qubits per node; bandwidth beyond one
    memory linewidth adds ``M = ceil(delta_f / delta_f_memory)`` windows and
    ``ceil(log2 M)`` more qubits."""
    n_raw = params.delta_f_signal * params.tau_meas
    if n_raw < 1.0:
        raise ValueError("need delta_f_signal * tau_meas >= 1 for at least one timebin")
    n = math.ceil(n_raw)
    qubits = max(1, math.ceil(math.log2(n))) if n > 1 else 1
    if params.delta_f_signal > params.delta_f_memory:
        m = math.ceil(params.delta_f_signal / params.delta_f_memory)
    else:
        m = 1
    freq_qubits = max(0, math.ceil(math.log2(m))) if m > 1 else 0
    return MultiplexResources(n, qubits, m, freq_qubits)


def binary_timebin_address(timebin_index: int, n_qubits: int) -> str:
    """Big-endian switch configuration selecting one of ``2^n`` timebins."""
    if n_qubits < 1:
        raise ValueError("need at least one qubit")
    if not 0 <= timebin_index < 2**n_qubits:
        raise ValueError(f"timebin {timebin_index} out of range for {n_qubits} qubits")
    return format(timebin_index, f"0{n_qubits}b")


def timebin_from_address(address: str) -> int:
    """Inverse of :func:`binary_timebin_address`."""
    if not address or any(c not in "01" for c in address):
        raise ValueError(f"malformed address {address!r}")
    return int(address, 2)


@dataclass(frozen=True)
class SchemePoint:
    length_km: float
    p_direct: float
    p_source: float
    p_memory: float
    gain: float


def scheme_comparison(params: BaselineParams, lengths_km) -> list[SchemePoint]:
    return [
        SchemePoint(
            float(length),
            p_direct(params, length),
            p_source_based(params, length),
            p_memory_assisted(params, length),
            gain_memory_assisted(params, length),
        )
        for length in lengths_km
    ]
