"""Shared imperfection parameters for the protocol pipelines.

A single :class:`NoiseModel` collects every knob the simulations understand.
The default constructor is ideal (no loss, no errors); the two classmethods
give the experimentally calibrated settings for the single-station time-bin
run and the two-station spatial run.

Loss is split into two multiplicative transmissions: the share attributed to
the conditional-reflection gate itself and the fiber/detection path share.
Pipelines that model the gate routing explicitly (amplitude flavor) apply
only the path share as a white loss channel; the standalone erasure map,
which starts from a post-reflection state, applies the lumped product.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class NoiseModel:
    """Imperfection parameters. All probabilities in [0, 1].

    ``dark_total`` is the summed dark-count probability over the four erasure
    detectors (each detector fires with ``dark_total / 4``, at most one extra
    count per shot).  ``mis_herald_mix`` overrides the depolarizing weight
    applied to heralded spin states; when ``None`` it is derived from
    ``eps_mw`` via the mis-heralding formula where a pipeline needs it.
    """

    transmission_gate: float = 1.0
    transmission_path: float = 1.0
    dark_total: float = 0.0
    lo_alpha: complex = 0.45
    eps_mw: float = 0.0
    mis_herald_mix: float | None = None
    init_z_visibility: float = 1.0
    readout_flip: float = 0.0

    def __post_init__(self) -> None:
        for name in ("transmission_gate", "transmission_path", "dark_total", "eps_mw", "readout_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"noise.{name}={v} outside [0, 1]")
        if not 0.0 <= self.init_z_visibility <= 1.0:
            raise ValueError(f"noise.init_z_visibility={self.init_z_visibility} outside [0, 1]")
        if self.mis_herald_mix is not None and not 0.0 <= self.mis_herald_mix <= 1.0:
            raise ValueError(f"noise.mis_herald_mix={self.mis_herald_mix} outside [0, 1]")
        if abs(self.lo_alpha) < 0:
            raise ValueError("unreachable")

    @property
    def transmission(self) -> float:
        """Lumped source-to-detector transmission (gate times path)."""
        return self.transmission_gate * self.transmission_path

    @classmethod
    def ideal(cls, lo_alpha: complex = 0.45) -> "NoiseModel":
        return cls(lo_alpha=lo_alpha)

    @classmethod
    def experiment(cls, protocol: str = "nonlocal") -> "NoiseModel":
        """Calibrated defaults: 15% total transmission split 0.5 x 0.3,
        1e-2 dark probability per detector, 6% MW error, and the protocol's
        local-oscillator amplitude (0.45 time-bin, 0.55 non-local)."""
        if protocol not in ("timebin", "nonlocal"):
            raise ValueError(f"unknown protocol {protocol!r}")
        return cls(
            transmission_gate=0.5,
            transmission_path=0.3,
            dark_total=4e-2,
            lo_alpha=0.45 if protocol == "timebin" else 0.55,
            eps_mw=0.06,
        )

    def with_(self, **kw) -> "NoiseModel":
        return replace(self, **kw)
