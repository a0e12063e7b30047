"""qmisim: quantum-memory-assisted non-local interferometry simulator.

Subpackages
-----------

``hilbert``
    Sparse hybrid Fock/spin states, channels, measurements and the dense
    density-matrix oracle.
``spin_photon``
    Spin-photon gate primitives (reflection amplitude and phase flavors, the
    photon-nucleus entangler, the heralded two-electron projection).
``erasure``
    Local-oscillator photon erasure: click amplitudes, acceptance strategies,
    Pauli feedback, detector noise, performance maps.
``protocols``
    End-to-end pipelines: parallel entanglement generation, time-bin sensing
    on a single station, and the two-station non-local phase measurement.
``metrics``
    Fisher information, SNR and visibility analysis plus budget arithmetic.
``schemes``
    Long-baseline scheme comparison (direct detection, source-based and
    memory-based non-local measurement).
``cli``
    Deterministic batch front-end writing JSON summaries and CSV curves.
"""

__version__ = "0.1.0"
