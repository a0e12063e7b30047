"""Estimation theory and budget arithmetic.

Fisher information of the post-selected parity measurement, its closed forms
with and without non-destructive heralding (and with mis-heralding), the
thermal-state reduction of a phase-randomized weak coherent signal, cosine
visibility fitting, and multiplicative efficiency/error budgets.

Outcome model: one shot yields ``discarded`` with probability ``1 - p_succ``
or a parity ``+/-`` with probability ``p_succ (1 +/- V cos phi) / 2``.  The
discarded outcome carries no phase dependence, so the Fisher information is
``p_succ V^2 sin^2 phi / (1 - V^2 cos^2 phi)`` and the closed forms below
are its value at the most sensitive point ``phi = pi/2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class OutcomeModel:
    """Heralded-parity outcome distribution ``P(y | phi)``."""

    p_succ: float
    visibility: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_succ <= 1.0:
            raise ValueError(f"p_succ={self.p_succ} outside [0, 1]")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility={self.visibility} outside [0, 1]")

    def probabilities(self, phi: float) -> dict[str, float]:
        c = math.cos(phi)
        return {
            "discarded": 1.0 - self.p_succ,
            "+": self.p_succ * (1.0 + self.visibility * c) / 2.0,
            "-": self.p_succ * (1.0 - self.visibility * c) / 2.0,
        }


def fisher_information(
    model: OutcomeModel | Callable[[float], dict[str, float]],
    phi: float,
    step: float = 1e-5,
) -> float:
    """Fisher information ``sum_y (d_phi P)^2 / P`` of the outcome model.

    For :class:`OutcomeModel` the derivative is analytic; for a callable
    returning outcome probabilities the derivative is a central difference
    with Richardson extrapolation (steps ``step`` and ``step/2``).
    """
    if isinstance(model, OutcomeModel):
        v, p = model.visibility, model.p_succ
        c, s = math.cos(phi), math.sin(phi)
        denom = 1.0 - v * v * c * c
        if denom <= 0.0:
            raise ValueError("P(y|phi)=0 with nonzero derivative: Fisher information undefined")
        return p * v * v * s * s / denom

    probs = model(phi)
    if abs(sum(probs.values()) - 1.0) > 1e-9:
        raise ValueError("outcome probabilities must sum to 1")

    def derivative(y: str) -> float:
        d1 = (model(phi + step)[y] - model(phi - step)[y]) / (2.0 * step)
        h = step / 2.0
        d2 = (model(phi + h)[y] - model(phi - h)[y]) / (2.0 * h)
        return (4.0 * d2 - d1) / 3.0

    fi = 0.0
    for y, p in probs.items():
        d = derivative(y)
        if p <= 1e-15:
            if abs(d) > 1e-9:
                raise ValueError(f"P({y}|phi)=0 with nonzero derivative: Fisher information undefined")
            continue
        fi += d * d / p
    return fi


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def fi_heralded(mu: float, eta_erasure: float, eta_herald: float, v_bar: float) -> float:
    """Heralded Fisher information
    ``eta_e eta_h vbar^2 mu^2 e^{-2 mu} / (1 - e^{-mu})``; linear in ``mu``
    for weak signals."""
    _check_fi_args(mu, eta_erasure, eta_herald, v_bar)
    if mu == 0.0:
        return 0.0
    return eta_erasure * eta_herald * v_bar**2 * mu**2 * math.exp(-2.0 * mu) / (-math.expm1(-mu))


def fi_unheralded(mu: float, eta_erasure: float, eta_herald: float, v_bar: float) -> float:
    """Unheralded Fisher information
    ``eta_e (eta_h vbar)^2 mu^2 e^{-2 mu}``; quadratic for weak signals."""
    _check_fi_args(mu, eta_erasure, eta_herald, v_bar)
    return eta_erasure * (eta_herald * v_bar) ** 2 * mu**2 * math.exp(-2.0 * mu)


def fi_misherald(
    mu: float, eta_erasure: float, eta_herald: float, v_bar: float, eps_mh: float
) -> float:
    """Heralded Fisher information with false heralds of probability
    ``eps_mh``; crosses over from linear to quadratic scaling around
    ``mu = eps_mh / eta_herald``."""
    _check_fi_args(mu, eta_erasure, eta_herald, v_bar)
    if not 0.0 <= eps_mh <= 1.0:
        raise ValueError(f"eps_mh={eps_mh} outside [0, 1]")
    if mu == 0.0:
        return 0.0
    denom = 1.0 - math.exp(-mu) * (1.0 - eps_mh / eta_herald)
    return eta_erasure * eta_herald * v_bar**2 * mu**2 * math.exp(-2.0 * mu) / denom


def _check_fi_args(mu: float, eta_erasure: float, eta_herald: float, v_bar: float) -> None:
    if mu < 0.0:
        raise ValueError(f"mu={mu} must be >= 0")
    if not 0.0 < eta_herald <= 1.0:
        raise ValueError(f"eta_herald={eta_herald} outside (0, 1]")
    for name, v in (("eta_erasure", eta_erasure), ("v_bar", v_bar)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")


def p_mh(eps_mw: float, eta_herald: float, mu: float) -> float:
    """Probability that a herald is false given any herald fired:
    ``eps_mw / (eta_herald mu + eps_mw)``."""
    if eps_mw < 0.0 or eta_herald < 0.0 or mu < 0.0:
        raise ValueError("p_mh arguments must be nonnegative")
    denom = eta_herald * mu + eps_mw
    if denom == 0.0:
        raise ValueError("p_mh undefined for all-zero inputs")
    return eps_mw / denom


def snr_local_ideal(mu: float) -> float:
    """Loss-free SNR of an ideal local (LO-based) measurement, ``mu/(2+mu)``."""
    if mu < 0.0:
        raise ValueError(f"mu={mu} must be >= 0")
    return mu / (2.0 + mu)


def loglog_slope(f: Callable[[float], float], mu_lo: float, mu_hi: float, n: int = 9) -> float:
    """Least-squares slope of ``log f`` vs ``log mu`` over a log-spaced grid."""
    mus = np.geomspace(mu_lo, mu_hi, n)
    ys = np.log([f(m) for m in mus])
    return float(np.polyfit(np.log(mus), ys, 1)[0])


def local_loglog_slope(f: Callable[[float], float], mu: float, rel_step: float = 1e-3) -> float:
    lo, hi = mu * (1.0 - rel_step), mu * (1.0 + rel_step)
    return float((math.log(f(hi)) - math.log(f(lo))) / (math.log(hi) - math.log(lo)))


# ---------------------------------------------------------------------------
# Coherent-state thermalization
# ---------------------------------------------------------------------------


def signal_density_matrix(mu: float, phi_left: float, phi_right: float) -> np.ndarray:
    """Weak-signal two-station density matrix in the ``{|00>, |01>, |10>}``
    basis for fixed local phases (unnormalized, trace ``1 + mu``)."""
    s = math.sqrt(mu / 2.0)
    el, er = np.exp(1j * phi_left), np.exp(1j * phi_right)
    ed = np.exp(1j * (phi_left - phi_right))
    return np.array(
        [
            [1.0, np.conj(er) * s, np.conj(el) * s],
            [er * s, mu / 2.0, np.conj(ed) * mu / 2.0],
            [el * s, ed * mu / 2.0, mu / 2.0],
        ],
        dtype=complex,
    )


def thermalize(
    mu: float,
    phi: float,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Phase-averaged signal density matrix over uniform local phases at
    fixed difference ``phi``.

    The analytic path (``n_samples=None``) zeroes the vacuum coherences and
    keeps ``<01|rho|10> = e^{-i phi} mu / 2`` exactly; the Monte Carlo path
    averages :func:`signal_density_matrix` over sampled phase offsets and
    converges to it.
    """
    if mu < 0.0:
        raise ValueError(f"mu={mu} must be >= 0")
    if mu > 0.3:
        warnings.warn(f"weak-signal form used outside its regime (mu={mu} > 0.3)", stacklevel=2)
    if n_samples is None:
        half = mu / 2.0
        ed = np.exp(1j * phi)
        return np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, half, np.conj(ed) * half],
                [0.0, ed * half, half],
            ],
            dtype=complex,
        )
    rng = np.random.default_rng() if rng is None else rng
    acc = np.zeros((3, 3), dtype=complex)
    for psi in rng.uniform(0.0, 2.0 * math.pi, n_samples):
        acc += signal_density_matrix(mu, psi + phi, psi)
    return acc / n_samples


# ---------------------------------------------------------------------------
# Visibility fitting and budgets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    phi0: float
    residual: float


def visibility_fit(
    phase_grid: Sequence[float],
    parity_values: Sequence[float],
    weights: Sequence[float] | None = None,
) -> VisibilityFit:
    """Weighted linear least squares of ``V cos(phi + phi0)`` via the
    ``(cos phi, sin phi)`` regressors; ``V >= 0`` with the sign folded into
    ``phi0``.  Residual is the weighted RMS misfit."""
    phis = np.asarray(phase_grid, dtype=float)
    ys = np.asarray(parity_values, dtype=float)
    if phis.size < 4:
        raise ValueError("need at least 4 phase points")
    if phis.size != ys.size:
        raise ValueError("phase grid and parity values differ in length")
    if np.ptp(phis) < 1e-9:
        raise ValueError("degenerate phase grid")
    w = np.ones_like(phis) if weights is None else np.sqrt(np.asarray(weights, dtype=float))
    design = np.column_stack([np.cos(phis), np.sin(phis)])
    coeff, *_ = np.linalg.lstsq(design * w[:, None], ys * w, rcond=None)
    a, b = coeff  # fit = a cos + b sin = V cos(phi + phi0)
    v = float(math.hypot(a, b))
    phi0 = float(math.atan2(-b, a))
    resid = float(np.sqrt(np.mean((w * (design @ coeff - ys)) ** 2)))
    return VisibilityFit(v, phi0, resid)


@dataclass(frozen=True)
class BudgetFactor:
    name: str
    factor: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.factor <= 1.0:
            raise ValueError(f"budget factor {self.name}={self.factor} outside [0, 1]")


def budget_product(factors: Iterable[BudgetFactor | tuple[str, float] | float]) -> tuple[float, list[BudgetFactor]]:
    """Multiply a chain of efficiency/visibility factors; returns the product
    and the normalized per-row report."""
    rows: list[BudgetFactor] = []
    product = 1.0
    for f in factors:
        if isinstance(f, BudgetFactor):
            row = f
        elif isinstance(f, tuple):
            row = BudgetFactor(*f)
        else:
            row = BudgetFactor(f"factor{len(rows)}", float(f))
        rows.append(row)
        product *= row.factor
    return product, rows


#: Visibility budgets for the two sensing experiments (multiplicative rows).
TIMEBIN_VISIBILITY_BUDGET = (
    BudgetFactor("initial_state_z_visibility", 0.9),
    BudgetFactor("mis_heralding", 0.45),
    BudgetFactor("erasure_loss", 0.5),
    BudgetFactor("multi_photon", 0.95),
)

#: Per-photon insertion chain of the entanglement link (source to detector
#: input) and the detection/protocol factors that multiply it.
LINK_BUDGET = (
    BudgetFactor("fiber_coupling", 0.70),
    BudgetFactor("circulator", 0.70),
    BudgetFactor("cavity_reflectivity", 0.80),
    BudgetFactor("aom_switch", 0.50),
    BudgetFactor("frequency_shift_filter", 0.074),
)

SNSPD_EFFICIENCY = BudgetFactor("snspd", 0.95)
ENTANGLING_PROTOCOL_EFFICIENCY = BudgetFactor("entangling_protocol", 0.125)
DUTY_CYCLE = BudgetFactor("duty_cycle", 0.8)


def entanglement_success_probability(mu: float) -> float:
    """Per-shot entanglement success probability at WCS mean photon number
    ``mu``: link chain x detector x protocol x duty cycle x mu."""
    link, _ = budget_product(LINK_BUDGET)
    return link * SNSPD_EFFICIENCY.factor * ENTANGLING_PROTOCOL_EFFICIENCY.factor * DUTY_CYCLE.factor * mu


# ---------------------------------------------------------------------------
# Maximum-likelihood phase estimation (Cramer-Rao check)
# ---------------------------------------------------------------------------


def ml_phase_estimate(counts: dict[str, int], model: OutcomeModel, grid: int = 4096) -> float:
    """Maximum-likelihood phase on [0, pi] from outcome counts under the
    heralded-parity model (discarded shots carry no information)."""
    phis = np.linspace(1e-6, math.pi - 1e-6, grid)
    c = np.cos(phis)
    ll = counts.get("+", 0) * np.log1p(model.visibility * c) + counts.get("-", 0) * np.log1p(
        -model.visibility * c
    )
    return float(phis[int(np.argmax(ll))])


def simulate_phase_estimation(
    model: OutcomeModel,
    phi_true: float,
    shots: int,
    trials: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample ML phase estimates over repeated experiments of ``shots`` shots."""
    probs = model.probabilities(phi_true)
    labels = list(probs)
    p = np.array([probs[k] for k in labels])
    estimates = np.empty(trials)
    for t in range(trials):
        draw = rng.multinomial(shots, p)
        counts = dict(zip(labels, draw))
        estimates[t] = ml_phase_estimate(counts, model)
    return estimates
