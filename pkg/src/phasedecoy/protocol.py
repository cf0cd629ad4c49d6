"""Three-state time-bin protocol: encodings, Bob's receiver, statistics and cross-clicks.

Alice prepares two temporal modes (early = mode 0, late = mode 1) from one
laser pulse.  Signal ``0`` keeps only the late pulse, ``1`` only the early
pulse and ``+`` splits the pulse evenly.  Bob routes a fraction ``t_X`` of
the light to a delay interferometer (the X line) and the rest to a
time-of-arrival detector (the Z line).  Channel loss is routed into two
discarded modes, so every statistic below is an exact linear-optics
computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Mapping

import numpy as np

from .fock import (
    FockOperator,
    ModeSpace,
    linear_network_isometry,
    partial_trace,
)

SIGNALS = ("0", "1", "+")

NO_CLICK = "no-click"
Z_EARLY = "Z-early"
Z_LATE = "Z-late"
X_MINUS = "X-minus"
MULTI = "multi"

# output modes of Bob's network
ZE, ZL, XM_OE, XM_MID, XM_OL, XP_OE, XP_MID, XP_OL, LOSS_E, LOSS_L = range(10)

OBSERVED_BINS = {Z_EARLY: (ZE,), Z_LATE: (ZL,), X_MINUS: (XM_MID,)}
CROSS_CLICK_BINS = {"Z": (ZE, ZL), "X-outer": (XM_OE, XM_OL)}


@dataclass(frozen=True)
class EventSchema:
    """Coarse-grained outcomes over the observed bins Z-early, Z-late and X-minus middle.

    A single click names the event; two or more clicks are ``multi``.
    """

    events: tuple = (NO_CLICK, Z_EARLY, Z_LATE, X_MINUS, MULTI)

    def classify(self, clicks: Mapping[str, bool]) -> str:
        fired = [label for label in OBSERVED_BINS if clicks[label]]
        if not fired:
            return NO_CLICK
        if len(fired) > 1:
            return MULTI
        return fired[0]

    def index(self, event: str) -> int:
        return self.events.index(event)


@dataclass(frozen=True)
class ProtocolParams:
    signal_intensity: float = 0.5
    decoy_intensities: tuple = (0.0, 0.5)
    priors: tuple = (1 / 3, 1 / 3, 1 / 3)
    attenuation: float = 0.16
    distance: float = 0.0
    t_x: float = 0.1

    def __post_init__(self):
        if len(self.priors) != len(SIGNALS) or abs(sum(self.priors) - 1) > 1e-12:
            raise ValueError("priors must be three probabilities summing to 1")
        if any(p < 0 for p in self.priors):
            raise ValueError("priors must be non-negative")
        if not 0 < self.t_x < 1:
            raise ValueError("t_x must lie strictly between 0 and 1")
        if self.attenuation < 0 or self.distance < 0:
            raise ValueError("attenuation and distance must be non-negative")
        if self.signal_intensity < 0 or any(mu < 0 for mu in self.decoy_intensities):
            raise ValueError("intensities must be non-negative")

    @property
    def eta(self) -> float:
        return transmittance(self.distance, self.attenuation)

    @property
    def intensities(self) -> tuple:
        """Signal first, then decoys, duplicates removed."""
        out = [float(self.signal_intensity)]
        for mu in self.decoy_intensities:
            if not any(abs(mu - m) < 1e-15 for m in out):
                out.append(float(mu))
        return tuple(out)

    def prior(self, signal: str) -> float:
        return float(self.priors[SIGNALS.index(signal)])


def transmittance(distance: float, attenuation: float = 0.16) -> float:
    return float(10 ** (-attenuation * distance / 10))


# -- Alice ---------------------------------------------------------------------------


def preparation_isometry(signal: str, cutoff: int) -> FockOperator:
    """Map a single-mode pulse onto the two time bins for ``signal``."""
    if signal not in SIGNALS:
        raise ValueError(f"unknown signal label {signal!r}")
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    src = ModeSpace(1, cutoff)
    dst = ModeSpace(2, cutoff)
    V = np.zeros((dst.dim, src.dim), dtype=complex)
    for n in range(cutoff + 1):
        if signal == "0":
            V[dst.index((0, n)), n] = 1.0
        elif signal == "1":
            V[dst.index((n, 0)), n] = 1.0
        else:
            for k in range(n + 1):
                V[dst.index((k, n - k)), n] = np.sqrt(comb(n, k) / 2.0**n)
    return FockOperator(dst, V, src)


def signal_amplitudes(signal: str, mu: float) -> np.ndarray:
    """Coherent amplitudes of the two time bins for base intensity ``mu``."""
    a = np.sqrt(mu)
    return {"0": np.array([0.0, a]), "1": np.array([a, 0.0]), "+": np.array([a, a]) / np.sqrt(2)}[signal]


# -- Bob -----------------------------------------------------------------------------


def bob_network(params: ProtocolParams, eta: float | None = None) -> tuple[np.ndarray, dict[str, tuple[int, ...]]]:
    """Mode map from the two arriving time bins to Bob's ten output modes.

    Loss ``1 - eta`` is routed into two discarded modes.  Returns the map and
    labelled observed bins (the event bins plus the outer X-minus bins used
    for cross-clicks).
    """
    eta = params.eta if eta is None else float(eta)
    t = params.t_x
    z = np.sqrt((1 - t) * eta)
    x = 0.5 * np.sqrt(t * eta)
    loss = np.sqrt(1 - eta)
    U = np.zeros((10, 2))
    U[ZE, 0] = z
    U[ZL, 1] = z
    U[XM_OE, 0] = x
    U[XM_MID] = [x, -x]
    U[XM_OL, 1] = x
    U[XP_OE, 0] = x
    U[XP_MID] = [x, x]
    U[XP_OL, 1] = x
    U[LOSS_E, 0] = loss
    U[LOSS_L, 1] = loss
    bins = dict(OBSERVED_BINS)
    bins["X-minus-outer"] = (XM_OE, XM_OL)
    return U, bins


def _click_weights(space: ModeSpace, bins: Mapping[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
    return {label: np.array([any(occ[m] > 0 for m in modes) for occ in space.basis]) for label, modes in bins.items()}


def event_povms(params: ProtocolParams, N: int, schema: EventSchema = EventSchema()) -> dict[str, FockOperator]:
    """Bob's event POVM restricted to at most ``N`` arriving photons (ideal detectors, no loss)."""
    U, _ = bob_network(params, eta=1.0)
    V = linear_network_isometry(U, N)
    clicks = _click_weights(V.space, OBSERVED_BINS)
    out = {}
    for event in schema.events:
        keep = np.zeros(V.space.dim)
        for i in range(V.space.dim):
            if schema.classify({k: bool(v[i]) for k, v in clicks.items()}) == event:
                keep[i] = 1.0
        M = V.matrix.conj().T @ (keep[:, None] * V.matrix)
        out[event] = FockOperator(V.domain, 0.5 * (M + M.conj().T))
    return out


def cross_click_povm(params: ProtocolParams, N: int) -> FockOperator:
    """Any Z click together with any outer X-minus click, middle bin ignored."""
    U, _ = bob_network(params, eta=1.0)
    V = linear_network_isometry(U, N)
    clicks = _click_weights(V.space, CROSS_CLICK_BINS)
    keep = (clicks["Z"] & clicks["X-outer"]).astype(float)
    M = V.matrix.conj().T @ (keep[:, None] * V.matrix)
    return FockOperator(V.domain, 0.5 * (M + M.conj().T))


def loss_channel_apply(state: FockOperator, eta: float) -> FockOperator:
    """Pure loss with transmittance ``eta`` on every mode of a two-mode state."""
    cutoff = state.space.cutoff
    t, r = np.sqrt(eta), np.sqrt(1 - eta)
    U = np.array([[t, 0], [0, t], [r, 0], [0, r]])
    V = linear_network_isometry(U, cutoff)
    big = V @ state @ V.dag
    return partial_trace(big, [0, 1])


# -- statistics ----------------------------------------------------------------------


@dataclass(frozen=True)
class Statistics:
    """``gamma[(signal, mu)]`` is a probability vector over ``schema.events``."""

    gamma: dict
    cross_click: dict
    schema: EventSchema = field(default_factory=EventSchema)
    eta: float = 1.0


def simulate_statistics(params: ProtocolParams, schema: EventSchema = EventSchema()) -> Statistics:
    """Event probabilities of coherent pulses through the loss-only channel and Bob's receiver."""
    U, bins = bob_network(params)
    gamma, cc = {}, {}
    for signal in SIGNALS:
        for mu in params.intensities:
            out = U @ signal_amplitudes(signal, mu)
            p_click = 1 - np.exp(-np.abs(out) ** 2)
            probs = np.zeros(len(schema.events))
            labels = list(OBSERVED_BINS)
            for bits in np.ndindex(*(2,) * len(labels)):
                clicks = {lab: bool(b) for lab, b in zip(labels, bits)}
                p = 1.0
                for lab, b in clicks.items():
                    pc = p_click[OBSERVED_BINS[lab][0]]
                    p *= pc if b else 1 - pc
                probs[schema.index(schema.classify(clicks))] += p
            gamma[(signal, mu)] = probs
            p_z = 1 - np.exp(-np.sum(np.abs(out[[ZE, ZL]]) ** 2))
            p_x = 1 - np.exp(-np.sum(np.abs(out[[XM_OE, XM_OL]]) ** 2))
            cc[(signal, mu)] = float(p_z * p_x)
    return Statistics(gamma, cc, schema, params.eta)


# -- cross-click weight bound ------------------------------------------------------------


def cross_click_prob_fock(n: int, t: float) -> float:
    """Cross-click probability of ``n`` photons split over the two time bins (any split)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    if n <= 1:
        return 0.0
    val = 1 - t**n - (1 - t / 4) ** n + (3 * t / 4) ** n
    return float(min(1.0, max(0.0, val)))


def weight_outside_bound(p_cc: float, N: int, t: float) -> float:
    """Upper bound on the probability of more than ``N`` photons reaching Bob."""
    if p_cc <= 0:
        return 0.0
    f = cross_click_prob_fock(N + 1, t)
    if f <= 0:
        return 1.0
    return float(min(1.0, p_cc / f))
