"""
Renyi differential privacy accounting for Gaussian mechanisms

A Gaussian mechanism with sensitivity K and noise standard deviation s is
``(alpha, alpha * K^2 / (2 s^2))``-RDP for every order ``alpha > 1``. Costs
add up under composition and convert to ``(epsilon, delta)``-DP through
``epsilon = min_alpha eps(alpha) + log(1/delta) / (alpha - 1)``.
"""

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from autodp import rdp_bank

logger = logging.getLogger(__name__)

DEFAULT_ORDERS: Tuple[float, ...] = (1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0)


class NoiseConvention(str, enum.Enum):
    """How a noise parameter turns into a standard deviation.

    ``multiplier``: std = sigma * K. ``variance``: variance = sigma^2 * K,
    so std = sigma * sqrt(K). ``absolute``: the std is given directly.
    """

    MULTIPLIER = "multiplier"
    VARIANCE = "variance"
    ABSOLUTE = "absolute"


def _positive(name: str, value: Optional[float]) -> float:
    if value is None or not math.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return float(value)


@dataclass(frozen=True)
class GaussianMechanism:
    """
    Gaussian noise calibrated to a sensitivity.

    Parameters
    ----------
    sensitivity : float
        Sensitivity K (> 0).
    noise_multiplier : float, optional
        sigma for the ``multiplier`` and ``variance`` conventions.
    noise_std : float, optional
        Standard deviation for the ``absolute`` convention.
    convention : NoiseConvention, default "multiplier"
    """

    sensitivity: float
    noise_multiplier: Optional[float] = None
    noise_std: Optional[float] = None
    convention: NoiseConvention = NoiseConvention.MULTIPLIER

    def __post_init__(self):
        object.__setattr__(self, "convention", NoiseConvention(self.convention))
        _positive("sensitivity", self.sensitivity)
        if self.convention == NoiseConvention.ABSOLUTE:
            _positive("noise_std", self.noise_std)
        else:
            _positive("noise_multiplier", self.noise_multiplier)

    @classmethod
    def absolute(cls, sensitivity: float, noise_std: float) -> "GaussianMechanism":
        return cls(sensitivity, noise_std=noise_std, convention=NoiseConvention.ABSOLUTE)

    @classmethod
    def from_noise(
        cls, sensitivity: float, noise: float, convention: NoiseConvention
    ) -> "GaussianMechanism":
        """Mechanism whose noise parameter ``noise`` is read under ``convention``."""
        if NoiseConvention(convention) == NoiseConvention.ABSOLUTE:
            return cls.absolute(sensitivity, noise)
        return cls(sensitivity, noise, convention=convention)

    @property
    def std(self) -> float:
        if self.convention == NoiseConvention.MULTIPLIER:
            return self.noise_multiplier * self.sensitivity
        if self.convention == NoiseConvention.VARIANCE:
            return self.noise_multiplier * math.sqrt(self.sensitivity)
        return self.noise_std

    @property
    def ratio(self) -> float:
        """Sensitivity over noise std, computed without needless rounding."""
        if self.convention == NoiseConvention.MULTIPLIER:
            return 1.0 / self.noise_multiplier
        if self.convention == NoiseConvention.VARIANCE:
            return math.sqrt(self.sensitivity) / self.noise_multiplier
        return self.sensitivity / self.noise_std


def noise_std(sensitivity: float, noise: float, convention: NoiseConvention) -> float:
    """Noise standard deviation for ``noise`` under ``convention``."""
    return GaussianMechanism.from_noise(sensitivity, noise, convention).std


def rdp_epsilon(mech: GaussianMechanism, alpha: float) -> float:
    """RDP cost ``alpha * (K / s)^2 / 2`` of one mechanism at order ``alpha``."""
    if not (math.isfinite(alpha) and alpha > 1):
        raise ValueError(f"RDP order must be a finite number > 1, got {alpha}")
    return float(rdp_bank.RDP_gaussian({"sigma": 1.0 / mech.ratio}, alpha))


def required_noise_std(sensitivity: float, alpha: float, target_epsilon: float) -> float:
    """Smallest noise std giving RDP cost ``target_epsilon`` at order ``alpha``."""
    _positive("sensitivity", sensitivity)
    _positive("target_epsilon", target_epsilon)
    if not (math.isfinite(alpha) and alpha > 1):
        raise ValueError(f"RDP order must be a finite number > 1, got {alpha}")
    return sensitivity * math.sqrt(alpha / (2.0 * target_epsilon))


@dataclass(frozen=True)
class LedgerEvent:
    step: int
    sensitivity: float
    noise_std: float
    noise_multiplier: Optional[float]
    convention: str


class PrivacyLedger:
    """
    Accumulated RDP cost on a fixed grid of orders.

    Parameters
    ----------
    orders : iterable of float, optional
        Orders to track; defaults to ``DEFAULT_ORDERS``.
    extra_orders : iterable of float, optional
        Orders added to the grid.
    """

    def __init__(
        self, orders: Optional[Iterable[float]] = None, extra_orders: Iterable[float] = ()
    ):
        grid = sorted(set(float(a) for a in (orders or DEFAULT_ORDERS)) | set(extra_orders))
        bad = [a for a in grid if not (math.isfinite(a) and a > 1)]
        if bad or not grid:
            raise ValueError(f"RDP orders must be finite numbers > 1, got {bad or grid}")
        self.orders: Tuple[float, ...] = tuple(grid)
        self.totals = np.zeros(len(self.orders))
        self.events: List[LedgerEvent] = []

    def __len__(self) -> int:
        return len(self.events)

    def __repr__(self) -> str:
        return f"PrivacyLedger(events={len(self.events)}, orders={list(self.orders)})"

    @property
    def rdp(self) -> Dict[float, float]:
        return {alpha: float(total) for alpha, total in zip(self.orders, self.totals)}

    def epsilon(self, alpha: float) -> float:
        if alpha not in self.orders:
            raise ValueError(f"Order {alpha} not tracked. Available orders: {list(self.orders)}")
        return float(self.totals[self.orders.index(alpha)])

    def compose(self, mech: GaussianMechanism, step: Optional[int] = None) -> "PrivacyLedger":
        costs = np.array([rdp_epsilon(mech, alpha) for alpha in self.orders])
        self.totals = self.totals + costs
        self.events.append(
            LedgerEvent(
                step=len(self.events) if step is None else int(step),
                sensitivity=float(mech.sensitivity),
                noise_std=float(mech.std),
                noise_multiplier=mech.noise_multiplier,
                convention=mech.convention.value,
            )
        )
        return self

    def to_eps_delta(self, delta: float) -> Tuple[float, float]:
        if not 0 < delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        orders = np.array(self.orders)
        candidates = self.totals + math.log(1.0 / delta) / (orders - 1.0)
        # argmin returns the first minimum, i.e. the smaller order on ties
        best = int(np.argmin(candidates))
        return float(candidates[best]), self.orders[best]

    def snapshot(self) -> "PrivacyLedger":
        copy = PrivacyLedger(self.orders)
        copy.totals = self.totals.copy()
        copy.events = list(self.events)
        return copy

    def to_dict(self, deltas: Sequence[float] = ()) -> Dict[str, object]:
        conversions = []
        for delta in deltas:
            eps, alpha = self.to_eps_delta(delta)
            conversions.append({"delta": delta, "epsilon": eps, "order": alpha})
        return {
            "orders": list(self.orders),
            "rdp": [float(t) for t in self.totals],
            "events": [asdict(event) for event in self.events],
            "conversions": conversions,
        }

    def to_json(self, deltas: Sequence[float] = (), indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(deltas), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PrivacyLedger":
        """Rebuild a ledger by composing the events of an export again."""
        if "events" not in data:
            raise ValueError("Ledger export has no 'events'")
        ledger = cls(data.get("orders"))
        for event in data["events"]:
            convention = NoiseConvention(event["convention"])
            noise = (
                event["noise_std"]
                if convention == NoiseConvention.ABSOLUTE
                else event["noise_multiplier"]
            )
            mech = GaussianMechanism.from_noise(event["sensitivity"], noise, convention)
            ledger.compose(mech, step=event.get("step"))
        return ledger


def compose(ledger: PrivacyLedger, mech: GaussianMechanism) -> PrivacyLedger:
    """Add one mechanism's cost at every order and log the event."""
    return ledger.compose(mech)


def to_eps_delta(ledger: PrivacyLedger, delta: float) -> Tuple[float, float]:
    """Best ``(epsilon, order)`` over the ledger's grid for a given ``delta``."""
    return ledger.to_eps_delta(delta)


@dataclass
class StepSensitivity:
    """Noise and clipping decisions for one step calibrated to ``k_step``."""

    noise_std: float
    no_clip: np.ndarray
    clip_factors: np.ndarray
    violations: np.ndarray

    @property
    def clipped(self) -> int:
        return int(self.violations.size)


def clip_factors(norms: Sequence[float], bound: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-sample scale factors ``min(1, bound / norm)``.

    Returns
    -------
    (np.ndarray, np.ndarray)
        Boolean mask of samples left unchanged and the factors; a sample
        with a non-finite norm gets factor 0.
    """
    _positive("bound", bound)
    values = np.asarray(norms, dtype=np.float64)
    no_clip = values <= bound
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = np.where(no_clip, 1.0, bound / values)
    return no_clip, np.where(np.isfinite(factors), factors, 0.0)


def per_step_sensitivity_noise(
    norms: Sequence[float],
    k_step: float,
    noise_multiplier: float = 1.0,
    convention: NoiseConvention = NoiseConvention.MULTIPLIER,
) -> StepSensitivity:
    """
    Calibrate one step to a per-step sensitivity.

    Samples whose gradient norm is at most ``k_step`` pass unchanged; any
    sample above it (possible only when its inputs break the declared box)
    is scaled down to ``k_step`` and reported in ``violations``.

    Parameters
    ----------
    norms : sequence of float
        Per-sample gradient norms.
    k_step : float
        Sensitivity for this step (> 0).
    noise_multiplier : float, default 1.0
        Noise parameter, read according to ``convention``.
    convention : NoiseConvention, default "multiplier"

    Returns
    -------
    StepSensitivity
    """
    no_clip, factors = clip_factors(norms, k_step)
    violations = np.flatnonzero(~no_clip)
    if violations.size:
        logger.warning(
            "%d sample(s) exceed the sensitivity bound %g; their inputs violate the declared box",
            violations.size,
            k_step,
        )
    std = noise_std(k_step, noise_multiplier, convention)
    return StepSensitivity(std, no_clip, factors, violations)
