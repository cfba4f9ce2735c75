"""
Discrete-time RC thermal model of a multizone building served by one AHU.

Each zone i is a single thermal node with resistance R_i to outdoors and
capacitance C_i.  Over a slot of length tau the zone evolves as

    T_next = d_i*T + b_i*m*(T_s - T) + a_i*T_out + (tau/C_i)*q

with a_i = tau/(R_i C_i), b_i = tau*C_a/C_i and d_i = 1 - a_i.  Only cooling
is modelled: supply air T_s is colder than every admissible indoor
temperature, so more airflow always means a lower next temperature.
Inter-zone conduction is ignored.

Units: degC, g/s, W, J, seconds.

Functions accept either a single ``ZoneParams`` with float fields or the
stacked view of a ``Building`` whose fields are arrays over zones; arrays
broadcast against any leading batch axes of the state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegenerateDynamicsError, InvalidModelError


def derive_coefficients(r_thermal, c_thermal, tau, c_air):
    """Return ``(a, b, d)`` for the discretised zone model.

    Raises ``InvalidModelError`` when any input is non-positive or the slot is
    so long relative to R*C that ``a >= 1``.
    """
    r = np.asarray(r_thermal, dtype=float)
    c = np.asarray(c_thermal, dtype=float)
    if np.any(r <= 0) or np.any(c <= 0) or tau <= 0 or c_air <= 0:
        raise InvalidModelError("R, C, tau and C_a must all be positive")
    a = tau / (r * c)
    if np.any(a >= 1.0):
        raise InvalidModelError(
            f"tau/(R*C) = {np.max(a):.4g} >= 1: slot too long for the zone time constant"
        )
    b = tau * c_air / c
    d = 1.0 - a
    if a.ndim == 0:
        return float(a), float(b), float(d)
    return a, b, d


@dataclass(frozen=True)
class BuildingConfig:
    """Plant constants shared by all zones."""

    n_zones: int
    tau: float = 300.0  # s
    c_air: float = 1.012  # J/(g degC)
    t_supply: float = 12.8  # degC
    gamma: float = 0.95  # AHU damper position (return-air fraction)
    eta: float = 0.8879  # cooling-coil efficiency
    cop: float = 5.9153  # chiller COP
    mu: float = 2e-6  # fan coefficient, W/(g/s)^3
    m_total_cap: float = 1400.0  # g/s

    def __post_init__(self):
        if self.n_zones < 1:
            raise InvalidModelError("need at least one zone")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidModelError("gamma must lie in [0, 1]")
        for name in ("tau", "c_air", "eta", "cop", "mu"):
            if getattr(self, name) <= 0:
                raise InvalidModelError(f"{name} must be positive")
        if self.m_total_cap < 0:
            raise InvalidModelError("m_total_cap must be non-negative")

    @property
    def coil_factor(self) -> float:
        """C_a / (eta * COP), J/(g degC) of electrical energy per unit airflow."""
        return self.c_air / (self.eta * self.cop)


@dataclass(frozen=True, eq=False)
class ZoneParams:
    """Per-zone constants.  Fields are floats for one zone or arrays over zones."""

    r_thermal: float
    c_thermal: float
    a: float
    b: float
    d: float
    t_min: float
    t_max: float
    m_min: float
    m_max: float
    phi: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        a, b, d = (np.asarray(x, dtype=float) for x in (self.a, self.b, self.d))
        if np.any(a <= 0) or np.any(a >= 1):
            raise InvalidModelError("coefficient a must lie in (0, 1)")
        if np.any(b <= 0):
            raise InvalidModelError("coefficient b must be positive")
        if np.any(d != 1.0 - a):
            raise InvalidModelError("d must equal 1 - a exactly")
        if np.any(np.asarray(self.t_min) >= np.asarray(self.t_max)):
            raise InvalidModelError("t_min must be below t_max")
        m_min, m_max = np.asarray(self.m_min), np.asarray(self.m_max)
        if np.any(m_min < 0) or np.any(m_min >= m_max):
            raise InvalidModelError("need 0 <= m_min < m_max")
        if np.any(np.asarray(self.phi) < 0):
            raise InvalidModelError("phi must be non-negative")

    @classmethod
    def from_rc(cls, r_thermal, c_thermal, cfg: BuildingConfig, *, t_min, t_max,
                m_min, m_max, phi=0.0, delta=0.0) -> "ZoneParams":
        a, b, d = derive_coefficients(r_thermal, c_thermal, cfg.tau, cfg.c_air)
        return cls(r_thermal, c_thermal, a, b, d, t_min, t_max, m_min, m_max, phi, delta)


@dataclass(frozen=True, eq=False)
class Building:
    """A ``BuildingConfig`` together with its zones."""

    cfg: BuildingConfig
    zones: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        if len(self.zones) != self.cfg.n_zones:
            raise InvalidModelError(
                f"config declares {self.cfg.n_zones} zones, got {len(self.zones)}"
            )
        z = self.stacked
        if not self.cfg.m_total_cap < float(np.sum(z.m_max)):
            raise InvalidModelError("m_total_cap must be below the sum of zone m_max")
        if np.any(self.cfg.t_supply >= z.t_min):
            raise InvalidModelError("supply air must be colder than every zone's t_min")

    @cached_property
    def stacked(self) -> ZoneParams:
        cols = {name: np.array([getattr(zp, name) for zp in self.zones], dtype=float)
                for name in ZoneParams.__dataclass_fields__}
        return ZoneParams(**cols)

    @property
    def n_zones(self) -> int:
        return self.cfg.n_zones

    def with_zone_values(self, **values) -> "Building":
        """Copy with the named zone fields set (scalar for all zones, or one per zone)."""
        n = self.n_zones
        per_zone = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)) for k, v in values.items()}
        zones = [replace(zp, **{k: float(v[i]) for k, v in per_zone.items()})
                 for i, zp in enumerate(self.zones)]
        return Building(self.cfg, tuple(zones))

    def to_dict(self) -> dict:
        zones = {name: [float(getattr(zp, name)) for zp in self.zones]
                 for name in ("r_thermal", "c_thermal", "t_min", "t_max", "m_min", "m_max", "phi")}
        return {"building": asdict(self.cfg), "zones": zones}


@dataclass(frozen=True)
class SlotObservation:
    """Exogenous inputs seen at the start of a slot.

    ``price`` is in currency/kWh.  ``t_ref`` is the comfort target for the
    *next* slot.  ``t_ref`` and ``q`` have the zone axis last.
    """

    price: float
    t_out: float
    t_ref: np.ndarray
    q: np.ndarray


def heat_gain(zp: ZoneParams, cfg: BuildingConfig):
    """tau / C_i: temperature rise per watt of disturbance over one slot."""
    return cfg.tau / np.asarray(zp.c_thermal, dtype=float)


def free_response(t_in, t_out, q, zp: ZoneParams, cfg: BuildingConfig):
    """Next-slot temperature with zero airflow: d*T + a*T_out + (tau/C)*q."""
    return zp.d * t_in + zp.a * t_out + heat_gain(zp, cfg) * q


def step_temperature(t_in, m, t_out, q, zp: ZoneParams, cfg: BuildingConfig):
    """Advance indoor temperature by one slot under air rate ``m``."""
    return (zp.d * t_in + zp.b * m * (cfg.t_supply - t_in) + zp.a * t_out
            + heat_gain(zp, cfg) * q)


def rate_for_target(t_in, target, t_out, q, zp: ZoneParams, cfg: BuildingConfig):
    """Air rate that lands the zone exactly on ``target`` next slot (unclamped)."""
    t_in = np.asarray(t_in, dtype=float)
    if np.any(t_in <= cfg.t_supply):
        raise DegenerateDynamicsError(
            "indoor temperature must exceed the supply-air temperature in cooling mode"
        )
    return (free_response(t_in, t_out, q, zp, cfg) - target) / (zp.b * (t_in - cfg.t_supply))


@dataclass(frozen=True)
class RateInterval:
    lo: np.ndarray
    hi: np.ndarray
    empty: np.ndarray
    # unclamped rates that hit t_max / t_min exactly; used to project empty intervals
    m_at_t_max: np.ndarray
    m_at_t_min: np.ndarray


def comfort_rate_interval(t_in, t_out, q, zp: ZoneParams, cfg: BuildingConfig) -> RateInterval:
    """Air rates keeping next-slot temperature inside [t_min, t_max].

    Next temperature strictly decreases in ``m`` whenever t_in > T_s, so
    reaching t_max fixes the lower rate and reaching t_min the upper one.
    The result is intersected with [m_min, m_max]; an empty intersection is
    flagged rather than projected.
    """
    m_hot = rate_for_target(t_in, zp.t_max, t_out, q, zp, cfg)
    m_cold = rate_for_target(t_in, zp.t_min, t_out, q, zp, cfg)
    lo = np.maximum(m_hot, zp.m_min)
    hi = np.minimum(m_cold, zp.m_max)
    return RateInterval(lo=lo, hi=hi, empty=lo > hi, m_at_t_max=m_hot, m_at_t_min=m_cold)


@dataclass(frozen=True)
class ControllabilityReport:
    """Slack of each controllability inequality; ``passed`` needs all four."""

    min_rate_slack: np.ndarray  # per zone, needs >= 0
    band_margin: np.ndarray  # per zone, needs > 0
    airflow_slack: float  # building, needs >= 0
    airflow_required: np.ndarray  # per-zone terms of the airflow sum
    cooling_margin_slack: np.ndarray  # d - b*m_min per zone, needs >= 0

    @property
    def min_rate_ok(self):
        return self.min_rate_slack >= 0

    @property
    def band_margin_ok(self):
        return self.band_margin > 0

    @property
    def airflow_ok(self) -> bool:
        return bool(self.airflow_slack >= 0)

    @property
    def cooling_margin_ok(self):
        return self.cooling_margin_slack >= 0

    @property
    def passed(self) -> bool:
        return bool(np.all(self.min_rate_ok) and np.all(self.band_margin_ok) and self.airflow_ok
                    and np.all(self.cooling_margin_ok))

    def failures(self) -> list[str]:
        out = []
        for name, ok in (("min_rate", self.min_rate_ok), ("band_margin", self.band_margin_ok),
                         ("cooling_margin", self.cooling_margin_ok)):
            out += [f"{name}[zone {i}]" for i in np.flatnonzero(~np.atleast_1d(ok))]
        if not self.airflow_ok:
            out.append("airflow_cap")
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_rate_slack": _floats(self.min_rate_slack),
            "band_margin": _floats(self.band_margin),
            "airflow_slack": float(self.airflow_slack),
            "airflow_required": _floats(self.airflow_required),
            "cooling_margin_slack": _floats(self.cooling_margin_slack),
            "failures": self.failures(),
        }


def validate_controllability(building: Building, envelope) -> ControllabilityReport:
    """Evaluate the three controllability inequalities and d >= b*m_min.

    ``envelope`` supplies t_out_min/t_out_max and per-zone q_min/q_max.  Each
    inequality is evaluated as written, with no rearrangement.
    """
    z, cfg = building.stacked, building.cfg
    ts = cfg.t_supply
    k = heat_gain(z, cfg)
    q_min = np.broadcast_to(envelope.q_min, z.a.shape)
    q_max = np.broadcast_to(envelope.q_max, z.a.shape)
    to_min, to_max = envelope.t_out_min, envelope.t_out_max

    lhs12 = z.d * z.t_min + z.b * z.m_min * (ts - z.t_min) + z.a * to_min + k * q_min
    band_margin = ((z.t_max - z.t_min) + z.a * (to_min - to_max) + k * (q_min - q_max)
            + z.b * (z.m_max * (ts - z.t_max) - z.m_min * (ts - z.t_min)))
    required = (z.a * (z.t_max - to_max) - k * q_max) / (z.b * (ts - z.t_min))
    return ControllabilityReport(
        min_rate_slack=lhs12 - z.t_min,
        band_margin=band_margin,
        airflow_slack=float(cfg.m_total_cap - np.sum(required)),
        airflow_required=required,
        cooling_margin_slack=z.d - z.b * z.m_min,
    )


def _floats(x: Sequence[float]) -> list[float]:
    return [float(v) for v in np.atleast_1d(x)]
