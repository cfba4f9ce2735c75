"""
Per-slot HVAC costs: thermal discomfort, supply-fan energy and cooling-coil energy.

Prices are quoted in currency/kWh.  This module is the only place that
converts them; every other module passes raw prices through.  Energy is
computed in joules (W * s) and divided by 3.6e6 before it meets a price.

Arrays follow the thermal module convention: the zone axis is last and any
leading axes are independent batch members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .thermal import BuildingConfig

JOULES_PER_KWH = 3.6e6


def price_per_joule(price):
    return np.asarray(price, dtype=float) / JOULES_PER_KWH


def discomfort_cost(t_next, t_ref, phi):
    """Sum over zones of phi_i * (T_next - T_ref)^2."""
    dev = np.asarray(t_next, dtype=float) - t_ref
    return np.sum(phi * dev * dev, axis=-1)


def fan_power(m, cfg: BuildingConfig):
    """Supply-fan electrical power, W: mu * (sum of zone air rates)^3."""
    total = np.sum(m, axis=-1)
    return cfg.mu * total ** 3


def fan_cost(m, price, cfg: BuildingConfig):
    return fan_power(m, cfg) * cfg.tau * price_per_joule(price)


def coil_power_by_zone(m, t_in, t_out, cfg: BuildingConfig):
    """Each zone's contribution to cooling-coil power, W."""
    mixed = cfg.gamma * np.asarray(t_in, dtype=float) + (1.0 - cfg.gamma) * t_out
    return m * cfg.coil_factor * (mixed - cfg.t_supply)


def coil_power(m, t_in, t_out, cfg: BuildingConfig):
    """Cooling-coil power, W.  Well defined at zero total airflow."""
    return np.sum(coil_power_by_zone(m, t_in, t_out, cfg), axis=-1)


def coil_cost(p, price, cfg: BuildingConfig):
    return np.asarray(p, dtype=float) * cfg.tau * price_per_joule(price)


def coil_marginal_cost(t_in, t_out, price, cfg: BuildingConfig):
    """Coil cost per unit air rate over one slot (the coefficient g of m_i)."""
    mixed = cfg.gamma * np.asarray(t_in, dtype=float) + (1.0 - cfg.gamma) * t_out
    return price_per_joule(price) * cfg.tau * cfg.coil_factor * (mixed - cfg.t_supply)


def fan_surrogate_coefficient(price, cfg: BuildingConfig):
    """mu * S * tau * N * m_bar, the per-zone quadratic weight of the fan bound.

    Since (sum m)^3 <= m_bar*(sum m)^2 <= N*m_bar*sum(m^2) on the feasible set,
    this coefficient times sum(m_i^2) upper-bounds the exact fan cost.
    """
    return cfg.mu * price_per_joule(price) * cfg.tau * cfg.n_zones * cfg.m_total_cap


def fan_surrogate_cost(m, price, cfg: BuildingConfig):
    m = np.asarray(m, dtype=float)
    return fan_surrogate_coefficient(price, cfg) * np.sum(m * m, axis=-1)


@dataclass(frozen=True)
class CostBreakdown:
    discomfort: np.ndarray
    fan: np.ndarray
    coil: np.ndarray

    @property
    def energy(self):
        return self.fan + self.coil

    @property
    def total(self):
        return self.discomfort + self.fan + self.coil


def slot_total_cost(t_in, t_next, m, t_out, t_ref, price, phi, cfg: BuildingConfig) -> CostBreakdown:
    """Realised cost of one slot using the exact cubic fan term."""
    return CostBreakdown(
        discomfort=discomfort_cost(t_next, t_ref, phi),
        fan=fan_cost(m, price, cfg),
        coil=coil_cost(coil_power(m, t_in, t_out, cfg), price, cfg),
    )


def atd(t_next, t_ref) -> float:
    """Average absolute temperature deviation over all zones and slots.

    ``t_next`` and ``t_ref`` are (slots, zones) arrays of achieved next-slot
    temperature and its comfort target.
    """
    t_next = np.asarray(t_next, dtype=float)
    if t_next.size == 0:
        raise ValueError("ATD of an empty trajectory is undefined")
    return float(np.mean(np.abs(t_next - np.asarray(t_ref, dtype=float))))
