"""
Comparison controllers.

B1 tracks the comfort target exactly, scaling all zones down proportionally
when the building cap binds.  B2 greedily minimises the current slot's cost
(same fan bound as the drift-plus-penalty controller, no queue term) while
keeping every zone inside its comfort band.  MCDRA is the drift-plus-penalty
controller with a per-slot queue shift that moves toward minus the comfort
target in proportion to the zone's discomfort weight.
"""

from __future__ import annotations

import numpy as np

from . import costs
from .solver import (
    Allocation,
    StepResult,
    TuningBundle,
    ZoneState,
    allocate_under_cap,
    cdra_step,
    with_delta,
)
from .thermal import (
    Building,
    SlotObservation,
    comfort_rate_interval,
    free_response,
    rate_for_target,
    step_temperature,
)


def b1_step(state: ZoneState, obs: SlotObservation, building: Building) -> np.ndarray:
    """Air rates that land every zone on its comfort target."""
    z, cfg = building.stacked, building.cfg
    m = rate_for_target(state.t_in, obs.t_ref, obs.t_out, obs.q, z, cfg)
    m = np.maximum(z.m_min, np.minimum(z.m_max, m))
    total = m.sum(axis=-1, keepdims=True)
    over = total > cfg.m_total_cap
    if np.any(over):
        scale = np.where(over, cfg.m_total_cap / np.where(over, total, 1.0), 1.0)
        # rounding can leave the scaled sum a few ulps above the cap
        for _ in range(8):
            still = (m * scale).sum(axis=-1, keepdims=True) > cfg.m_total_cap
            if not np.any(still):
                break
            scale = np.where(still, np.nextafter(scale, 0.0), scale)
        m = m * scale
    return m


def b2_bounds(state: ZoneState, obs: SlotObservation, building: Building):
    """Per-zone rate bounds for B2 and a flag for zones whose comfort interval is empty.

    An empty interval is projected onto the nearest bound: too hot even at
    m_max gives m_max, too cold even at m_min gives m_min.
    """
    z, cfg = building.stacked, building.cfg
    iv = comfort_rate_interval(state.t_in, obs.t_out, obs.q, z, cfg)
    lo, hi = iv.lo, iv.hi
    if np.any(iv.empty):
        too_hot = iv.empty & (iv.m_at_t_max > z.m_max)
        fallback = np.where(too_hot, z.m_max, z.m_min)
        lo = np.where(iv.empty, fallback, lo)
        hi = np.where(iv.empty, fallback, hi)
    return np.broadcast_to(lo, iv.lo.shape), np.broadcast_to(hi, iv.lo.shape), iv.empty


def b2_step(state: ZoneState, obs: SlotObservation, building: Building):
    """Greedy one-slot cost minimiser; returns ``(allocation, flags)``.

    ``flags`` is a dict of boolean arrays: ``empty`` zones had no air rate
    keeping them in band; ``cap_relaxed`` instances could not honour every
    zone's comfort lower bound under the cap, so those bounds were relaxed to
    m_min and the cap kept.
    """
    z, cfg = building.stacked, building.cfg
    t_in = np.asarray(state.t_in, dtype=float)
    u = z.b * (cfg.t_supply - t_in)
    c = free_response(t_in, obs.t_out, obs.q, z, cfg)
    g = costs.coil_marginal_cost(t_in, obs.t_out, obs.price, cfg)
    f = costs.fan_surrogate_coefficient(obs.price, cfg)
    num = u * 2 * z.phi * (obs.t_ref - c) - g
    den = np.broadcast_to(2 * f + 2 * z.phi * u * u, num.shape)
    lo, hi, empty = b2_bounds(state, obs, building)
    relax = lo.sum(axis=-1) > cfg.m_total_cap
    if np.any(relax):
        lo = np.where(relax[..., None], np.broadcast_to(z.m_min, lo.shape), lo)
        hi = np.maximum(hi, lo)
    alloc = allocate_under_cap(num, den, lo, hi, cfg.m_total_cap)
    return alloc, {"empty": empty, "cap_relaxed": relax}


def mcdra_delta(phi, phi_max, t_ref_next, tuning: TuningBundle):
    """Comfort-weighted queue shift, projected into [delta_min, delta_max]."""
    if phi_max <= 0:
        raise ValueError("phi_max must be positive; with all weights zero use the base controller")
    w = np.asarray(phi, dtype=float) / phi_max
    raw = -(w * t_ref_next + (1.0 - w) * (-tuning.delta_min))
    return np.maximum(tuning.delta_min, np.minimum(tuning.delta_max, raw))


MCDRA_QUEUE_MODES = ("rebuild", "recursion")


def mcdra_step(state: ZoneState, obs: SlotObservation, building: Building,
               tuning: TuningBundle, allocator=None, queue_mode: str = "rebuild") -> StepResult:
    """Drift-plus-penalty step with a per-slot shift.

    ``queue_mode="rebuild"`` recomputes the queue as T + delta_t before the
    decision.  ``"recursion"`` keeps the queue carried over from the previous
    slot, which was advanced with the previous slot's shift.  With every
    discomfort weight zero the shift is undefined and this is exactly the
    base controller step.
    """
    if queue_mode not in MCDRA_QUEUE_MODES:
        raise ValueError(f"queue_mode must be one of {MCDRA_QUEUE_MODES}")
    z = building.stacked
    phi_max = float(np.max(z.phi))
    if phi_max <= 0:
        return cdra_step(state, obs, building, tuning, allocator)
    delta = mcdra_delta(z.phi, phi_max, obs.t_ref, tuning)
    if queue_mode == "rebuild":
        state = ZoneState(state.t_in, np.asarray(state.t_in) + delta)
    return cdra_step(state, obs, building, with_delta(tuning, delta), allocator)


def baseline_step(name: str, state: ZoneState, obs: SlotObservation, building: Building,
                  tuning: TuningBundle | None = None):
    """Dispatch B1/B2 and wrap the decision as a ``StepResult``."""
    z, cfg = building.stacked, building.cfg
    alloc: Allocation | None = None
    if name == "b1":
        m = b1_step(state, obs, building)
    elif name == "b2":
        alloc, _ = b2_step(state, obs, building)
        m = alloc.m
    else:
        raise ValueError(f"unknown baseline {name!r}")
    t_next = step_temperature(state.t_in, m, obs.t_out, obs.q, z, cfg)
    queue = t_next + (tuning.delta if tuning is not None else 0.0)
    breakdown = costs.slot_total_cost(state.t_in, t_next, m, obs.t_out, obs.t_ref, obs.price,
                                      z.phi, cfg)
    return StepResult(m, ZoneState(t_next, queue), breakdown, alloc, state.queue)
