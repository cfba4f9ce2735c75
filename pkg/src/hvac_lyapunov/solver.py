"""
Drift-plus-penalty HVAC controller.

Each zone carries a virtual queue Q = T + delta.  Every slot the controller
minimises, over air rates m subject to box bounds and the building airflow
cap, the separable upper bound

    sum_i (1-a_i) Q_i b_i (T_s - T_i) m_i + V phi_i (T_next_i - T_ref_i)^2
          + V g_i m_i + V F m_i^2

where g_i is the coil cost per unit air rate and F m_i^2 the Cauchy-Schwarz
bound on the cubic fan cost.  Each zone term is a convex parabola, so the
per-zone optimum is a clamped closed form; the cap is handled by a scalar
multiplier rho found by bisection (the clamped rate is continuous and
non-increasing in rho, so the summed rate is too).

The tuning constants (V upper bound, admissible delta range, queue
thresholds below/above which the optimum saturates, drift constants and the
optimality-gap constant) come from envelope extrema of the exogenous inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import costs
from .errors import (
    DegenerateDynamicsError,
    InfeasibleSlotError,
    SolverError,
    TuningError,
)
from .thermal import (
    Building,
    BuildingConfig,
    SlotObservation,
    ZoneParams,
    free_response,
    heat_gain,
    step_temperature,
)

EPS_SUM = 1e-6  # g/s, tolerance on the coupling residual
MAX_ITER = 200
RHO_START = 1.0


# --------------------------------------------------------------------------
# Envelope and tuning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterEnvelope:
    """Extrema of the exogenous inputs over the horizon (prices in currency/kWh)."""

    s_min: float
    s_max: float
    t_out_min: float
    t_out_max: float
    q_min: np.ndarray
    q_max: np.ndarray
    t_ref_max: np.ndarray
    g_min: np.ndarray
    g_max: np.ndarray

    def to_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in self.__dict__.items()}


def compute_envelope(price, t_out, building: Building, q_support=(0.1, 0.2),
                     t_ref_support: Sequence[float] = (21.0, 22.0, 23.0)) -> ParameterEnvelope:
    """Componentwise extrema of prices, outdoor temperature and the input supports.

    Prices and outdoor temperatures come from the realised traces.  The
    disturbance and comfort-target extrema come from their (bounded)
    distribution supports, which makes the envelope independent of the seed.
    The coil coefficient g is bilinear in price and the mixed-air excess, so
    its extrema sit at the corners of the (price, T_in, T_out) box.
    """
    price = np.asarray(price, dtype=float)
    t_out = np.asarray(t_out, dtype=float)
    if price.size == 0 or t_out.size == 0:
        raise ValueError("traces must be non-empty")
    q_lo, q_hi = (np.asarray(x, dtype=float) for x in q_support)
    t_ref_support = np.asarray(t_ref_support, dtype=float)
    if not (np.all(np.isfinite(q_lo)) and np.all(np.isfinite(q_hi))
            and np.all(np.isfinite(t_ref_support))):
        raise ValueError("distribution supports must be bounded")
    if np.any(q_lo > q_hi):
        raise ValueError("q support lower bound exceeds upper bound")

    z, cfg = building.stacked, building.cfg
    shape = z.a.shape
    s_min, s_max = float(price.min()), float(price.max())
    to_min, to_max = float(t_out.min()), float(t_out.max())
    corners = [costs.coil_marginal_cost(t_in, t_o, s, cfg)
               for s in (s_min, s_max) for t_in in (z.t_min, z.t_max) for t_o in (to_min, to_max)]
    corners = np.stack([np.broadcast_to(c, shape) for c in corners])
    return ParameterEnvelope(
        s_min=s_min, s_max=s_max, t_out_min=to_min, t_out_max=to_max,
        q_min=np.broadcast_to(q_lo, shape).astype(float),
        q_max=np.broadcast_to(q_hi, shape).astype(float),
        t_ref_max=np.full(shape, float(t_ref_support.max())),
        g_min=corners.min(axis=0), g_max=corners.max(axis=0),
    )


@dataclass(frozen=True)
class TuningBundle:
    """Control parameter V, queue shifts and the derived analysis constants."""

    v: float
    v_max: float
    delta: np.ndarray
    delta_min: np.ndarray
    delta_max: np.ndarray
    b_drift: np.ndarray
    q_lo: np.ndarray  # below: optimum is m_min
    q_hi: np.ndarray  # above: unconstrained optimum exceeds m_max
    gap_constant: float
    band_margin: np.ndarray
    cost_slope: np.ndarray
    delta_min_scaled: np.ndarray
    delta_max_scaled: np.ndarray
    delta_mode: str = "min"

    @property
    def within_guarantee(self) -> bool:
        """True when V and delta lie in the ranges that keep every zone in band."""
        return bool(0 < self.v <= self.v_max
                    and np.all(self.delta >= self.delta_min) and np.all(self.delta <= self.delta_max))

    def to_dict(self) -> dict:
        d = {k: _jsonable(v) for k, v in self.__dict__.items()}
        d["within_guarantee"] = self.within_guarantee
        return d


def compute_tuning(envelope: ParameterEnvelope, building: Building, v="max", delta="min",
                   strict: bool = True) -> TuningBundle:
    """Derive V, delta and the feasibility/performance constants.

    ``v`` is ``"max"`` or a positive number.  ``delta`` is ``"min"``,
    ``"max"``, ``"mcdra"`` (base value delta_min, adapted per slot by the
    controller) or explicit per-zone values, which are projected into
    [delta_min, delta_max].  With ``strict`` a V above its upper bound is
    rejected.
    """
    z, cfg = building.stacked, building.cfg
    ts, n, mbar = cfg.t_supply, cfg.n_zones, cfg.m_total_cap
    a, b, d, k = z.a, z.b, z.d, heat_gain(z, cfg)
    phi = z.phi
    to_min, to_max = envelope.t_out_min, envelope.t_out_max
    q_min, q_max = envelope.q_min, envelope.q_max
    g_min, g_max = envelope.g_min, envelope.g_max
    t_ref_max = envelope.t_ref_max
    # mu * S * tau * N * m_bar at the price extrema
    f_min = costs.fan_surrogate_coefficient(envelope.s_min, cfg)
    f_max = costs.fan_surrogate_coefficient(envelope.s_max, cfg)

    band_margin = ((z.t_max - z.t_min) + a * (to_min - to_max) + k * (q_min - q_max)
            + b * (z.m_max * (ts - z.t_max) - z.m_min * (ts - z.t_min)))
    cost_slope = (2 * phi * (t_ref_max + d * z.t_max + a * to_max + k * q_max
                          + b * (z.t_max - ts) * z.m_max)
               + (g_max + 2 * z.m_max * f_max) / (b * (z.t_min - ts))
               - (g_min + 2 * z.m_min * f_min) / (b * (z.t_max - ts)))
    v_max = float(np.min(band_margin / cost_slope))
    if not np.isfinite(v_max) or v_max <= 0:
        raise TuningError(f"V upper bound is {v_max:.6g}; controllability assumption on band_margin fails")

    if isinstance(v, str):
        if v != "max":
            raise TuningError(f"unknown V choice {v!r}")
        v = v_max
    v = float(v)
    if v <= 0:
        raise TuningError("V must be positive")
    if strict and v > v_max:
        raise TuningError(f"V={v:.6g} exceeds its upper bound {v_max:.6g}")

    delta_min_scaled = (2 * v * phi * (t_ref_max + b * (z.t_max - ts) * z.m_max)
                 + (v * g_max + 2 * v * f_max * z.m_max) / (b * (z.t_min - ts))
                 + b * z.m_min * (ts - z.t_min) + a * to_max + k * q_max - z.t_max)
    delta_max_scaled = (-2 * v * phi * (d * z.t_max + a * to_max + k * q_max)
                 + (v * g_min + 2 * v * f_min * z.m_min) / (b * (z.t_max - ts))
                 + b * z.m_max * (ts - z.t_max) + a * to_min + k * q_min - z.t_min)
    delta_min = delta_min_scaled / (1 - a)
    delta_max = delta_max_scaled / (1 - a)
    # at V = v_max the binding zone has delta_min == delta_max up to rounding
    slack = 1e-9 * np.maximum(1.0, np.abs(delta_min))
    if np.any(delta_min > delta_max + slack):
        raise TuningError("empty delta range: delta_min exceeds delta_max")
    delta_max = np.maximum(delta_max, delta_min)

    mode = delta if isinstance(delta, str) else "explicit"
    if mode in ("min", "mcdra"):
        chosen = delta_min.copy()
    elif mode == "max":
        chosen = delta_max.copy()
    elif mode == "explicit":
        chosen = np.clip(np.broadcast_to(np.asarray(delta, dtype=float), delta_min.shape),
                         delta_min, delta_max)
    else:
        raise TuningError(f"unknown delta choice {delta!r}")

    abs_delta = np.abs(chosen)
    inflow = a * (abs_delta + to_max) + k * q_max
    b_drift = ((b * z.m_max * (ts - z.t_max) ** 2 + inflow) ** 2
               + 2 * (1 - a) * (abs_delta + z.t_max) * inflow)
    q_lo = ((v * g_min + 2 * z.m_min * v * f_min) / (b * (1 - a) * (z.t_max - ts))
            - 2 * v * phi * (d * z.t_max + a * to_max + k * q_max) / (1 - a))
    q_hi = ((v * g_max + 2 * z.m_max * v * f_max) / (b * (1 - a) * (z.t_min - ts))
            + 2 * (z.t_max - ts) * z.m_max * v * phi * b / (1 - a)
            + 2 * t_ref_max * v * phi / (1 - a))
    xi = np.sum((1 - a) * (z.t_max + abs_delta) * ts
                * (a * (z.t_max - to_min) - k * envelope.q_min) / (ts + z.t_min))
    gap_constant = float(0.5 * np.sum(b_drift) + xi)

    return TuningBundle(
        v=v, v_max=v_max, delta=chosen, delta_min=delta_min, delta_max=delta_max,
        b_drift=b_drift, q_lo=q_lo, q_hi=q_hi, gap_constant=gap_constant, band_margin=band_margin,
        cost_slope=cost_slope, delta_min_scaled=delta_min_scaled, delta_max_scaled=delta_max_scaled,
        delta_mode=mode,
    )


# --------------------------------------------------------------------------
# Queues
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZoneState:
    """Indoor temperature and virtual queue; zone axis last."""

    t_in: np.ndarray
    queue: np.ndarray


def init_queue(t0, delta, zp: ZoneParams):
    t0 = np.asarray(t0, dtype=float)
    if np.any(t0 < zp.t_min) or np.any(t0 > zp.t_max):
        raise ValueError("initial temperature must lie in the comfort band")
    return t0 + delta


def update_queue(state: ZoneState, m, t_out, q, delta, zp: ZoneParams, cfg: BuildingConfig):
    """Queue recursion: Q' = (1-a)Q + b m (T_s - T) + a (delta + T_out) + (tau/C) q.

    Algebraically equal to step_temperature(...) + delta.
    """
    return ((1.0 - zp.a) * state.queue + zp.b * m * (cfg.t_supply - state.t_in)
            + zp.a * (delta + t_out) + heat_gain(zp, cfg) * q)


# --------------------------------------------------------------------------
# Per-zone closed form
# --------------------------------------------------------------------------

class DegenerateObjectiveError(SolverError):
    """Zone objective is linear in m (zero price and zero discomfort weight)."""


def rate_terms(state: ZoneState, obs: SlotObservation, zp: ZoneParams, cfg: BuildingConfig, v):
    """Numerator and denominator of the stationary air rate.

    The zone term has derivative ``den * m - num + rho`` once the coupling
    multiplier rho is attached, so m* = num / den and m(rho) = (num - rho)/den.
    """
    t_in = np.asarray(state.t_in, dtype=float)
    u = zp.b * (cfg.t_supply - t_in)  # dT_next/dm, negative in cooling mode
    c = free_response(t_in, obs.t_out, obs.q, zp, cfg)
    g = costs.coil_marginal_cost(t_in, obs.t_out, obs.price, cfg)
    f = costs.fan_surrogate_coefficient(obs.price, cfg)
    h = 2 * v * zp.phi * (obs.t_ref - c) - (1.0 - zp.a) * state.queue
    num = u * h - v * g
    den = 2 * v * f + 2 * v * zp.phi * u * u
    return num, np.broadcast_to(den, np.shape(num))


def unconstrained_rate(state, obs, zp, cfg, tuning: TuningBundle):
    """Stationary point of each zone's quadratic, ignoring all constraints."""
    num, den = rate_terms(state, obs, zp, cfg, tuning.v)
    if np.any(den <= 0):
        raise DegenerateObjectiveError(
            "objective is linear in m (zero price and phi); minimiser lies on a box bound"
        )
    return num / den


def clamped_rate(num, den, rho, lo, hi):
    """max(lo, min(hi, (num - rho)/den)), with linear zones jumping between bounds."""
    if np.all(den > 0):
        raw = (num - rho) / den
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = (num - rho) / den
        raw = np.where(den > 0, raw, np.where(num - rho > 0, np.inf, -np.inf))
    return np.maximum(lo, np.minimum(hi, raw))


def dual_adjusted_rate(state, obs, zp, cfg, tuning: TuningBundle, rho):
    """Clamped per-zone rate at multiplier ``rho`` >= 0; non-increasing in rho."""
    if np.any(np.asarray(rho) < 0):
        raise ValueError("rho must be non-negative")
    num, den = rate_terms(state, obs, zp, cfg, tuning.v)
    return clamped_rate(num, den, rho, zp.m_min, zp.m_max)


def p3_objective(m, state, obs, zp, cfg, v):
    """Value of the per-slot surrogate objective (summed over zones)."""
    m = np.asarray(m, dtype=float)
    t_next = step_temperature(state.t_in, m, obs.t_out, obs.q, zp, cfg)
    queue_term = (1.0 - zp.a) * state.queue * zp.b * (cfg.t_supply - state.t_in) * m
    g = costs.coil_marginal_cost(state.t_in, obs.t_out, obs.price, cfg)
    f = costs.fan_surrogate_coefficient(obs.price, cfg)
    per_zone = (queue_term + v * zp.phi * (t_next - obs.t_ref) ** 2
                + v * g * m + v * f * m * m)
    return np.sum(per_zone, axis=-1)


# --------------------------------------------------------------------------
# Dual search
# --------------------------------------------------------------------------

_PROBE, _EXPAND, _BISECT, _DONE = 0, 1, 2, 3


class DualSearch:
    """Bisection on the coupling multiplier, vectorised over independent instances.

    Protocol per instance: evaluate rho = 0; if the summed rate fits under
    the cap, stop.  Otherwise double rho from 1.0 until the sum drops to the
    cap or below, then bisect.  An evaluation stops the search once
    cap - eps <= sum <= cap, so accepted decisions never exceed the cap.

    If the bracket collapses in floating point (only when a zone objective is
    linear and its rate jumps), the residual is filled from the rates at the
    two bracket ends in zone order, which is the exact KKT point.

    Callers drive it by repeatedly evaluating rates at ``rho`` and passing
    them to ``observe`` until ``active`` is all false.
    """

    def __init__(self, cap: float, n_instances: int = 1, eps: float = EPS_SUM,
                 max_iter: int = MAX_ITER):
        self.cap = float(cap)
        self.eps = eps
        self.max_iter = max_iter
        self.rho = np.zeros(n_instances)
        self.lo = np.zeros(n_instances)
        self.hi = np.full(n_instances, np.inf)
        self.phase = np.full(n_instances, _PROBE)
        self.iterations = np.zeros(n_instances, dtype=int)
        self.collapsed = np.zeros(n_instances, dtype=bool)
        self.decision = None
        self._m_lo = None
        self._m_hi = None

    @property
    def active(self) -> np.ndarray:
        return self.phase != _DONE

    def observe(self, m) -> None:
        m = np.asarray(m, dtype=float)
        if self.decision is None:
            self.decision = np.zeros_like(m)
            self._m_lo = np.zeros_like(m)
            self._m_hi = np.zeros_like(m)
        act = self.active
        total = np.sum(m, axis=-1)
        self.iterations[act] += 1
        cap, eps = self.cap, self.eps
        in_band = (total >= cap - eps) & (total <= cap)
        over = total > cap

        probe = act & (self.phase == _PROBE)
        fits = probe & ~over
        self._finish(fits, m)
        to_expand = probe & over
        self._m_lo[to_expand] = m[to_expand]
        self.phase[to_expand] = _EXPAND
        self.rho[to_expand] = RHO_START

        expand = act & (self.phase == _EXPAND) & ~to_expand
        self._finish(expand & in_band, m)
        grow = expand & over
        self.lo[grow] = self.rho[grow]
        self._m_lo[grow] = m[grow]
        self.rho[grow] *= 2.0
        found = expand & ~over & ~in_band
        self.hi[found] = self.rho[found]
        self._m_hi[found] = m[found]
        self.phase[found] = _BISECT
        self.rho[found] = 0.5 * (self.lo[found] + self.hi[found])

        bisect = act & (self.phase == _BISECT) & ~found
        self._finish(bisect & in_band, m)
        up = bisect & over
        down = bisect & ~over & ~in_band
        self.lo[up] = self.rho[up]
        self._m_lo[up] = m[up]
        self.hi[down] = self.rho[down]
        self._m_hi[down] = m[down]
        moved = up | down
        mid = 0.5 * (self.lo + self.hi)
        stuck = moved & ((mid <= self.lo) | (mid >= self.hi))
        self.rho[moved] = mid[moved]
        if np.any(stuck):
            self._fill(stuck)

        late = self.active & (self.iterations >= self.max_iter)
        if np.any(late):
            i = int(np.flatnonzero(late)[0])
            raise SolverError(
                f"dual search exceeded {self.max_iter} iterations",
                residual=float(cap - total[i]), iterations=int(self.iterations[i]),
            )

    def _finish(self, mask, m) -> None:
        if np.any(mask):
            self.decision[mask] = m[mask]
            self.phase[mask] = _DONE

    def _fill(self, mask) -> None:
        for i in np.flatnonzero(mask):
            m = self._m_hi[i].copy()
            room = self.cap - m.sum()
            gap = np.maximum(self._m_lo[i] - m, 0.0)
            for j in range(m.size):
                if room <= 0:
                    break
                add = min(gap[j], room)
                m[j] += add
                room -= add
            self.decision[i] = m
            self.rho[i] = self.hi[i]
            self.collapsed[i] = True
            self.phase[i] = _DONE


@dataclass(frozen=True)
class Allocation:
    """Solution of one capped allocation: decision plus search diagnostics."""

    m: np.ndarray
    rho: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray  # cap - sum(m)

    @property
    def binding(self):
        return self.rho > 0


def allocate_under_cap(num, den, lo, hi, cap, eps: float = EPS_SUM,
                       max_iter: int = MAX_ITER) -> Allocation:
    """Minimise sum_i (den_i/2 m_i^2 - num_i m_i) s.t. lo <= m <= hi, sum m <= cap."""
    num = np.asarray(num, dtype=float)
    shape = num.shape
    n = shape[-1]
    num2 = num.reshape(-1, n)
    den2 = np.broadcast_to(den, shape).reshape(-1, n)
    lo2 = np.broadcast_to(lo, shape).reshape(-1, n)
    hi2 = np.broadcast_to(hi, shape).reshape(-1, n)
    floor = lo2.sum(axis=-1)
    if np.any(floor > cap):
        raise InfeasibleSlotError(
            f"minimum air rates sum to {float(floor.max()):.6g} > cap {cap:.6g}",
            residual=float(cap - floor.max()),
        )
    search = DualSearch(cap, num2.shape[0], eps, max_iter)
    while np.any(search.active):
        search.observe(clamped_rate(num2, den2, search.rho[:, None], lo2, hi2))
    m = search.decision.reshape(shape)
    batch = shape[:-1]
    return Allocation(
        m=m,
        rho=search.rho.reshape(batch),
        iterations=search.iterations.reshape(batch),
        residual=(cap - m.sum(axis=-1)),
    )


def solve_p3(state: ZoneState, obs: SlotObservation, building: Building, tuning: TuningBundle,
             eps: float = EPS_SUM, max_iter: int = MAX_ITER) -> Allocation:
    """Per-slot drift-plus-penalty decision under box bounds and the airflow cap."""
    z, cfg = building.stacked, building.cfg
    if np.any(np.asarray(state.t_in) <= cfg.t_supply):
        raise DegenerateDynamicsError("indoor temperature at or below supply air")
    num, den = rate_terms(state, obs, z, cfg, tuning.v)
    return allocate_under_cap(num, den, z.m_min, z.m_max, cfg.m_total_cap, eps, max_iter)


# --------------------------------------------------------------------------
# One controller slot
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    decision: np.ndarray
    state: ZoneState  # state at the start of the next slot
    costs: costs.CostBreakdown
    allocation: Allocation | None = None
    queue_used: np.ndarray | None = None  # queue the decision was based on


def advance(state: ZoneState, m, obs: SlotObservation, building: Building, delta) -> tuple:
    """Next temperature (thermal model) and next queue (queue recursion)."""
    z, cfg = building.stacked, building.cfg
    t_next = step_temperature(state.t_in, m, obs.t_out, obs.q, z, cfg)
    q_next = update_queue(state, m, obs.t_out, obs.q, delta, z, cfg)
    return t_next, q_next


def cdra_step(state: ZoneState, obs: SlotObservation, building: Building,
              tuning: TuningBundle, allocator=None) -> StepResult:
    """Observe, solve the surrogate problem, then advance temperatures and queues.

    ``allocator`` replaces the centralized solve (same signature as
    ``solve_p3``); the distributed coordinator plugs in here.
    """
    alloc = (allocator or solve_p3)(state, obs, building, tuning)
    m = alloc.m
    t_next, q_next = advance(state, m, obs, building, tuning.delta)
    z, cfg = building.stacked, building.cfg
    breakdown = costs.slot_total_cost(state.t_in, t_next, m, obs.t_out, obs.t_ref, obs.price,
                                      z.phi, cfg)
    return StepResult(m, ZoneState(t_next, q_next), breakdown, alloc, state.queue)


def with_delta(tuning: TuningBundle, delta) -> TuningBundle:
    return replace(tuning, delta=np.asarray(delta, dtype=float))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v.ravel()]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v
