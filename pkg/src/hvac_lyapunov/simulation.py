"""
Trace ingestion, stochastic inputs, the month-long control loop and reports.

The loop is vectorised over independent runs (seeds): every state array has
shape (runs, zones).  Temporal coupling keeps each run sequential; seeds
share nothing but the read-only traces and building.

Slot t uses the price and outdoor temperature of slot t, the disturbance of
slot t and the comfort target of slot t+1 (the temperature it is steering
towards).  A horizon of M slots gives M-1 decisions.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import costs
from .baselines import MCDRA_QUEUE_MODES, b1_step, b2_step, mcdra_delta, mcdra_step
from .coordination import DistributedAllocator, PrivacyAuditor
from .errors import (
    ConfigError,
    ControllabilityError,
    FeasibilityViolation,
    TraceFormatError,
    TuningError,
)
from .solver import (
    ParameterEnvelope,
    StepResult,
    TuningBundle,
    ZoneState,
    cdra_step,
    compute_envelope,
    compute_tuning,
    init_queue,
    rate_terms,
    with_delta,
)
from .thermal import (
    Building,
    BuildingConfig,
    ControllabilityReport,
    SlotObservation,
    ZoneParams,
    step_temperature,
    validate_controllability,
)

CONTROLLERS = ("cdra", "mcdra", "b1", "b2")
SLOTS_PER_HOUR = 12
MONTH_SLOTS = 31 * 24 * SLOTS_PER_HOUR  # 8928
BAND_TOL = 1e-9  # degC, floating-point slack on the comfort band check

# --------------------------------------------------------------------------
# Traces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceSet:
    """Hourly price (currency/kWh) and outdoor temperature (degC) traces."""

    price: np.ndarray
    t_out: np.ndarray
    horizon: int = MONTH_SLOTS
    slots_per_hour: int = SLOTS_PER_HOUR

    def __post_init__(self):
        price = np.asarray(self.price, dtype=float)
        t_out = np.asarray(self.t_out, dtype=float)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "t_out", t_out)
        if self.horizon < 2:
            raise TraceFormatError("horizon must cover at least two slots")
        if self.slots_per_hour < 1:
            raise TraceFormatError("slots_per_hour must be positive")
        for name, arr in (("price", price), ("t_out", t_out)):
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise TraceFormatError(f"{name} trace must be a finite 1-D sequence")
            if arr.size * self.slots_per_hour < self.horizon:
                raise TraceFormatError(
                    f"{name} trace covers {arr.size * self.slots_per_hour} slots, "
                    f"horizon needs {self.horizon}"
                )
        if np.any(price < 0):
            raise TraceFormatError("prices must be non-negative")

    def _expand(self, hourly):
        return np.repeat(hourly, self.slots_per_hour)[: self.horizon]

    @property
    def slot_price(self) -> np.ndarray:
        return self._expand(self.price)

    @property
    def slot_t_out(self) -> np.ndarray:
        return self._expand(self.t_out)

    def with_horizon(self, horizon: int) -> "TraceSet":
        return replace(self, horizon=horizon)


def read_hourly_csv(path) -> np.ndarray:
    """Parse a ``hour,value`` trace; hours must run 0, 1, 2, ... without gaps."""
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["hour", "value"]:
            raise TraceFormatError(f"{path}: line 1: expected header 'hour,value'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            try:
                hour, value = int(row[0]), float(row[1])
            except ValueError:
                raise TraceFormatError(f"{path}: line {line}: cannot parse {row!r}") from None
            if hour != len(values):
                raise TraceFormatError(
                    f"{path}: line {line}: expected hour {len(values)}, got {hour}"
                )
            if not np.isfinite(value):
                raise TraceFormatError(f"{path}: line {line}: non-finite value")
            values.append(value)
    if not values:
        raise TraceFormatError(f"{path}: no data rows")
    return np.array(values)


def write_hourly_csv(path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "value"])
        for h, v in enumerate(np.asarray(values, dtype=float)):
            w.writerow([h, repr(float(v))])


def load_traces(price_path, weather_path, shift: float = 8.0, horizon: int = MONTH_SLOTS,
                slots_per_hour: int = SLOTS_PER_HOUR) -> TraceSet:
    """Read both traces, add ``shift`` degC to the weather and check coverage."""
    price = read_hourly_csv(price_path)
    t_out = read_hourly_csv(weather_path) + shift
    return TraceSet(price, t_out, horizon, slots_per_hour)


def synthetic_price(hours: int, peak: float = 1.2, off_peak: float = 0.4,
                    peak_hours: tuple[int, int] = (8, 22)) -> np.ndarray:
    """Two-tier tariff: ``peak`` from peak_hours[0] to peak_hours[1], else ``off_peak``."""
    hd = np.arange(hours) % 24
    return np.where((hd >= peak_hours[0]) & (hd < peak_hours[1]), peak, off_peak)


def synthetic_weather(hours: int, low: float = 10.7, high: float = 28.4,
                      diurnal_amp: float = 5.0, synoptic_amp: float = 3.0,
                      synoptic_days: float = 15.5, peak_hour: int = 15) -> np.ndarray:
    """Hourly outdoor temperature spanning exactly [low, high].

    A diurnal sinusoid peaking at ``peak_hour`` rides on a slower synoptic
    swing of the daily mean, so hot and cool spells alternate during the
    month.  The sum is rescaled affinely onto [low, high].  The defaults are
    the unshifted source range; an 8 degC shift gives [18.7, 36.4].
    """
    h = np.arange(hours)
    day = h // 24
    raw = (synoptic_amp * np.sin(2 * np.pi * day / synoptic_days)
           + diurnal_amp * np.sin(2 * np.pi * ((h % 24) - (peak_hour - 6)) / 24))
    span = raw.max() - raw.min()
    if span <= 0:
        return np.full(hours, 0.5 * (low + high))
    return low + (raw - raw.min()) * (high - low) / span


def synthetic_traces(horizon: int = MONTH_SLOTS, shift: float = 8.0,
                     slots_per_hour: int = SLOTS_PER_HOUR) -> TraceSet:
    hours = -(-horizon // slots_per_hour)
    return TraceSet(synthetic_price(hours), synthetic_weather(hours) + shift, horizon, slots_per_hour)


# --------------------------------------------------------------------------
# Stochastic inputs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InputStreams:
    """Per-slot comfort targets and disturbances; shape (..., slots, zones)."""

    t_ref: np.ndarray
    q: np.ndarray


def sample_inputs(seed: int, n_zones: int, horizon: int, t_ref_values=(21.0, 22.0, 23.0),
                  q_range=(0.1, 0.2), slots_per_hour: int = SLOTS_PER_HOUR) -> InputStreams:
    """Comfort targets drawn per hour from ``t_ref_values``; disturbances per slot from U[q_range].

    Targets are drawn first, then disturbances, from one generator seeded by ``seed``.
    """
    rng = np.random.default_rng(seed)
    hours = -(-horizon // slots_per_hour)
    choice = rng.integers(0, len(t_ref_values), size=(hours, n_zones))
    t_ref = np.repeat(np.asarray(t_ref_values, dtype=float)[choice], slots_per_hour, axis=0)[:horizon]
    q = rng.uniform(q_range[0], q_range[1], size=(horizon, n_zones))
    return InputStreams(t_ref, q)


def sample_batch(seeds: Sequence[int], n_zones: int, horizon: int, **kw) -> InputStreams:
    runs = [sample_inputs(s, n_zones, horizon, **kw) for s in seeds]
    return InputStreams(np.stack([r.t_ref for r in runs]), np.stack([r.q for r in runs]))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

REFERENCE_R = (0.0053, 0.0060, 0.0063, 0.0067)  # degC/W
REFERENCE_C = (550000.0, 570000.0, 590000.0, 620000.0)  # J/degC
DEFAULT_CONFIG = Path(__file__).with_name("data") / "default_config.json"


def make_building(cfg: BuildingConfig, r_thermal, c_thermal, *, t_min, t_max, m_min, m_max,
                  phi=0.0) -> Building:
    """Build zones from per-zone values (scalars broadcast to every zone)."""
    n = cfg.n_zones
    cols = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,))
            for k, v in dict(r=r_thermal, c=c_thermal, t_min=t_min, t_max=t_max,
                             m_min=m_min, m_max=m_max, phi=phi).items()}
    zones = [ZoneParams.from_rc(float(cols["r"][i]), float(cols["c"][i]), cfg,
                                t_min=float(cols["t_min"][i]), t_max=float(cols["t_max"][i]),
                                m_min=float(cols["m_min"][i]), m_max=float(cols["m_max"][i]),
                                phi=float(cols["phi"][i]))
             for i in range(n)]
    return Building(cfg, tuple(zones))


def reference_building(t_max: float = 26.0, phi: float = 0.0) -> Building:
    """Four-zone office used throughout the evaluation."""
    cfg = BuildingConfig(n_zones=4)
    return make_building(cfg, REFERENCE_R, REFERENCE_C, t_min=18.0, t_max=t_max,
                         m_min=0.0, m_max=450.0, phi=phi)


@dataclass(frozen=True)
class RunConfig:
    building: Building
    controller: str = "cdra"
    v: float | str = "max"
    delta: str | tuple = "min"
    seed: int = 0
    horizon: int = MONTH_SLOTS
    slots_per_hour: int = SLOTS_PER_HOUR
    price_path: str | None = None
    weather_path: str | None = None
    shift: float = 8.0
    t_ref_values: tuple = (21.0, 22.0, 23.0)
    q_range: tuple = (0.1, 0.2)
    override_controllability: bool = False
    distributed: bool = False
    mcdra_queue: str = "rebuild"

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if (self.price_path is None) != (self.weather_path is None):
            raise ConfigError("give both trace paths or neither (synthetic traces)")
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2 slots")
        lo, hi = self.q_range
        if not lo <= hi:
            raise ConfigError("q_range must be (low, high) with low <= high")
        if self.distributed and self.controller not in ("cdra", "mcdra"):
            raise ConfigError("only cdra and mcdra have a distributed implementation")
        if self.mcdra_queue not in MCDRA_QUEUE_MODES:
            raise ConfigError(f"mcdra_queue must be one of {MCDRA_QUEUE_MODES}")

    def traces(self) -> TraceSet:
        if self.price_path is None:
            return synthetic_traces(self.horizon, self.shift, self.slots_per_hour)
        return load_traces(self.price_path, self.weather_path, self.shift, self.horizon,
                           self.slots_per_hour)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "building"}
        d["delta"] = list(self.delta) if not isinstance(self.delta, str) else self.delta
        d["t_ref_values"] = list(self.t_ref_values)
        d["q_range"] = list(self.q_range)
        d.update(self.building.to_dict())
        return d


_ZONE_KEYS = ("r_thermal", "c_thermal", "t_min", "t_max", "m_min", "m_max", "phi")
_TOP_KEYS = {"building", "zones", "controller", "tuning", "seed", "horizon", "traces",
             "inputs", "override_controllability", "distributed"}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a ``RunConfig`` from a parsed JSON document.

    ``zones`` is either a list of per-zone objects or one object whose values
    are per-zone lists or scalars.  Relative trace paths resolve against
    ``base_dir``.
    """
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = BuildingConfig(**doc.get("building", {"n_zones": 4}))
    except TypeError as exc:
        raise ConfigError(f"building: {exc}") from None
    zones = doc.get("zones")
    if zones is None:
        raise ConfigError("config needs a 'zones' entry")
    if isinstance(zones, list):
        if len(zones) != cfg.n_zones:
            raise ConfigError(f"building declares {cfg.n_zones} zones, zones list has {len(zones)}")
        for z in zones:
            if set(z) - set(_ZONE_KEYS):
                raise ConfigError(f"unknown zone keys: {sorted(set(z) - set(_ZONE_KEYS))}")
        zones = {k: [z[k] for z in zones] for k in _ZONE_KEYS if all(k in z for z in zones)}
    if set(zones) - set(_ZONE_KEYS):
        raise ConfigError(f"unknown zone keys: {sorted(set(zones) - set(_ZONE_KEYS))}")
    missing = [k for k in _ZONE_KEYS[:-1] if k not in zones]
    if missing:
        raise ConfigError(f"zones missing {missing}")
    try:
        building = make_building(cfg, zones["r_thermal"], zones["c_thermal"],
                                 t_min=zones["t_min"], t_max=zones["t_max"],
                                 m_min=zones["m_min"], m_max=zones["m_max"],
                                 phi=zones.get("phi", 0.0))
    except ValueError as exc:
        if "broadcast" in str(exc):
            raise ConfigError(f"zones: per-zone lists must have {cfg.n_zones} entries") from None
        raise

    tuning = doc.get("tuning", {})
    traces = doc.get("traces", {})
    inputs = doc.get("inputs", {})
    for name, sec, keys in (("tuning", tuning, {"v", "delta", "mcdra_queue"}),
                            ("traces", traces, {"price", "weather", "shift"}),
                            ("inputs", inputs, {"t_ref_values", "q_range", "slots_per_hour"})):
        if set(sec) - keys:
            raise ConfigError(f"unknown {name} keys: {sorted(set(sec) - keys)}")

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() or base_dir is None else base_dir / p)

    delta = tuning.get("delta", "min")
    return RunConfig(
        building=building,
        controller=doc.get("controller", "cdra"),
        v=tuning.get("v", "max"),
        delta=delta if isinstance(delta, str) else tuple(float(x) for x in delta),
        seed=int(doc.get("seed", 0)),
        horizon=int(doc.get("horizon", MONTH_SLOTS)),
        slots_per_hour=int(inputs.get("slots_per_hour", SLOTS_PER_HOUR)),
        price_path=resolve(traces.get("price")),
        weather_path=resolve(traces.get("weather")),
        shift=float(traces.get("shift", 8.0)),
        t_ref_values=tuple(float(x) for x in inputs.get("t_ref_values", (21.0, 22.0, 23.0))),
        q_range=tuple(float(x) for x in inputs.get("q_range", (0.1, 0.2))),
        override_controllability=bool(doc.get("override_controllability", False)),
        distributed=bool(doc.get("distributed", False)),
        mcdra_queue=tuning.get("mcdra_queue", "rebuild"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc, path.parent)


# --------------------------------------------------------------------------
# Setup: envelope, controllability, tuning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSetup:
    building: Building
    traces: TraceSet
    envelope: ParameterEnvelope
    controllability: ControllabilityReport
    tuning: TuningBundle | None


def prepare(config: RunConfig, traces: TraceSet | None = None) -> RunSetup:
    """Envelope, controllability check and tuning for a run.

    Raises ``ControllabilityError`` when the checks fail without the override.
    Baselines run without tuning if none can be derived.
    """
    traces = (traces or config.traces()).with_horizon(config.horizon)
    building = config.building
    env = compute_envelope(traces.slot_price, traces.slot_t_out, building,
                           q_support=config.q_range, t_ref_support=config.t_ref_values)
    report = validate_controllability(building, env)
    if not report.passed and not config.override_controllability:
        raise ControllabilityError("controllability checks failed: " + ", ".join(report.failures()))
    delta = config.delta
    if isinstance(delta, str) and config.controller == "mcdra":
        delta = "mcdra"
    try:
        tuning = compute_tuning(env, building, v=config.v, delta=delta)
    except TuningError:
        if config.controller in ("cdra", "mcdra"):
            raise
        tuning = None
    return RunSetup(building, traces, env, report, tuning)


# --------------------------------------------------------------------------
# Engine
# --------------------------------------------------------------------------


@dataclass
class BatchOutcome:
    """Per-run sums and diagnostics of a batched simulation (leading axis = run)."""

    slots: int
    n_zones: int
    fan: np.ndarray
    coil: np.ndarray
    discomfort: np.ndarray
    abs_dev: np.ndarray
    violations: np.ndarray
    threshold_low: np.ndarray  # Q < Q^a but m != m_min
    threshold_high: np.ndarray  # Q > Q^b but m > m_max
    threshold_high_unsaturated: np.ndarray  # Q > Q^b but unconstrained optimum < m_max
    threshold_low_slots: np.ndarray  # zone-slots with Q < Q^a
    threshold_high_slots: np.ndarray  # zone-slots with Q > Q^b
    queue_identity_err: np.ndarray
    cap_excess: np.ndarray  # max over slots of sum(m) - cap
    iterations_max: np.ndarray
    iterations_sum: np.ndarray
    binding_slots: np.ndarray
    b2_empty: np.ndarray
    b2_cap_relaxed: np.ndarray
    trajectory: dict | None = None
    coordination: dict | None = None

    @property
    def energy(self):
        return self.fan + self.coil

    @property
    def total(self):
        return self.fan + self.coil + self.discomfort

    @property
    def atd(self):
        return self.abs_dev / (self.n_zones * self.slots)

    def run_aggregates(self, i: int) -> dict:
        n = self.slots
        return {
            "slots": n,
            "fan_cost": float(self.fan[i]),
            "coil_cost": float(self.coil[i]),
            "energy_cost": float(self.energy[i]),
            "discomfort_cost": float(self.discomfort[i]),
            "total_cost": float(self.total[i]),
            "avg_energy_cost": float(self.energy[i] / n),
            "avg_discomfort_cost": float(self.discomfort[i] / n),
            "avg_total_cost": float(self.total[i] / n),
            "atd": float(self.atd[i]),
        }

    def run_diagnostics(self, i: int) -> dict:
        d = {
            "band_violations": int(self.violations[i]),
            "threshold_low_counterexamples": int(self.threshold_low[i]),
            "threshold_high_counterexamples": int(self.threshold_high[i]),
            "threshold_high_unsaturated": int(self.threshold_high_unsaturated[i]),
            "threshold_low_slots": int(self.threshold_low_slots[i]),
            "threshold_high_slots": int(self.threshold_high_slots[i]),
            "max_queue_identity_error": float(self.queue_identity_err[i]),
            "max_cap_excess": float(self.cap_excess[i]),
            "max_iterations": int(self.iterations_max[i]),
            "mean_iterations": float(self.iterations_sum[i] / self.slots),
            "binding_slots": int(self.binding_slots[i]),
            "b2_empty_intervals": int(self.b2_empty[i]),
            "b2_cap_relaxed_slots": int(self.b2_cap_relaxed[i]),
        }
        if self.coordination is not None:
            d["coordination"] = dict(self.coordination)
        return d


def simulate_batch(setup: RunSetup, controller: str, inputs: InputStreams, *,
                   allocator=None, record: bool = False,
                   abort_on_violation: bool | None = None,
                   mcdra_queue: str = "rebuild") -> BatchOutcome:
    """Run ``controller`` over the horizon for every run in ``inputs``.

    ``inputs`` arrays have shape (runs, slots, zones).  With
    ``abort_on_violation`` (default: CDRA with guaranteed tuning and passing
    controllability) a comfort-band exit raises ``FeasibilityViolation``
    carrying a dump of the offending slot.  ``mcdra_queue`` selects how MCDRA
    reconciles its per-slot shift with the queue (see ``mcdra_step``).
    """
    if controller not in CONTROLLERS:
        raise ConfigError(f"unknown controller {controller!r}")
    building, traces, tuning = setup.building, setup.traces, setup.tuning
    z, cfg = building.stacked, building.cfg
    if controller in ("cdra", "mcdra") and tuning is None:
        raise TuningError(f"{controller} needs a tuning bundle")
    t_ref, q = np.asarray(inputs.t_ref, dtype=float), np.asarray(inputs.q, dtype=float)
    if t_ref.ndim != 3 or t_ref.shape != q.shape:
        raise ValueError("inputs must have shape (runs, slots, zones)")
    runs, horizon, n = t_ref.shape
    if n != building.n_zones or horizon < traces.horizon:
        raise ValueError("inputs do not match the building or the horizon")
    horizon = traces.horizon
    slots = horizon - 1
    if abort_on_violation is None:
        abort_on_violation = (controller == "cdra" and tuning.within_guarantee
                              and setup.controllability.passed)

    price, t_out = traces.slot_price, traces.slot_t_out
    delta = tuning.delta if tuning is not None else np.zeros(n)
    if controller == "mcdra" and np.max(z.phi) > 0:
        delta0 = mcdra_delta(z.phi, float(np.max(z.phi)), t_ref[:, 0], tuning)
    else:
        delta0 = np.broadcast_to(delta, (runs, n))
    t0 = t_ref[:, 0].copy()
    state = ZoneState(t0, init_queue(t0, delta0, z))

    zeros_f = lambda: np.zeros(runs)
    zeros_i = lambda: np.zeros(runs, dtype=np.int64)
    fan, coil, disc, absdev = zeros_f(), zeros_f(), zeros_f(), zeros_f()
    viol, lem_lo, lem_hi, lem_unsat = zeros_i(), zeros_i(), zeros_i(), zeros_i()
    lo_slots, hi_slots = zeros_i(), zeros_i()
    q_err = zeros_f()
    cap_excess = np.full(runs, -np.inf)
    it_max, it_sum, binding = zeros_i(), zeros_i(), zeros_i()
    b2_empty, b2_relaxed = zeros_i(), zeros_i()
    traj = None
    if record:
        shape = (runs, slots, n)
        traj = {k: np.empty(shape) for k in
                ("t_in", "t_next", "t_ref", "queue", "m", "discomfort", "coil", "fan_share")}
        traj["fan"] = np.empty((runs, slots))
        traj["price"] = price[:slots].copy()
        traj["t_out"] = t_out[:slots].copy()
    checks_thresholds = controller in ("cdra", "mcdra")

    for t in range(slots):
        obs = SlotObservation(price[t], t_out[t], t_ref[:, t + 1], q[:, t])
        alloc = None
        if controller == "cdra":
            step = cdra_step(state, obs, building, tuning, allocator)
            delta_used = tuning.delta
        elif controller == "mcdra":
            step = mcdra_step(state, obs, building, tuning, allocator, mcdra_queue)
            if np.max(z.phi) > 0:
                delta_used = mcdra_delta(z.phi, float(np.max(z.phi)), obs.t_ref, tuning)
            else:
                delta_used = tuning.delta
        elif controller == "b1":
            m = b1_step(state, obs, building)
            step = _baseline_result(state, m, obs, building, delta, None)
            delta_used = delta
        else:
            alloc, flags = b2_step(state, obs, building)
            step = _baseline_result(state, alloc.m, obs, building, delta, alloc)
            b2_empty += flags["empty"].sum(axis=-1)
            b2_relaxed += flags["cap_relaxed"]
            delta_used = delta
        alloc = step.allocation
        m = step.decision
        t_next = step.state.t_in
        br = step.costs

        fan += br.fan
        coil += br.coil
        disc += br.discomfort
        dev = np.abs(t_next - obs.t_ref)
        absdev += dev.sum(axis=-1)
        out = (t_next < z.t_min - BAND_TOL) | (t_next > z.t_max + BAND_TOL)
        viol += out.sum(axis=-1)
        cap_excess = np.maximum(cap_excess, m.sum(axis=-1) - cfg.m_total_cap)
        q_err = np.maximum(q_err, np.max(np.abs(step.state.queue - (t_next + delta_used)), axis=-1))
        if alloc is not None:
            it = np.asarray(alloc.iterations)
            it_max = np.maximum(it_max, it)
            it_sum += it
            binding += np.asarray(alloc.rho) > 0

        if checks_thresholds:
            qu = step.queue_used
            low = qu < tuning.q_lo
            high = qu > tuning.q_hi
            lo_slots += low.sum(axis=-1)
            hi_slots += high.sum(axis=-1)
            lem_lo += (low & (m != z.m_min)).sum(axis=-1)
            lem_hi += (high & (m > z.m_max)).sum(axis=-1)
            if np.any(high):
                num, den = rate_terms(ZoneState(state.t_in, qu), obs, z, cfg, tuning.v)
                lem_unsat += (high & (num < den * z.m_max)).sum(axis=-1)

        if abort_on_violation and np.any(out):
            r, i = (int(x[0]) for x in np.nonzero(out))
            raise FeasibilityViolation(
                f"run {r} zone {i} left its comfort band at slot {t}: T_next={t_next[r, i]!r}",
                dump={"slot": t, "run": r, "zone": i, "t_in": state.t_in[r].tolist(),
                      "t_next": t_next[r].tolist(), "queue": step.queue_used[r].tolist(),
                      "m": m[r].tolist(), "price": float(obs.price), "t_out": float(obs.t_out),
                      "t_ref": obs.t_ref[r].tolist(), "q": obs.q[r].tolist()},
            )

        if record:
            traj["t_in"][:, t] = state.t_in
            traj["t_next"][:, t] = t_next
            traj["t_ref"][:, t] = obs.t_ref
            traj["queue"][:, t] = step.queue_used if step.queue_used is not None else state.queue
            traj["m"][:, t] = m
            traj["discomfort"][:, t] = z.phi * (t_next - obs.t_ref) ** 2
            traj["coil"][:, t] = costs.coil_cost(
                costs.coil_power_by_zone(m, state.t_in, obs.t_out, cfg), obs.price, cfg)
            traj["fan"][:, t] = br.fan
            total_m = m.sum(axis=-1, keepdims=True)
            share = np.divide(m, total_m, out=np.zeros_like(m), where=total_m > 0)
            traj["fan_share"][:, t] = br.fan[:, None] * share
        state = step.state

    return BatchOutcome(
        slots=slots, n_zones=n, fan=fan, coil=coil, discomfort=disc, abs_dev=absdev,
        violations=viol, threshold_low=lem_lo, threshold_high=lem_hi, threshold_high_unsaturated=lem_unsat,
        threshold_low_slots=lo_slots, threshold_high_slots=hi_slots, queue_identity_err=q_err,
        cap_excess=cap_excess, iterations_max=it_max, iterations_sum=it_sum,
        binding_slots=binding, b2_empty=b2_empty, b2_cap_relaxed=b2_relaxed, trajectory=traj,
    )


def _baseline_result(state, m, obs, building, delta, alloc) -> StepResult:
    z, cfg = building.stacked, building.cfg
    t_next = step_temperature(state.t_in, m, obs.t_out, obs.q, z, cfg)
    br = costs.slot_total_cost(state.t_in, t_next, m, obs.t_out, obs.t_ref, obs.price, z.phi, cfg)
    return StepResult(m, ZoneState(t_next, t_next + delta), br, alloc, state.t_in + delta)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class RunReport:
    controller: str
    seed: int
    horizon: int
    n_zones: int
    distributed: bool
    aggregates: dict
    tuning: dict | None
    envelope: dict
    controllability: dict
    diagnostics: dict
    config: dict
    trajectory: dict | None = None
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "controller": self.controller,
            "seed": self.seed,
            "horizon": self.horizon,
            "decision_slots": self.horizon - 1,
            "n_zones": self.n_zones,
            "distributed": self.distributed,
            "aggregates": self.aggregates,
            "tuning": self.tuning,
            "envelope": self.envelope,
            "controllability": self.controllability,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"


def _report(config: RunConfig, setup: RunSetup, outcome: BatchOutcome, i: int, seed: int,
            wall: float) -> RunReport:
    traj = None
    if outcome.trajectory is not None:
        # price and t_out are shared by all runs; everything else has a leading run axis
        traj = {k: (v if k in ("price", "t_out") else v[i]) for k, v in outcome.trajectory.items()}
    cfg_dict = config.to_dict()
    cfg_dict["seed"] = seed
    return RunReport(
        controller=config.controller, seed=seed, horizon=setup.traces.horizon,
        n_zones=setup.building.n_zones, distributed=config.distributed,
        aggregates=outcome.run_aggregates(i),
        tuning=setup.tuning.to_dict() if setup.tuning is not None else None,
        envelope=setup.envelope.to_dict(), controllability=setup.controllability.to_dict(),
        diagnostics=outcome.run_diagnostics(i), config=cfg_dict, trajectory=traj, wall_clock=wall,
    )


def run_simulation(config: RunConfig, traces: TraceSet | None = None, *, record: bool = True,
                   audit_privacy: bool = True) -> RunReport:
    """One run of ``config`` (centralized or distributed) with its full report."""
    start = time.perf_counter()
    setup = prepare(config, traces)
    inputs = sample_batch([config.seed], setup.building.n_zones, setup.traces.horizon,
                          t_ref_values=config.t_ref_values, q_range=config.q_range,
                          slots_per_hour=setup.traces.slots_per_hour)
    allocator = auditor = None
    if config.distributed:
        auditor = PrivacyAuditor() if audit_privacy else None
        allocator = DistributedAllocator(setup.building, auditor)
    outcome = simulate_batch(setup, config.controller, inputs, allocator=allocator, record=record,
                             mcdra_queue=config.mcdra_queue)
    if allocator is not None:
        outcome.coordination = {
            "frames": allocator.total_frames,
            "expected_frames": allocator.expected_frames,
            "frames_audited": auditor.frames_checked if auditor else 0,
            "privacy_violations": len(auditor.violations) if auditor else 0,
        }
    return _report(config, setup, outcome, 0, config.seed, time.perf_counter() - start)


def run_seeds(config: RunConfig, seeds: Sequence[int], traces: TraceSet | None = None, *,
              record: bool = False) -> list[RunReport]:
    """Centralized runs for many seeds, batched into one vectorised loop."""
    if config.distributed:
        raise ConfigError("batched runs are centralized; run distributed seeds one at a time")
    start = time.perf_counter()
    setup = prepare(config, traces)
    inputs = sample_batch(list(seeds), setup.building.n_zones, setup.traces.horizon,
                          t_ref_values=config.t_ref_values, q_range=config.q_range,
                          slots_per_hour=setup.traces.slots_per_hour)
    outcome = simulate_batch(setup, config.controller, inputs, record=record,
                             mcdra_queue=config.mcdra_queue)
    wall = time.perf_counter() - start
    return [_report(config, setup, outcome, i, int(s), wall) for i, s in enumerate(seeds)]


TRAJECTORY_COLUMNS = ("slot", "zone", "t_in", "t_next", "t_ref", "queue", "m",
                      "discomfort", "coil", "fan_share")


def emit_report(report: RunReport, fmt: str, out_dir) -> list[Path]:
    """Write ``trajectory.csv`` and/or ``report.json`` into ``out_dir``.

    CSV has one row per slot per zone with full float precision; JSON holds
    aggregates, tuning audit and diagnostics with sorted keys (timing excluded),
    so identical runs give identical bytes.
    """
    if fmt not in ("csv", "json", "both"):
        raise ValueError("format must be csv, json or both")
    if report.horizon < 2:
        raise ValueError("report has an empty horizon")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        if report.trajectory is None:
            raise ValueError("report carries no trajectory; rerun with record=True")
        path = out_dir / "trajectory.csv"
        tr = report.trajectory
        slots, n = tr["m"].shape
        if slots == 0:
            raise ValueError("report has an empty horizon")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_COLUMNS)
            for t in range(slots):
                for i in range(n):
                    w.writerow([t, i] + [repr(float(tr[k][t, i])) for k in TRAJECTORY_COLUMNS[2:]])
        written.append(path)
    if fmt in ("json", "both"):
        path = out_dir / "report.json"
        path.write_text(report.to_json())
        written.append(path)
    return written


def read_trajectory_csv(path) -> dict:
    """Load an emitted trajectory back into (slots, zones) arrays."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty trajectory")
    slots = max(int(r["slot"]) for r in rows) + 1
    n = max(int(r["zone"]) for r in rows) + 1
    out = {k: np.empty((slots, n)) for k in TRAJECTORY_COLUMNS[2:]}
    for r in rows:
        t, i = int(r["slot"]), int(r["zone"])
        for k in out:
            out[k][t, i] = float(r[k])
    return out


def aggregates_from_trajectory(tr: dict) -> dict:
    """Recompute the headline aggregates from per-slot, per-zone rows."""
    slots, n = tr["m"].shape
    fan = float(np.sum(tr["fan_share"]))
    coil = float(np.sum(tr["coil"]))
    disc = float(np.sum(tr["discomfort"]))
    return {
        "slots": slots,
        "fan_cost": fan,
        "coil_cost": coil,
        "energy_cost": fan + coil,
        "discomfort_cost": disc,
        "total_cost": fan + coil + disc,
        "atd": costs.atd(tr["t_next"], tr["t_ref"]),
    }


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_PARAMS = ("tmax", "phi")


def _sweep_point(args) -> list[dict]:
    config, param, value, controller, seeds, traces = args
    building = config.building.with_zone_values(**{"t_max" if param == "tmax" else "phi": value})
    cfg = config.with_overrides(building=building, controller=controller, distributed=False)
    rows = []
    for rep in run_seeds(cfg, seeds, traces):
        a, d = rep.aggregates, rep.diagnostics
        rows.append({
            "param": param, "value": float(value), "controller": controller, "seed": rep.seed,
            "avg_energy_cost": a["avg_energy_cost"], "avg_discomfort_cost": a["avg_discomfort_cost"],
            "avg_total_cost": a["avg_total_cost"], "atd": a["atd"],
            "band_violations": d["band_violations"],
            "threshold_counterexamples": d["threshold_low_counterexamples"] + d["threshold_high_counterexamples"],
            "v": rep.tuning["v"] if rep.tuning else None,
            "gap_constant": rep.tuning["gap_constant"] if rep.tuning else None,
        })
    return rows


def sweep(config: RunConfig, param: str, values: Sequence[float],
          controllers: Sequence[str] = CONTROLLERS, seeds: Sequence[int] | None = None,
          traces: TraceSet | None = None, workers: int = 1) -> list[dict]:
    """Re-run every controller at each value of ``param`` (``tmax`` or ``phi``).

    Tuning is re-derived at every point.  Points are independent; with
    ``workers`` > 1 they run in separate processes.  Rows come back in
    (value, controller, seed) order either way.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
    seeds = [config.seed] if seeds is None else list(seeds)
    traces = traces or config.traces()
    jobs = [(config, param, v, c, seeds, traces) for v in values for c in controllers]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sweep_point, jobs))
    else:
        parts = [_sweep_point(j) for j in jobs]
    return [row for part in parts for row in part]


def write_sweep(rows: list[dict], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "sweep.csv", out_dir / "sweep.json"
    cols = list(rows[0]) if rows else []
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    json_path.write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    return [csv_path, json_path]
