"""Deterministic compute-allocation planning over simulated instance catalogs.

Three planners over the same feasibility rules:

* ``naive_plan``      - one instance per stream, cheapest type that fits it.
* ``pack_streams``    - first-fit-decreasing multi-dimensional bin packing
                        with cost-ratio bin opening, a right-sizing pass,
                        and a never-worse-than-naive guard.
* ``brute_force_plan``- exhaustive optimum over stream partitions (small
                        instances only); the oracle the heuristic is
                        measured against.

Demand vectors are (cpu/s, memory MiB, gpu/s); capacities likewise. Costs
are handled as integer micro-currency per hour so plan comparisons are
exact. When an RTT model is given, a region is feasible for a stream only
if the achievable rate stays at or above ``quality_floor`` of the required
rate; the degradation law is min(required_fps, k / rtt_ms), a configurable
stand-in for "farther away means slower refresh".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import CamnetError

DIMS = 3  # cpu rate, memory, gpu rate
DEFAULT_RTT_K = 2000.0  # frames*ms/s
DEFAULT_QUALITY_FLOOR = 0.9
BRUTE_FORCE_MAX_STREAMS = 10
BRUTE_FORCE_MAX_TYPES = 4
_EPS = 1e-9

REASON_NO_CAPACITY = "no_instance_type_fits"
REASON_RTT = "rtt_floor_unmet_everywhere"


class PlanningError(CamnetError):
    pass


@dataclass(frozen=True)
class InstanceType:
    name: str
    region: str
    cpu_capacity: float
    memory_capacity: float
    gpu_capacity: float
    cost_rate: float  # currency per hour

    def __post_init__(self):
        if self.cpu_capacity <= 0:
            raise PlanningError(f"{self.name}: cpu_capacity must be positive")
        if self.memory_capacity < 0 or self.gpu_capacity < 0:
            raise PlanningError(f"{self.name}: capacities must be non-negative")
        if self.cost_rate <= 0:
            raise PlanningError(f"{self.name}: cost_rate must be positive")

    @property
    def cost_micro(self) -> int:
        return round(self.cost_rate * 1_000_000)

    @property
    def capacities(self) -> tuple[float, float, float]:
        return (self.cpu_capacity, self.memory_capacity, self.gpu_capacity)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "region": self.region,
            "cpu_capacity": self.cpu_capacity,
            "memory_capacity": self.memory_capacity,
            "gpu_capacity": self.gpu_capacity,
            "cost_rate": self.cost_rate,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InstanceType":
        return cls(
            name=str(d["name"]),
            region=str(d["region"]),
            cpu_capacity=float(d["cpu_capacity"]),
            memory_capacity=float(d["memory_capacity"]),
            gpu_capacity=float(d.get("gpu_capacity", 0.0)),
            cost_rate=float(d["cost_rate"]),
        )


@dataclass(frozen=True)
class StreamRequirement:
    stream_id: str
    cpu_per_frame: float
    memory_mib: float
    gpu_per_frame: float
    required_fps: float
    camera_region: str

    def __post_init__(self):
        if self.required_fps <= 0:
            raise PlanningError(f"{self.stream_id}: required_fps must be positive")
        if self.cpu_per_frame <= 0:
            raise PlanningError(f"{self.stream_id}: cpu_per_frame must be positive")
        if self.memory_mib < 0 or self.gpu_per_frame < 0:
            raise PlanningError(f"{self.stream_id}: demands must be non-negative")

    @property
    def demand(self) -> tuple[float, float, float]:
        """Demand rate vector: per-frame costs scaled by required fps."""
        return (
            self.cpu_per_frame * self.required_fps,
            self.memory_mib,
            self.gpu_per_frame * self.required_fps,
        )

    def to_json(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "cpu_per_frame": self.cpu_per_frame,
            "memory": self.memory_mib,
            "gpu_per_frame": self.gpu_per_frame,
            "required_fps": self.required_fps,
            "camera_region": self.camera_region,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StreamRequirement":
        return cls(
            stream_id=str(d["stream_id"]),
            cpu_per_frame=float(d["cpu_per_frame"]),
            memory_mib=float(d["memory"]),
            gpu_per_frame=float(d.get("gpu_per_frame", 0.0)),
            required_fps=float(d["required_fps"]),
            camera_region=str(d["camera_region"]),
        )


@dataclass
class RttModel:
    rtt_ms: dict[tuple[str, str], float]
    k: float = DEFAULT_RTT_K

    def __post_init__(self):
        if self.k <= 0:
            raise PlanningError("rtt model k must be positive")
        for pair, ms in self.rtt_ms.items():
            if ms <= 0:
                raise PlanningError(f"rtt for {pair} must be positive")

    def lookup(self, region_a: str, region_b: str) -> float:
        ms = self.rtt_ms.get((region_a, region_b))
        if ms is None:
            ms = self.rtt_ms.get((region_b, region_a))
        if ms is None:
            raise PlanningError(f"no rtt entry for regions {region_a!r} and {region_b!r}")
        return ms

    @classmethod
    def from_json(cls, d: dict) -> "RttModel":
        table = {}
        for row in d.get("rtt_ms", []):
            table[(str(row["a"]), str(row["b"]))] = float(row["ms"])
        return cls(rtt_ms=table, k=float(d.get("k", DEFAULT_RTT_K)))

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "rtt_ms": [{"a": a, "b": b, "ms": ms} for (a, b), ms in sorted(self.rtt_ms.items())],
        }


def achieved_fps(req: StreamRequirement, instance_region: str, model: RttModel) -> float:
    """Refresh rate the stream can sustain from a region: min(required, k/rtt)."""
    rtt = model.lookup(instance_region, req.camera_region)
    return min(req.required_fps, model.k / rtt)


@dataclass(frozen=True)
class PlanBin:
    instance: InstanceType
    stream_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {"instance": self.instance.to_json(), "stream_ids": list(self.stream_ids)}


@dataclass(frozen=True)
class AllocationPlan:
    bins: tuple[PlanBin, ...]
    unassigned: tuple[tuple[str, str], ...]  # (stream_id, reason)
    duration_h: float

    @property
    def cost_per_hour_micro(self) -> int:
        return sum(b.instance.cost_micro for b in self.bins)

    @property
    def total_cost(self) -> float:
        return round(self.cost_per_hour_micro * self.duration_h / 1_000_000, 6)

    def to_json(self) -> dict:
        return {
            "bins": [b.to_json() for b in self.bins],
            "unassigned": [{"stream_id": s, "reason": r} for s, r in self.unassigned],
            "duration_hours": self.duration_h,
            "cost_per_hour": round(self.cost_per_hour_micro / 1_000_000, 6),
            "total_cost": self.total_cost,
        }


# ---------------------------------------------------------------------------
# Shared feasibility rules
# ---------------------------------------------------------------------------

def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def fits(demand: tuple, capacities: tuple) -> bool:
    """Demand fits iff no dimension overflows (tiny relative tolerance)."""
    return all(d <= c + _EPS * max(1.0, abs(c)) for d, c in zip(demand, capacities))


def _rtt_ok(req: StreamRequirement, region: str, model: Optional[RttModel], floor: float) -> bool:
    if model is None:
        return True
    return achieved_fps(req, region, model) >= req.required_fps * floor - _EPS


def reference_capacities(catalog: Iterable[InstanceType]) -> tuple[float, float, float]:
    """Normalizing reference: the largest offered capacity per dimension."""
    caps = list(zip(*(t.capacities for t in catalog)))
    return tuple(max(c) for c in caps)


def binding_dimension(demand: tuple, reference: tuple) -> int:
    """Index of the dimension with the highest demand relative to the reference."""
    ratios = [(d / r if r > 0 else (float("inf") if d > 0 else 0.0)) for d, r in zip(demand, reference)]
    return max(range(DIMS), key=lambda i: (ratios[i], -i))


def _feasible_types(
    req: StreamRequirement,
    catalog: list[InstanceType],
    model: Optional[RttModel],
    floor: float,
) -> list[InstanceType]:
    return [t for t in catalog if fits(req.demand, t.capacities) and _rtt_ok(req, t.region, model, floor)]


def _partition_unassignable(reqs, catalog, model, floor):
    """Split streams into (plannable, unassigned-with-reason)."""
    plannable = []
    unassigned = []
    for req in reqs:
        if _feasible_types(req, catalog, model, floor):
            plannable.append(req)
        elif any(fits(req.demand, t.capacities) for t in catalog):
            unassigned.append((req.stream_id, REASON_RTT))
        else:
            unassigned.append((req.stream_id, REASON_NO_CAPACITY))
    return plannable, tuple(sorted(unassigned))


# ---------------------------------------------------------------------------
# Planners
# ---------------------------------------------------------------------------

def select_instance_type(workload: StreamRequirement, catalog: list[InstanceType]) -> InstanceType:
    """Optimal single type: minimum cost over capacity in the workload's
    binding dimension, among types that can host that dimension.

    Ties break toward lower cost, then name order, so selection is
    deterministic and invariant under scaling every cost by a constant.
    """
    if not catalog:
        raise PlanningError("catalog is empty")
    ref = reference_capacities(catalog)
    demand = workload.demand
    bind = binding_dimension(demand, ref)
    feasible = [t for t in catalog if t.capacities[bind] + _EPS >= demand[bind]]
    if not feasible:
        raise PlanningError(
            f"no instance type can host the binding dimension (axis {bind}, demand {demand[bind]})"
        )
    return min(
        feasible,
        key=lambda t: (t.cost_micro / t.capacities[bind], t.cost_micro, t.name),
    )


def naive_plan(
    reqs: list[StreamRequirement],
    catalog: list[InstanceType],
    duration_h: float,
    model: Optional[RttModel] = None,
    *,
    quality_floor: float = DEFAULT_QUALITY_FLOOR,
) -> AllocationPlan:
    """Baseline: one bin per stream using the cheapest type that fits it alone."""
    _check_common(catalog, duration_h)
    plannable, unassigned = _partition_unassignable(reqs, catalog, model, quality_floor)
    bins = []
    for req in sorted(plannable, key=lambda r: r.stream_id):
        best = min(
            _feasible_types(req, catalog, model, quality_floor),
            key=lambda t: (t.cost_micro, t.name),
        )
        bins.append(PlanBin(instance=best, stream_ids=(req.stream_id,)))
    return AllocationPlan(bins=tuple(bins), unassigned=unassigned, duration_h=duration_h)


def pack_streams(
    reqs: list[StreamRequirement],
    catalog: list[InstanceType],
    duration_h: float,
    model: Optional[RttModel] = None,
    *,
    quality_floor: float = DEFAULT_QUALITY_FLOOR,
) -> AllocationPlan:
    """First-fit-decreasing packing with cost-ratio bin opening.

    Streams are sorted by their largest reference-normalized demand
    component; each opens in the first bin with room (and an acceptable
    region), else a new bin of the type with the best cost-to-power ratio
    for that stream. A right-sizing pass then swaps every bin to the
    cheapest type that still fits its load, and the result is kept only if
    it beats the one-instance-per-stream baseline, so consolidation never
    costs more than not consolidating.
    """
    _check_common(catalog, duration_h)
    plannable, unassigned = _partition_unassignable(reqs, catalog, model, quality_floor)
    ref = reference_capacities(catalog)

    def sort_key(req: StreamRequirement):
        norm = [d / r if r > 0 else 0.0 for d, r in zip(req.demand, ref)]
        return (-max(norm), req.stream_id)

    bins: list[dict] = []  # {"type": InstanceType, "streams": [req], "load": tuple}
    for req in sorted(plannable, key=sort_key):
        placed = False
        for b in bins:
            new_load = _add(b["load"], req.demand)
            if fits(new_load, b["type"].capacities) and _rtt_ok(req, b["type"].region, model, quality_floor):
                b["streams"].append(req)
                b["load"] = new_load
                placed = True
                break
        if placed:
            continue
        candidates = _feasible_types(req, catalog, model, quality_floor)
        bind = binding_dimension(req.demand, ref)
        opener = min(
            candidates,
            key=lambda t: (
                t.cost_micro / t.capacities[bind] if t.capacities[bind] > 0 else float("inf"),
                t.cost_micro,
                t.name,
            ),
        )
        bins.append({"type": opener, "streams": [req], "load": req.demand})

    # right-size: cheapest type that still fits each bin's final load
    for b in bins:
        options = [
            t
            for t in catalog
            if fits(b["load"], t.capacities)
            and all(_rtt_ok(s, t.region, model, quality_floor) for s in b["streams"])
        ]
        b["type"] = min(options, key=lambda t: (t.cost_micro, t.name))

    plan = AllocationPlan(
        bins=tuple(
            PlanBin(instance=b["type"], stream_ids=tuple(sorted(s.stream_id for s in b["streams"])))
            for b in bins
        ),
        unassigned=unassigned,
        duration_h=duration_h,
    )
    baseline = naive_plan(reqs, catalog, duration_h, model, quality_floor=quality_floor)
    if baseline.cost_per_hour_micro < plan.cost_per_hour_micro:
        return baseline
    return plan


def brute_force_plan(
    reqs: list[StreamRequirement],
    catalog: list[InstanceType],
    duration_h: float,
    model: Optional[RttModel] = None,
    *,
    quality_floor: float = DEFAULT_QUALITY_FLOOR,
) -> AllocationPlan:
    """Exhaustive optimum over all stream-to-bin partitions.

    Every bin independently takes its cheapest feasible type, so minimizing
    over partitions minimizes over all plans. Exponential: capped at
    10 streams and 4 types.
    """
    _check_common(catalog, duration_h)
    if len(reqs) > BRUTE_FORCE_MAX_STREAMS:
        raise PlanningError(f"brute force capped at {BRUTE_FORCE_MAX_STREAMS} streams")
    if len(catalog) > BRUTE_FORCE_MAX_TYPES:
        raise PlanningError(f"brute force capped at {BRUTE_FORCE_MAX_TYPES} instance types")
    plannable, unassigned = _partition_unassignable(reqs, catalog, model, quality_floor)
    plannable = sorted(plannable, key=lambda r: r.stream_id)

    best_cost: Optional[int] = None
    best_key = None
    best_bins: tuple[PlanBin, ...] = ()

    for partition in _set_partitions(plannable):
        cost = 0
        bins = []
        feasible = True
        for block in partition:
            load = block[0].demand
            for s in block[1:]:
                load = _add(load, s.demand)
            options = [
                t
                for t in catalog
                if fits(load, t.capacities)
                and all(_rtt_ok(s, t.region, model, quality_floor) for s in block)
            ]
            if not options:
                feasible = False
                break
            t = min(options, key=lambda t: (t.cost_micro, t.name))
            cost += t.cost_micro
            bins.append(PlanBin(instance=t, stream_ids=tuple(sorted(s.stream_id for s in block))))
        if not feasible:
            continue
        bins.sort(key=lambda b: b.stream_ids)
        key = tuple((b.instance.name, b.stream_ids) for b in bins)
        if best_cost is None or cost < best_cost or (cost == best_cost and key < best_key):
            best_cost, best_key, best_bins = cost, key, tuple(bins)

    if plannable and best_cost is None:
        raise PlanningError("no feasible plan exists for the plannable streams")
    return AllocationPlan(bins=best_bins, unassigned=unassigned, duration_h=duration_h)


def _set_partitions(items: list):
    """All partitions of items into non-empty unordered blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [first]] + part[i + 1 :]
        yield part + [[first]]


def _check_common(catalog, duration_h):
    if not catalog:
        raise PlanningError("catalog is empty")
    if duration_h <= 0:
        raise PlanningError("duration must be positive")
    names = [t.name for t in catalog]
    if len(set(names)) != len(names):
        raise PlanningError("instance type names must be unique")


def plan_report(plans: dict[str, AllocationPlan], baseline: str) -> list[dict]:
    """Deterministic comparison table; savings are relative to the baseline plan."""
    if baseline not in plans:
        raise PlanningError(f"baseline {baseline!r} is not among the plans")
    reference = plans[baseline]
    ref_streams = _stream_set(reference)
    ref_cost = reference.cost_per_hour_micro
    rows = []
    for name, plan in plans.items():
        if _stream_set(plan) != ref_streams:
            raise PlanningError(f"plan {name!r} covers a different stream set than the baseline")
        if plan.duration_h != reference.duration_h:
            raise PlanningError(f"plan {name!r} has a different duration than the baseline")
        savings = None
        if ref_cost > 0:
            savings = round((1.0 - plan.cost_per_hour_micro / ref_cost) * 100.0, 4)
        rows.append(
            {
                "name": name,
                "bins": len(plan.bins),
                "unassigned": len(plan.unassigned),
                "total_cost": plan.total_cost,
                "pct_savings_vs_baseline": savings,
            }
        )
    return rows


def _stream_set(plan: AllocationPlan) -> frozenset:
    assigned = {s for b in plan.bins for s in b.stream_ids}
    return frozenset(assigned | {s for s, _ in plan.unassigned})


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def load_catalog(path: str) -> list[InstanceType]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        types = [InstanceType.from_json(d) for d in data["instance_types"]]
    except (KeyError, TypeError) as exc:
        raise PlanningError(f"catalog file must hold {{'instance_types': [...]}}: {exc}") from exc
    if not types:
        raise PlanningError("catalog holds no instance types")
    return types


def load_workload(path: str) -> list[StreamRequirement]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        streams = [StreamRequirement.from_json(d) for d in data["streams"]]
    except (KeyError, TypeError) as exc:
        raise PlanningError(f"workload file must hold {{'streams': [...]}}: {exc}") from exc
    return streams


def load_rtt(path: str) -> RttModel:
    with open(path, "r", encoding="utf-8") as fh:
        return RttModel.from_json(json.load(fh))
