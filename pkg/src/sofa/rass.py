"""Reuse-aware KV scheduling driven by per-key query bitmasks."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field

from .core import ParameterError

# Golden instance: four queries, eight keys. k2/k3 are shared by q0-q2 and k5/k6 are used by
# q3 alone; the remaining demands complete the instance.
GOLDEN_DEMANDS: tuple[tuple[int, ...], ...] = (
    (0, 1, 2, 3),
    (2, 3, 4, 7),
    (1, 2, 3, 7),
    (4, 5, 6, 7),
)
GOLDEN_CAPACITY = 4


@dataclass(frozen=True)
class DemandMap:
    masks: dict[int, int]
    num_queries: int

    def __len__(self) -> int:
        return len(self.masks)

    def pairs(self) -> set[tuple[int, int]]:
        return {(q, k) for k, m in self.masks.items() for q in range(self.num_queries) if m >> q & 1}


def _index_sets(fc_sets) -> list[list[int]]:
    if hasattr(fc_sets, "index_sets"):
        return fc_sets.index_sets()
    return [[int(i) for i in row] for row in fc_sets]


def build_demand_map(fc_sets) -> DemandMap:
    """Invert per-query key sets into key -> query bitmask (bit q = query q)."""
    rows = _index_sets(fc_sets)
    masks: dict[int, int] = {}
    for q, keys in enumerate(rows):
        for k in keys:
            masks[k] = masks.get(k, 0) | (1 << q)
    return DemandMap(dict(sorted(masks.items())), len(rows))


@dataclass
class Phase:
    keys: list[int]
    served: int  # union bitmask of queries served in this phase

    @property
    def fetches(self) -> int:
        return len(self.keys)


@dataclass
class SchedulePlan:
    phases: list[Phase] = field(default_factory=list)
    num_queries: int = 0

    @property
    def fetches(self) -> int:
        return sum(p.fetches for p in self.phases)

    def to_json(self) -> str:
        width = max(1, (self.num_queries + 3) // 4)
        doc = {
            "num_queries": self.num_queries,
            "phases": [
                {"keys": p.keys, "served": f"0x{p.served:0{width}x}", "fetches": p.fetches}
                for p in self.phases
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def _rank(k: int, masks: dict[int, int]) -> tuple[int, int]:
    return (-bin(masks[k]).count("1"), k)


def schedule_rass(demand: DemandMap, phase_capacity: int) -> SchedulePlan:
    """Greedy phase packing.

    Each phase is seeded with the unscheduled key shared by the most queries
    (ties: lower index) plus any keys with the same query mask. It is then
    topped up with keys used only by queries outside the seed's mask, most
    shared first, and finally with whatever remains in the same order.
    """
    if phase_capacity < 1:
        raise ParameterError("phase_capacity must be >= 1")
    masks = demand.masks
    pending = sorted(masks, key=lambda k: _rank(k, masks))
    plan = SchedulePlan(num_queries=demand.num_queries)
    while pending:
        seed = pending[0]
        seed_mask = masks[seed]
        phase = [seed]
        for k in pending[1:]:
            if len(phase) >= phase_capacity:
                break
            if masks[k] == seed_mask:
                phase.append(k)
        for k in pending:
            if len(phase) >= phase_capacity:
                break
            if k not in phase and masks[k] & seed_mask == 0:
                phase.append(k)
        for k in pending:
            if len(phase) >= phase_capacity:
                break
            if k not in phase:
                phase.append(k)
        served = 0
        for k in phase:
            served |= masks[k]
        plan.phases.append(Phase(phase, served))
        chosen = set(phase)
        pending = [k for k in pending if k not in chosen]
    return plan


def baseline_fetches(fc_sets, capacity: int) -> int:
    """Left-to-right order: queries in order, each query's keys in index
    order, through an LRU working set of ``capacity`` KV slots."""
    if capacity < 1:
        raise ParameterError("capacity must be >= 1")
    cache: OrderedDict[int, None] = OrderedDict()
    fetches = 0
    for keys in _index_sets(fc_sets):
        for k in sorted(set(keys)):
            if k in cache:
                cache.move_to_end(k)
                continue
            fetches += 1
            cache[k] = None
            if len(cache) > capacity:
                cache.popitem(last=False)
    return fetches


def count_memory_access(plan_or_baseline, fc_sets, capacity: int, *,
                        bytes_per_fetch: int = 1) -> dict:
    """KV fetch tally for a RASS plan, or for the baseline order when
    ``plan_or_baseline`` is ``None`` or the string ``"baseline"``."""
    if plan_or_baseline is None or plan_or_baseline == "baseline":
        n = baseline_fetches(fc_sets, capacity)
        kind = "baseline"
    else:
        n = plan_or_baseline.fetches
        kind = "rass"
    return {"schedule": kind, "fetches": n, "bytes": n * bytes_per_fetch}


def check_coverage(plan: SchedulePlan, demand: DemandMap) -> bool:
    """Every demanded key scheduled exactly once, nothing extra."""
    seen: list[int] = [k for p in plan.phases for k in p.keys]
    return len(seen) == len(set(seen)) and set(seen) == set(demand.masks)
