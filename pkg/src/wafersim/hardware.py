"""Parametric model of the wafer substrate's discrete resources.

The wafer is a grid of ASICs; each ASIC carries a fixed number of neuron
circuits, each circuit a fixed synaptic fan-in.  Circuits on one ASIC can be
merged to raise the fan-in of a combined neuron.  Routing resources are
modeled as a per-grid-edge lane count.  Defaults are aggregate-consistent
stand-ins (384 * 512 = 196,608 circuits, 224 * 64 = 14,336 max fan-in); the
per-ASIC splits are modeling choices and fully config-overridable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import NetworkSpec, WafersimError, in_degree_array, in_degree_stats


class InfeasibleFanInError(WafersimError):
    pass


class CapacityError(WafersimError):
    pass


@dataclass
class WaferTopology:
    rows: int = 16
    cols: int = 24
    available: Optional[np.ndarray] = None  # bool mask (rows, cols); None = all
    circuits_per_asic: int = 512
    fanin_per_circuit: int = 224
    max_merge: int = 64
    route_capacity: int = 320  # lanes per grid edge
    offchip_readout_limit: int = 30

    def __post_init__(self):
        if min(self.rows, self.cols, self.circuits_per_asic,
               self.fanin_per_circuit, self.max_merge) <= 0:
            raise WafersimError("topology capacities must be positive")
        if self.route_capacity < 0 or self.offchip_readout_limit < 0:
            raise WafersimError("route_capacity and readout limit must be >= 0")
        if self.available is None:
            self.available = np.ones((self.rows, self.cols), dtype=bool)
        else:
            self.available = np.asarray(self.available, dtype=bool)
            if self.available.shape != (self.rows, self.cols):
                raise WafersimError("availability mask shape mismatch")

    @property
    def n_asics(self) -> int:
        return int(self.available.sum())

    @property
    def total_circuits(self) -> int:
        return self.n_asics * self.circuits_per_asic

    @property
    def max_fan_in(self) -> int:
        return self.fanin_per_circuit * self.max_merge

    def asic_coords(self) -> list[tuple[int, int]]:
        """Available ASICs in row-major order."""
        rr, cc = np.nonzero(self.available)
        return list(zip(rr.tolist(), cc.tolist()))

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "available": self.available.astype(int).tolist(),
            "circuits_per_asic": self.circuits_per_asic,
            "fanin_per_circuit": self.fanin_per_circuit,
            "max_merge": self.max_merge,
            "route_capacity": self.route_capacity,
            "offchip_readout_limit": self.offchip_readout_limit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WaferTopology":
        doc = dict(doc)
        if doc.get("available") is not None:
            doc["available"] = np.asarray(doc["available"], dtype=bool)
        return cls(**doc)

    def content_hash(self) -> str:
        import hashlib
        import json
        return hashlib.blake2b(
            json.dumps(self.to_dict(), sort_keys=True).encode(), digest_size=16,
        ).hexdigest()


@dataclass
class CombinedNeuron:
    asic: int  # index into asic_coords() order
    first_circuit: int
    n_circuits: int

    def fan_in_capacity(self, topology: WaferTopology) -> int:
        return self.n_circuits * topology.fanin_per_circuit


def build_wafer(config: Optional[dict] = None) -> WaferTopology:
    """Topology from a config dict; defaults match the published aggregates."""
    return WaferTopology.from_dict(config or {})


def circuits_needed(fan_in: int, topology: WaferTopology) -> int:
    """Circuits that must be merged to accommodate ``fan_in`` synapses."""
    if fan_in < 0:
        raise WafersimError("fan_in must be >= 0")
    n = max(1, math.ceil(fan_in / topology.fanin_per_circuit))
    if n > topology.max_merge:
        raise InfeasibleFanInError(
            f"fan-in {fan_in} needs {n} circuits > max_merge {topology.max_merge}"
        )
    return n


def _pack_circuits(per_neuron_circuits: np.ndarray, topology: WaferTopology
                   ) -> Optional[int]:
    """ASICs consumed by greedy contiguous packing (one fresh ASIC per
    population is accounted for by the caller); None if any neuron is
    unplaceable.  Mirrors the mapper's placement arithmetic exactly."""
    used_asics = 0
    free = 0
    for m in per_neuron_circuits:
        if m > topology.circuits_per_asic:
            return None
        if m > free:
            used_asics += 1
            free = topology.circuits_per_asic
        free -= m
    return used_asics


@dataclass
class CapacityReport:
    feasible: bool
    n_neurons: int
    required_circuits: int
    required_asics: Optional[int]
    available_circuits: int
    available_asics: int
    max_fan_in_requested: int
    max_fan_in_supported: int
    realizable_synapse_bound: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(vars(self))


def capacity_report(topology: WaferTopology, spec: NetworkSpec) -> CapacityReport:
    """Feasibility summary: circuits and ASICs required vs available.

    Accounts for circuit merging per neuron fan-in and for per-population
    packing fragmentation (the same arithmetic the mapper uses), so
    ``feasible`` guarantees the mapper can place all neurons.  Does not route.
    """
    notes = []
    degrees = in_degree_array(spec)
    stats = in_degree_stats(spec)
    max_fan_in = int(degrees.max()) if len(degrees) else 0
    feasible = True
    if max_fan_in > topology.max_fan_in:
        feasible = False
        notes.append(
            f"max fan-in {max_fan_in} exceeds supported {topology.max_fan_in}"
        )
        required_circuits = 0
        required_asics = None
    else:
        per_neuron = np.maximum(
            1, np.ceil(degrees / topology.fanin_per_circuit).astype(np.int64))
        required_circuits = int(per_neuron.sum())
        required_asics = 0
        offsets = spec.population_offsets()
        for pop in spec.populations:  # each population starts on a fresh ASIC
            o = offsets[pop.pid]
            used = _pack_circuits(per_neuron[o:o + pop.size], topology)
            if used is None:
                feasible = False
                notes.append(f"population {pop.pid} has an unplaceable neuron")
                required_asics = None
                break
            required_asics += used
        if required_asics is not None and required_asics > topology.n_asics:
            feasible = False
            notes.append(
                f"requires {required_asics} ASICs, only {topology.n_asics} available"
            )
    realizable_bound = min(
        stats.total_synapses,
        topology.total_circuits * topology.fanin_per_circuit,
    )
    return CapacityReport(
        feasible=feasible,
        n_neurons=spec.n_neurons(),
        required_circuits=required_circuits,
        required_asics=required_asics,
        available_circuits=topology.total_circuits,
        available_asics=topology.n_asics,
        max_fan_in_requested=max_fan_in,
        max_fan_in_supported=topology.max_fan_in,
        realizable_synapse_bound=realizable_bound,
        notes=notes,
    )
