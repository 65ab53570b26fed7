"""Network description shared by all pipeline stages.

A :class:`NetworkSpec` holds populations, projections and stimuli.  Probabilistic
projections can be instantiated into explicit edge lists with
:func:`sample_connectivity`; sampling is deterministic per (projection id, seed)
via counter-based streams, so resampling is byte-identical and independent of
ordering or thread count.

Units used throughout: mV, ms, nA, nF, uS (so R = tau_m / c_m is in MOhm and
g * (E - V) is in nA).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .rngtools import stream


class WafersimError(Exception):
    """Base class for toolkit errors."""


class InfeasibleInDegreeError(WafersimError):
    pass


class NotSampledError(WafersimError):
    pass


class Sign(str, Enum):
    EXCITATORY = "excitatory"
    INHIBITORY = "inhibitory"


class SynapseKind(str, Enum):
    CURRENT_EXP = "current_exp"
    CONDUCTANCE_EXP = "conductance_exp"


class StimulusKind(str, Enum):
    POISSON_PER_NEURON = "poisson_per_neuron"
    POISSON_POOL = "poisson_pool"
    LEAK_SHIFT = "leak_shift"


@dataclass
class NeuronParameters:
    tau_m: float = 20.0  # ms
    tau_ref: float = 2.0  # ms
    tau_syn_exc: float = 0.5  # ms
    tau_syn_inh: float = 0.5  # ms
    v_rest: float = -70.0  # mV
    v_reset: float = -60.0  # mV
    v_thresh: float = -50.0  # mV
    e_rev_exc: float = 0.0  # mV (conductance mode)
    e_rev_inh: float = -80.0  # mV (conductance mode)
    c_m: float = 0.25  # nF
    i_offset: float = 0.0  # nA

    VARIABLE_FIELDS = (
        "tau_m", "tau_ref", "tau_syn_exc", "tau_syn_inh", "v_rest",
        "v_reset", "v_thresh", "e_rev_exc", "e_rev_inh", "c_m", "i_offset",
    )

    def check(self, conductance: bool = False) -> list[str]:
        problems = []
        if self.tau_m <= 0:
            problems.append("tau_m must be > 0")
        if self.tau_ref < 0:
            problems.append("tau_ref must be >= 0")
        if self.tau_syn_exc <= 0 or self.tau_syn_inh <= 0:
            problems.append("tau_syn_* must be > 0")
        if not self.v_reset < self.v_thresh:
            problems.append("v_reset must be below v_thresh")
        if self.c_m <= 0:
            problems.append("c_m must be > 0")
        if conductance and not (self.e_rev_inh < self.v_rest < self.e_rev_exc):
            problems.append("conductance mode requires e_rev_inh < v_rest < e_rev_exc")
        return problems


# --- connectors -------------------------------------------------------------


@dataclass(frozen=True)
class FixedProbability:
    p: float


@dataclass(frozen=True)
class FixedInDegree:
    k: int


@dataclass(frozen=True)
class ExplicitList:
    pass


Connector = Union[FixedProbability, FixedInDegree, ExplicitList]


@dataclass
class Population:
    pid: str
    size: int
    params: NeuronParameters
    sign: Sign = Sign.EXCITATORY
    # per-neuron overrides: field name -> array of length `size`
    params_per_neuron: dict[str, np.ndarray] = field(default_factory=dict)

    def param_array(self, name: str) -> np.ndarray:
        if name in self.params_per_neuron:
            return np.asarray(self.params_per_neuron[name], dtype=np.float64)
        return np.full(self.size, getattr(self.params, name), dtype=np.float64)


@dataclass
class Projection:
    pid: str
    source: str
    target: str
    connector: Connector
    weight: float  # nA peak (current) or uS peak (conductance); sign carries E/I in current mode
    delay: float  # ms
    kind: SynapseKind = SynapseKind.CURRENT_EXP


@dataclass
class StimulusSpec:
    sid: str
    target: str
    kind: StimulusKind
    rate: float = 0.0  # Hz; POISSON_PER_NEURON: total rate seen by each target neuron
    weight: float = 0.0  # nA or uS, matching the network's synapse kind
    delay: float = 1.0  # ms
    pool_size: int = 0  # POISSON_POOL only
    samples_per_target: int = 0  # POISSON_POOL only
    delta_v: float = 0.0  # mV, LEAK_SHIFT only
    delta_i: float = 0.0  # nA, LEAK_SHIFT only
    pool_group: str = ""  # POISSON_POOL stimuli with equal group share sources


@dataclass
class EdgeList:
    src: np.ndarray  # uint32
    tgt: np.ndarray  # uint32
    weight: np.ndarray  # float64 in memory; serialized as f32
    delay: np.ndarray  # float64 in memory; serialized as f32

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def empty(cls) -> "EdgeList":
        return cls(
            np.empty(0, np.uint32), np.empty(0, np.uint32),
            np.empty(0, np.float64), np.empty(0, np.float64),
        )

    @classmethod
    def from_arrays(cls, src, tgt, weight, delay) -> "EdgeList":
        src = np.ascontiguousarray(src, np.uint32)
        tgt = np.ascontiguousarray(tgt, np.uint32)
        n = len(src)
        return cls(
            src, tgt,
            np.broadcast_to(np.float64(weight), (n,)).copy() if np.ndim(weight) == 0
            else np.ascontiguousarray(weight, np.float64),
            np.broadcast_to(np.float64(delay), (n,)).copy() if np.ndim(delay) == 0
            else np.ascontiguousarray(delay, np.float64),
        )

    def to_bytes(self) -> bytes:
        rec = np.empty(len(self), dtype=[("src", "<u4"), ("tgt", "<u4"),
                                         ("weight", "<f4"), ("delay", "<f4")])
        rec["src"] = self.src
        rec["tgt"] = self.tgt
        rec["weight"] = self.weight
        rec["delay"] = self.delay
        return rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EdgeList":
        rec = np.frombuffer(buf, dtype=[("src", "<u4"), ("tgt", "<u4"),
                                        ("weight", "<f4"), ("delay", "<f4")])
        return cls(
            rec["src"].astype(np.uint32), rec["tgt"].astype(np.uint32),
            rec["weight"].astype(np.float64), rec["delay"].astype(np.float64),
        )


@dataclass
class NetworkSpec:
    populations: list[Population]
    projections: list[Projection]
    stimuli: list[StimulusSpec] = field(default_factory=list)
    seed: int = 0
    # explicit edges, filled by sampling: projection id -> EdgeList
    edges: dict[str, EdgeList] = field(default_factory=dict)
    # pool-stimulus edges: stimulus id -> EdgeList (src indexes pool sources)
    stim_edges: dict[str, EdgeList] = field(default_factory=dict)

    # -- lookup helpers --

    def population(self, pid: str) -> Population:
        for p in self.populations:
            if p.pid == pid:
                return p
        raise KeyError(pid)

    def has_population(self, pid: str) -> bool:
        return any(p.pid == pid for p in self.populations)

    def n_neurons(self) -> int:
        return sum(p.size for p in self.populations)

    def population_offsets(self) -> dict[str, int]:
        """Global neuron index of each population's first neuron."""
        offsets, n = {}, 0
        for p in self.populations:
            offsets[p.pid] = n
            n += p.size
        return offsets

    def is_sampled(self) -> bool:
        return all(
            isinstance(pr.connector, ExplicitList) or pr.pid in self.edges
            for pr in self.projections
        )

    def total_synapses(self) -> int:
        if not self.is_sampled():
            raise NotSampledError("network has unsampled projections")
        return sum(len(e) for e in self.edges.values())

    def synapse_kinds(self) -> set[SynapseKind]:
        return {pr.kind for pr in self.projections}

    def is_hardware_ready(self) -> bool:
        kinds = self.synapse_kinds()
        return not kinds or kinds == {SynapseKind.CONDUCTANCE_EXP}

    def expected_edge_count(self, proj: Projection) -> float:
        """Expected edge count without sampling (exact for sampled/explicit)."""
        if proj.pid in self.edges:
            return float(len(self.edges[proj.pid]))
        n_src = self.population(proj.source).size
        n_tgt = self.population(proj.target).size
        if isinstance(proj.connector, FixedProbability):
            pairs = n_src * n_tgt - (n_src if proj.source == proj.target else 0)
            return proj.connector.p * pairs
        if isinstance(proj.connector, FixedInDegree):
            return float(proj.connector.k * n_tgt)
        return 0.0

    def expected_total_synapses(self) -> float:
        return sum(self.expected_edge_count(pr) for pr in self.projections)


# --- validation -------------------------------------------------------------


@dataclass
class ValidationReport:
    findings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:  # truthy when clean
        return not self.findings

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Check referential integrity, sign conventions and type invariants.

    Returns a report rather than raising; the report is empty iff the spec
    satisfies all invariants.
    """
    findings: list[str] = []
    pids = [p.pid for p in spec.populations]
    if len(set(pids)) != len(pids):
        findings.append("duplicate population ids")
    conductance = SynapseKind.CONDUCTANCE_EXP in spec.synapse_kinds()
    for pop in spec.populations:
        if pop.size < 1:
            findings.append(f"population {pop.pid}: size < 1")
        for msg in pop.params.check(conductance=conductance):
            findings.append(f"population {pop.pid}: {msg}")
        for name, arr in pop.params_per_neuron.items():
            if len(arr) != pop.size:
                findings.append(
                    f"population {pop.pid}: override '{name}' length "
                    f"{len(arr)} != size {pop.size}"
                )
    for pr in spec.projections:
        for end, pid in (("source", pr.source), ("target", pr.target)):
            if not spec.has_population(pid):
                findings.append(f"projection {pr.pid}: dangling {end} id '{pid}'")
        if isinstance(pr.connector, FixedProbability):
            if not 0.0 <= pr.connector.p <= 1.0:
                findings.append(f"projection {pr.pid}: p outside [0, 1]")
        if isinstance(pr.connector, FixedInDegree):
            if spec.has_population(pr.source) and \
                    pr.connector.k > spec.population(pr.source).size:
                findings.append(f"projection {pr.pid}: in-degree exceeds source size")
        delays = spec.edges[pr.pid].delay if pr.pid in spec.edges else np.array([pr.delay])
        if np.any(delays <= 0):
            findings.append(f"projection {pr.pid}: non-positive delay")
        if spec.has_population(pr.source):
            src_sign = spec.population(pr.source).sign
            weights = spec.edges[pr.pid].weight if pr.pid in spec.edges \
                else np.array([pr.weight])
            if pr.kind == SynapseKind.CURRENT_EXP:
                if src_sign == Sign.INHIBITORY and np.any(weights > 0):
                    findings.append(
                        f"projection {pr.pid}: inhibitory source with depolarizing weight"
                    )
                if src_sign == Sign.EXCITATORY and np.any(weights < 0):
                    findings.append(
                        f"projection {pr.pid}: excitatory source with hyperpolarizing weight"
                    )
            else:
                if np.any(weights < 0):
                    findings.append(f"projection {pr.pid}: negative conductance weight")
    for st in spec.stimuli:
        if not spec.has_population(st.target):
            findings.append(f"stimulus {st.sid}: dangling target id '{st.target}'")
        if st.rate < 0:
            findings.append(f"stimulus {st.sid}: negative rate")
        if st.kind == StimulusKind.POISSON_POOL and \
                st.samples_per_target > st.pool_size:
            findings.append(f"stimulus {st.sid}: samples_per_target > pool_size")
    return ValidationReport(findings)


# --- connectivity sampling --------------------------------------------------

_ROW_CHUNK = 4_000_000  # pair draws per chunk, bounds memory during sampling


def sample_connectivity(proj: Projection, sizes: tuple[int, int], seed: int,
                        recurrent: Optional[bool] = None) -> EdgeList:
    """Instantiate a probabilistic projection into an explicit edge list.

    FixedProbability draws each ordered (src, tgt) pair independently with
    probability p; self-connections are excluded for recurrent projections.
    FixedInDegree draws k distinct sources per target.  Deterministic per
    (projection id, seed).
    """
    n_src, n_tgt = sizes
    if recurrent is None:
        recurrent = proj.source == proj.target
    rng = stream("proj", seed, proj.pid)
    if isinstance(proj.connector, FixedProbability):
        p = proj.connector.p
        srcs, tgts = [], []
        rows_per_chunk = max(1, _ROW_CHUNK // max(n_tgt, 1))
        for row0 in range(0, n_src, rows_per_chunk):
            rows = min(rows_per_chunk, n_src - row0)
            mask = rng.random((rows, n_tgt)) < p
            if recurrent:
                idx = np.arange(rows)
                diag = row0 + idx
                valid = diag < n_tgt
                mask[idx[valid], diag[valid]] = False
            s, t = np.nonzero(mask)
            srcs.append((s + row0).astype(np.uint32))
            tgts.append(t.astype(np.uint32))
        src = np.concatenate(srcs) if srcs else np.empty(0, np.uint32)
        tgt = np.concatenate(tgts) if tgts else np.empty(0, np.uint32)
        return EdgeList.from_arrays(src, tgt, proj.weight, proj.delay)
    if isinstance(proj.connector, FixedInDegree):
        k = proj.connector.k
        available = n_src - 1 if recurrent else n_src
        if k > available:
            raise InfeasibleInDegreeError(
                f"projection {proj.pid}: in-degree {k} > "
                f"{available} available sources"
            )
        src = np.empty(n_tgt * k, np.uint32)
        for t in range(n_tgt):
            draw = rng.choice(available, size=k, replace=False)
            if recurrent and t < n_src:
                draw = np.where(draw >= t, draw + 1, draw)  # skip self
            src[t * k:(t + 1) * k] = draw
        tgt = np.repeat(np.arange(n_tgt, dtype=np.uint32), k)
        return EdgeList.from_arrays(src, tgt, proj.weight, proj.delay)
    raise WafersimError(f"projection {proj.pid}: connector is not samplable")


def ensure_sampled(spec: NetworkSpec) -> NetworkSpec:
    """Sample any unsampled probabilistic projections in place (idempotent)."""
    for pr in spec.projections:
        if isinstance(pr.connector, ExplicitList):
            spec.edges.setdefault(pr.pid, EdgeList.empty())
            continue
        if pr.pid not in spec.edges:
            sizes = (spec.population(pr.source).size, spec.population(pr.target).size)
            spec.edges[pr.pid] = sample_connectivity(pr, sizes, spec.seed)
    return spec


# --- in-degree statistics ---------------------------------------------------


@dataclass
class InDegreeStats:
    per_population: dict[str, dict[str, float]]
    total_synapses: int


def in_degree_stats(spec: NetworkSpec, include_stimuli: bool = True) -> InDegreeStats:
    """Per-population {mean, max, total_synapses} of afferent edge counts.

    Counts explicit internal edges plus sampled pool-stimulus edges (both
    occupy hardware synapse rows); per-neuron Poisson stimuli are injected
    off-wafer and excluded.
    """
    if not spec.is_sampled():
        raise NotSampledError("in_degree_stats requires sampled connectivity")
    counts = {p.pid: np.zeros(p.size, dtype=np.int64) for p in spec.populations}
    for pr in spec.projections:
        e = spec.edges[pr.pid]
        if len(e):
            counts[pr.target] += np.bincount(
                e.tgt, minlength=spec.population(pr.target).size
            )
    if include_stimuli:
        for st in spec.stimuli:
            e = spec.stim_edges.get(st.sid)
            if e is not None and len(e):
                counts[st.target] += np.bincount(
                    e.tgt, minlength=spec.population(st.target).size
                )
    per_pop = {}
    total = 0
    for pid, c in counts.items():
        per_pop[pid] = {
            "mean": float(c.mean()) if len(c) else 0.0,
            "max": int(c.max()) if len(c) else 0,
            "total_synapses": int(c.sum()),
        }
        total += int(c.sum())
    return InDegreeStats(per_pop, total)


def in_degree_array(spec: NetworkSpec, include_stimuli: bool = True) -> np.ndarray:
    """Afferent edge count per neuron in global index order."""
    if not spec.is_sampled():
        raise NotSampledError("in_degree_array requires sampled connectivity")
    offsets = spec.population_offsets()
    counts = np.zeros(spec.n_neurons(), dtype=np.int64)
    for pr in spec.projections:
        e = spec.edges[pr.pid]
        if len(e):
            o = offsets[pr.target]
            counts[o:o + spec.population(pr.target).size] += np.bincount(
                e.tgt, minlength=spec.population(pr.target).size
            )
    if include_stimuli:
        for st in spec.stimuli:
            e = spec.stim_edges.get(st.sid)
            if e is not None and len(e):
                o = offsets[st.target]
                counts[o:o + spec.population(st.target).size] += np.bincount(
                    e.tgt, minlength=spec.population(st.target).size
                )
    return counts


# --- serialization ----------------------------------------------------------

_SIDECAR_MAGIC = b"WSED"


def spec_to_dict(spec: NetworkSpec, inline_edges: bool = True) -> dict:
    doc = {
        "seed": spec.seed,
        "populations": [
            {
                "pid": p.pid,
                "size": p.size,
                "sign": p.sign.value,
                "params": vars(p.params).copy(),
                "params_per_neuron": {
                    k: np.asarray(v).tolist() for k, v in p.params_per_neuron.items()
                },
            }
            for p in spec.populations
        ],
        "projections": [
            {
                "pid": pr.pid,
                "source": pr.source,
                "target": pr.target,
                "connector": _connector_to_dict(pr.connector),
                "weight": pr.weight,
                "delay": pr.delay,
                "kind": pr.kind.value,
            }
            for pr in spec.projections
        ],
        "stimuli": [
            {k: (v.value if isinstance(v, Enum) else v) for k, v in vars(st).items()}
            for st in spec.stimuli
        ],
    }
    if inline_edges:
        doc["edges"] = {
            pid: {
                "src": e.src.tolist(),
                "tgt": e.tgt.tolist(),
                "weight": e.weight.tolist(),
                "delay": e.delay.tolist(),
            }
            for pid, e in spec.edges.items()
        }
        doc["stim_edges"] = {
            sid: {
                "src": e.src.tolist(),
                "tgt": e.tgt.tolist(),
                "weight": e.weight.tolist(),
                "delay": e.delay.tolist(),
            }
            for sid, e in spec.stim_edges.items()
        }
    return doc


def _connector_to_dict(c: Connector) -> dict:
    if isinstance(c, FixedProbability):
        return {"type": "fixed_probability", "p": c.p}
    if isinstance(c, FixedInDegree):
        return {"type": "fixed_in_degree", "k": c.k}
    return {"type": "explicit_list"}


def _connector_from_dict(d: dict) -> Connector:
    if d["type"] == "fixed_probability":
        return FixedProbability(d["p"])
    if d["type"] == "fixed_in_degree":
        return FixedInDegree(d["k"])
    return ExplicitList()


def spec_from_dict(doc: dict) -> NetworkSpec:
    pops = [
        Population(
            pid=p["pid"],
            size=p["size"],
            params=NeuronParameters(**p["params"]),
            sign=Sign(p["sign"]),
            params_per_neuron={
                k: np.asarray(v, np.float64)
                for k, v in p.get("params_per_neuron", {}).items()
            },
        )
        for p in doc["populations"]
    ]
    projs = [
        Projection(
            pid=pr["pid"],
            source=pr["source"],
            target=pr["target"],
            connector=_connector_from_dict(pr["connector"]),
            weight=pr["weight"],
            delay=pr["delay"],
            kind=SynapseKind(pr["kind"]),
        )
        for pr in doc["projections"]
    ]
    stims = []
    for st in doc.get("stimuli", []):
        st = dict(st)
        st["kind"] = StimulusKind(st["kind"])
        stims.append(StimulusSpec(**st))
    spec = NetworkSpec(populations=pops, projections=projs, stimuli=stims,
                       seed=doc.get("seed", 0))
    for pid, e in doc.get("edges", {}).items():
        spec.edges[pid] = EdgeList.from_arrays(
            np.asarray(e["src"], np.uint32), np.asarray(e["tgt"], np.uint32),
            np.asarray(e["weight"], np.float64), np.asarray(e["delay"], np.float64),
        )
    for sid, e in doc.get("stim_edges", {}).items():
        spec.stim_edges[sid] = EdgeList.from_arrays(
            np.asarray(e["src"], np.uint32), np.asarray(e["tgt"], np.uint32),
            np.asarray(e["weight"], np.float64), np.asarray(e["delay"], np.float64),
        )
    return spec


def save_spec(spec: NetworkSpec, path: Union[str, Path],
              sidecar: Optional[bool] = None) -> Path:
    """Write a spec to JSON, optionally externalizing edges to a binary sidecar.

    The sidecar holds little-endian (src u32, tgt u32, weight f32, delay f32)
    records for all edge lists, indexed by byte offsets in the JSON document.
    By default the sidecar is used once the spec holds more than 100k edges.
    """
    path = Path(path)
    n_edges = sum(len(e) for e in spec.edges.values()) + \
        sum(len(e) for e in spec.stim_edges.values())
    if sidecar is None:
        sidecar = n_edges > 100_000
    doc = spec_to_dict(spec, inline_edges=not sidecar)
    if sidecar:
        sidecar_path = path.with_suffix(path.suffix + ".edges")
        index = {"edges": {}, "stim_edges": {}}
        blob = bytearray(_SIDECAR_MAGIC)
        for section, table in (("edges", spec.edges), ("stim_edges", spec.stim_edges)):
            for key in sorted(table):
                data = table[key].to_bytes()
                index[section][key] = {"offset": len(blob), "count": len(table[key])}
                blob += data
        sidecar_path.write_bytes(bytes(blob))
        doc["edge_sidecar"] = {"file": sidecar_path.name, "index": index}
    path.write_text(json.dumps(doc, sort_keys=True))
    return path


def load_spec(path: Union[str, Path]) -> NetworkSpec:
    path = Path(path)
    doc = json.loads(path.read_text())
    spec = spec_from_dict(doc)
    sc = doc.get("edge_sidecar")
    if sc:
        blob = (path.parent / sc["file"]).read_bytes()
        if blob[:4] != _SIDECAR_MAGIC:
            raise WafersimError("corrupt edge sidecar")
        for section, table in (("edges", spec.edges), ("stim_edges", spec.stim_edges)):
            for key, entry in sc["index"][section].items():
                start = entry["offset"]
                table[key] = EdgeList.from_bytes(blob[start:start + 16 * entry["count"]])
    return spec


def mapping_relevant_hash(spec: NetworkSpec) -> str:
    """Hash over the mapping-relevant structure only: population sizes and
    edge endpoints.  Weight or stimulus-rate changes keep this hash stable,
    so a cached mapping stays valid across reprogrammed weights and inputs."""
    h = hashlib.blake2b(digest_size=16)
    for p in spec.populations:
        h.update(f"{p.pid}:{p.size}".encode())
    for section in (spec.edges, spec.stim_edges):
        for key in sorted(section):
            e = section[key]
            h.update(key.encode())
            h.update(np.ascontiguousarray(e.src, np.uint32).tobytes())
            h.update(np.ascontiguousarray(e.tgt, np.uint32).tobytes())
    return h.hexdigest()


def spec_content_hash(spec: NetworkSpec) -> str:
    """Stable content hash over the full spec including explicit edges."""
    h = hashlib.blake2b(digest_size=16)
    doc = spec_to_dict(spec, inline_edges=False)
    h.update(json.dumps(doc, sort_keys=True).encode())
    for section in (spec.edges, spec.stim_edges):
        for key in sorted(section):
            h.update(key.encode())
            h.update(section[key].to_bytes())
    return h.hexdigest()
