"""Clock-driven emulation engine for LIF networks with exponential
current- or conductance-based synapses.

Exponential-Euler update per step with synchronous spike exchange: all
deliveries scheduled for a step are applied to the synaptic state before the
membrane integration of that step.  Spikes enter a ring buffer indexed by
delay step; every delivered edge increments the synaptic-event counter that
feeds throughput metrics.  All randomness comes from counter-based streams,
so results are bit-identical across reruns and independent of scheduling.
"""

from __future__ import annotations

import json
import struct
import time as _time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .network import (
    NetworkSpec,
    NeuronParameters,
    Sign,
    StimulusKind,
    SynapseKind,
    WafersimError,
    ensure_sampled,
)
from .rngtools import stream


class SimulationDiagnosticError(WafersimError):
    pass


@dataclass
class SimulationConfig:
    dt: float = 0.1  # ms
    duration: float = 1000.0  # biological ms
    seed: int = 0
    record_populations: Optional[list[str]] = None  # None = record all spikes
    membrane_probes: list[int] = field(default_factory=list)  # global neuron ids
    max_probes: int = 8

    def check(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if len(self.membrane_probes) > self.max_probes:
            raise ValueError(f"at most {self.max_probes} membrane probes")

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "duration": self.duration,
            "seed": self.seed,
            "record_populations": self.record_populations,
            "membrane_probes": list(self.membrane_probes),
        }

    def content_hash(self) -> str:
        import hashlib
        return hashlib.blake2b(
            json.dumps(self.to_dict(), sort_keys=True).encode(), digest_size=16,
        ).hexdigest()


@dataclass
class SpikeRecord:
    times: np.ndarray  # ms, sorted by (time, id)
    ids: np.ndarray  # uint32 global neuron ids
    n_neurons: int
    duration: float  # biological ms
    dt: float
    deliveries: int
    wall_time: float  # seconds
    population_slices: dict[str, tuple[int, int]]
    config: dict = field(default_factory=dict)
    recorded_neurons: Optional[np.ndarray] = None  # None = all neurons recorded
    probe_times: Optional[np.ndarray] = None
    probes: dict[int, np.ndarray] = field(default_factory=dict)

    def spike_count(self) -> int:
        return len(self.times)

    def spikes_of(self, neuron: int) -> np.ndarray:
        return self.times[self.ids == neuron]

    def neurons_recorded(self) -> np.ndarray:
        if self.recorded_neurons is None:
            return np.arange(self.n_neurons, dtype=np.uint32)
        return self.recorded_neurons


# --- engine state build -------------------------------------------------------


def _concat_param(spec: NetworkSpec, name: str) -> np.ndarray:
    return np.concatenate([p.param_array(name) for p in spec.populations]) \
        if spec.populations else np.empty(0)


class _Engine:
    def __init__(self, spec: NetworkSpec, config: SimulationConfig):
        config.check()
        ensure_sampled(spec)
        self.spec = spec
        self.config = config
        self.dt = config.dt
        self.n = spec.n_neurons()
        kinds = spec.synapse_kinds()
        if len(kinds) > 1:
            raise WafersimError("mixed synapse kinds are not supported")
        self.conductance = kinds == {SynapseKind.CONDUCTANCE_EXP}

        for name in ("tau_m", "tau_ref", "tau_syn_exc", "tau_syn_inh", "v_rest",
                     "v_reset", "v_thresh", "e_rev_exc", "e_rev_inh", "c_m",
                     "i_offset"):
            setattr(self, name, _concat_param(spec, name).copy())
        offsets = spec.population_offsets()
        self.offsets = offsets

        # leak-shift stimuli fold into the resting potential / offset current
        for st in spec.stimuli:
            if st.kind == StimulusKind.LEAK_SHIFT:
                o = offsets[st.target]
                s = spec.population(st.target).size
                self.v_rest[o:o + s] += st.delta_v
                self.i_offset[o:o + s] += st.delta_i

        self.decay_e = np.exp(-self.dt / self.tau_syn_exc)
        self.decay_i = np.exp(-self.dt / self.tau_syn_inh)
        self.g_leak = self.c_m / self.tau_m  # uS
        self.ref_steps = np.round(self.tau_ref / self.dt).astype(np.int64)
        if not self.conductance:
            self.decay_m = np.exp(-self.dt / self.tau_m)
            self.r_m = self.tau_m / self.c_m  # MOhm

        self._build_edges()
        self._build_stimuli()

    def _delay_steps(self, delays: np.ndarray) -> np.ndarray:
        if np.any(delays < self.dt - 1e-12):
            raise WafersimError("all delays must be >= dt")
        return np.maximum(1, np.round(delays / self.dt).astype(np.int64))

    def _build_edges(self) -> None:
        spec, offsets = self.spec, self.offsets
        srcs, tgts, ws, dsteps, chans = [], [], [], [], []
        for pr in spec.projections:
            e = spec.edges[pr.pid]
            if not len(e):
                continue
            srcs.append(offsets[pr.source] + e.src.astype(np.int64))
            tgts.append(offsets[pr.target] + e.tgt.astype(np.int64))
            ws.append(e.weight)
            dsteps.append(self._delay_steps(e.delay))
            if self.conductance:
                chan = np.full(len(e), spec.population(pr.source).sign
                               == Sign.INHIBITORY, dtype=np.int64)
            else:
                chan = (e.weight < 0).astype(np.int64)
            chans.append(chan)
        if srcs:
            src = np.concatenate(srcs)
            order = np.argsort(src, kind="stable")
            self.e_src = src[order]
            self.e_tgt = np.concatenate(tgts)[order]
            self.e_w = np.concatenate(ws)[order]
            self.e_dstep = np.concatenate(dsteps)[order]
            self.e_chan = np.concatenate(chans)[order]
        else:
            self.e_src = np.empty(0, np.int64)
            self.e_tgt = np.empty(0, np.int64)
            self.e_w = np.empty(0, np.float64)
            self.e_dstep = np.empty(0, np.int64)
            self.e_chan = np.empty(0, np.int64)
        self.indptr = np.zeros(self.n + 1, dtype=np.int64)
        if len(self.e_src):
            np.add.at(self.indptr, self.e_src + 1, 1)
            np.cumsum(self.indptr, out=self.indptr)
        self.out_degree = np.diff(self.indptr)
        self.max_dstep = int(self.e_dstep.max()) if len(self.e_dstep) else 1

    def _build_stimuli(self) -> None:
        spec, offsets = self.spec, self.offsets
        # per-neuron Poisson stimuli: (target slice, rate/ms, weight, dstep, chan)
        self.per_neuron_stims = []
        # shared pools: group id -> dict(size, rate/ms, edges CSR)
        pools: dict[str, dict] = {}
        for st in spec.stimuli:
            if st.kind == StimulusKind.POISSON_PER_NEURON:
                o = offsets[st.target]
                s = spec.population(st.target).size
                dstep = self._delay_steps(np.array([st.delay]))[0]
                self.per_neuron_stims.append({
                    "sid": st.sid, "lo": o, "hi": o + s,
                    "rate_ms": st.rate * 1e-3, "weight": st.weight,
                    "dstep": int(dstep), "chan": 0 if st.weight >= 0 else 1,
                })
                self.max_dstep = max(self.max_dstep, int(dstep))
            elif st.kind == StimulusKind.POISSON_POOL:
                gid = st.pool_group or st.sid
                pool = pools.setdefault(gid, {
                    "size": st.pool_size, "rate_ms": st.rate * 1e-3,
                    "src": [], "tgt": [], "w": [], "dstep": [],
                })
                if pool["size"] != st.pool_size or \
                        abs(pool["rate_ms"] - st.rate * 1e-3) > 1e-15:
                    raise WafersimError(
                        f"pool group {gid}: inconsistent pool size or rate")
                e = spec.stim_edges.get(st.sid)
                if e is not None and len(e):
                    pool["src"].append(e.src.astype(np.int64))
                    pool["tgt"].append(offsets[st.target] + e.tgt.astype(np.int64))
                    pool["w"].append(e.weight)
                    pool["dstep"].append(self._delay_steps(e.delay))
        self.pools = []
        for gid in sorted(pools):
            p = pools[gid]
            if p["src"]:
                src = np.concatenate(p["src"])
                order = np.argsort(src, kind="stable")
                tgt = np.concatenate(p["tgt"])[order]
                w = np.concatenate(p["w"])[order]
                dstep = np.concatenate(p["dstep"])[order]
                self.max_dstep = max(self.max_dstep, int(dstep.max()))
            else:
                src = np.empty(0, np.int64)
                tgt = np.empty(0, np.int64)
                w = np.empty(0, np.float64)
                dstep = np.empty(0, np.int64)
            indptr = np.zeros(p["size"] + 1, dtype=np.int64)
            if len(src):
                np.add.at(indptr, src[order] + 1, 1)
                np.cumsum(indptr, out=indptr)
            self.pools.append({
                "gid": gid, "size": p["size"], "rate_ms": p["rate_ms"],
                "tgt": tgt, "w": w, "dstep": dstep, "indptr": indptr,
                "out_degree": np.diff(indptr),
            })

    # -- main loop --

    def run(self) -> SpikeRecord:
        cfg = self.config
        n_steps = int(round(cfg.duration / self.dt))
        D = self.max_dstep + 1
        buffer = np.zeros((D, self.n, 2), dtype=np.float64)
        v = self.v_rest.copy()
        syn_e = np.zeros(self.n)
        syn_i = np.zeros(self.n)
        ref = np.zeros(self.n, dtype=np.int64)
        deliveries = 0

        record_mask = None
        if cfg.record_populations is not None:
            record_mask = np.zeros(self.n, dtype=bool)
            for pid in cfg.record_populations:
                o = self.offsets[pid]
                record_mask[o:o + self.spec.population(pid).size] = True

        stim_rngs = {
            s["sid"]: stream("engine", cfg.seed, "stim", s["sid"])
            for s in self.per_neuron_stims
        }
        pool_rngs = {
            p["gid"]: stream("engine", cfg.seed, "pool", p["gid"])
            for p in self.pools
        }

        spike_times: list[np.ndarray] = []
        spike_ids: list[np.ndarray] = []
        probes = {pid: np.empty(n_steps) for pid in cfg.membrane_probes}
        probe_ids = np.asarray(cfg.membrane_probes, dtype=np.int64)

        wall_start = _time.perf_counter()
        for t in range(n_steps):
            slot = t % D
            incoming = buffer[slot]
            syn_e *= self.decay_e
            syn_i *= self.decay_i
            syn_e += incoming[:, 0]
            syn_i += incoming[:, 1]
            incoming[:] = 0.0

            # external drive enters the delay buffer like any other spike
            for s in self.per_neuron_stims:
                if s["rate_ms"] <= 0:
                    continue
                counts = stim_rngs[s["sid"]].poisson(
                    s["rate_ms"] * self.dt, size=s["hi"] - s["lo"])
                nz = np.nonzero(counts)[0]
                if len(nz):
                    buffer[(t + s["dstep"]) % D, s["lo"] + nz, s["chan"]] += \
                        counts[nz] * s["weight"]
                    deliveries += int(counts.sum())
            for p in self.pools:
                if p["rate_ms"] <= 0 or not len(p["tgt"]):
                    continue
                counts = pool_rngs[p["gid"]].poisson(
                    p["rate_ms"] * self.dt, size=p["size"])
                spikers = np.nonzero(counts)[0]
                if len(spikers):
                    idx = _csr_gather(p["indptr"], spikers)
                    mult = np.repeat(counts[spikers],
                                     p["out_degree"][spikers]).astype(np.float64)
                    np.add.at(
                        buffer,
                        ((t + p["dstep"][idx]) % D, p["tgt"][idx], 0),
                        p["w"][idx] * mult,
                    )
                    deliveries += int(mult.sum())

            refractory = ref > 0
            if self.conductance:
                g_tot = self.g_leak + syn_e + syn_i
                v_inf = (self.g_leak * self.v_rest + syn_e * self.e_rev_exc
                         + syn_i * self.e_rev_inh + self.i_offset) / g_tot
                v = v_inf + (v - v_inf) * np.exp(-self.dt * g_tot / self.c_m)
            else:
                i_total = syn_e + syn_i + self.i_offset
                v_inf = self.v_rest + self.r_m * i_total
                v = v_inf + (v - v_inf) * self.decay_m
            if refractory.any():
                v[refractory] = self.v_reset[refractory]
                ref[refractory] -= 1

            spiked = (v >= self.v_thresh) & ~refractory
            if spiked.any():
                ids = np.nonzero(spiked)[0]
                v[ids] = self.v_reset[ids]
                ref[ids] = self.ref_steps[ids]
                rec_ids = ids if record_mask is None else ids[record_mask[ids]]
                if len(rec_ids):
                    spike_ids.append(rec_ids.astype(np.uint32))
                    spike_times.append(
                        np.full(len(rec_ids), (t + 1) * self.dt))
                if len(self.e_src):
                    idx = _csr_gather(self.indptr, ids)
                    if len(idx):
                        np.add.at(
                            buffer,
                            ((t + self.e_dstep[idx]) % D, self.e_tgt[idx],
                             self.e_chan[idx]),
                            self.e_w[idx],
                        )
                    deliveries += int(self.out_degree[ids].sum())

            if len(probe_ids):
                for k, pid in enumerate(cfg.membrane_probes):
                    probes[pid][t] = v[probe_ids[k]]
            if t % 1000 == 999 and not np.isfinite(v).all():
                bad = int(np.nonzero(~np.isfinite(v))[0][0])
                raise SimulationDiagnosticError(
                    f"non-finite membrane state in neuron {bad} "
                    f"at t={(t + 1) * self.dt:.3f} ms"
                )
        wall = _time.perf_counter() - wall_start

        if spike_times:
            times = np.concatenate(spike_times)
            ids = np.concatenate(spike_ids)
            order = np.lexsort((ids, times))
            times, ids = times[order], ids[order]
        else:
            times = np.empty(0, np.float64)
            ids = np.empty(0, np.uint32)
        recorded = None
        if record_mask is not None:
            recorded = np.nonzero(record_mask)[0].astype(np.uint32)
        slices = {}
        for pop in self.spec.populations:
            o = self.offsets[pop.pid]
            slices[pop.pid] = (o, o + pop.size)
        return SpikeRecord(
            times=times, ids=ids, n_neurons=self.n,
            duration=cfg.duration, dt=self.dt,
            deliveries=deliveries, wall_time=wall,
            population_slices=slices, config=cfg.to_dict(),
            recorded_neurons=recorded,
            probe_times=(np.arange(1, n_steps + 1) * self.dt
                         if cfg.membrane_probes else None),
            probes=probes,
        )


def _csr_gather(indptr: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Indices of all CSR entries belonging to ``rows`` (concatenated slices)."""
    counts = indptr[rows + 1] - indptr[rows]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64)
    starts = indptr[rows]
    nonzero = counts > 0
    starts, counts = starts[nonzero], counts[nonzero]
    steps = np.ones(total, dtype=np.int64)
    steps[0] = starts[0]
    pos = np.cumsum(counts)[:-1]
    steps[pos] = starts[1:] - (starts[:-1] + counts[:-1]) + 1
    return np.cumsum(steps)


def simulate(spec: NetworkSpec, config: SimulationConfig) -> SpikeRecord:
    """Run the clock-driven emulation; deterministic per (spec, config)."""
    return _Engine(spec, config).run()


# --- standalone Poisson source ------------------------------------------------


def poisson_source(rate: float, duration: float, seed: int,
                   dt: Optional[float] = None) -> np.ndarray:
    """Poisson spike train (times in ms) over ``duration`` ms.

    Standalone (dt=None): exact exponential-gap generation.  With ``dt``:
    per-step Bernoulli thinning with p = rate*dt; warns above p=0.1 and
    refuses above p=1.
    """
    if rate < 0:
        raise WafersimError("rate must be >= 0")
    if rate == 0 or duration <= 0:
        return np.empty(0, np.float64)
    rng = stream("poisson", seed)
    rate_ms = rate * 1e-3
    if dt is None:
        # draw gaps in blocks until the duration is covered
        out = []
        t = 0.0
        block = max(16, int(rate_ms * duration * 1.2) + 32)
        while t < duration:
            gaps = rng.exponential(1.0 / rate_ms, size=block)
            times = t + np.cumsum(gaps)
            out.append(times[times < duration])
            t = times[-1]
        return np.concatenate(out)
    p = rate_ms * dt
    if p > 1.0:
        raise WafersimError(f"rate*dt = {p:.3g} > 1; thinning impossible")
    if p > 0.1:
        warnings.warn(f"rate*dt = {p:.3g} > 0.1; thinning accuracy degrades")
    n_steps = int(round(duration / dt))
    hits = rng.random(n_steps) < p
    return (np.nonzero(hits)[0] + 1) * dt


# --- readout and speedup ------------------------------------------------------


def readout_subset(record: SpikeRecord, n: int, seed: int,
                   mapping=None) -> SpikeRecord:
    """Restrict a record to ``n`` neurons, sampled uniformly or stratified
    round-robin across ASICs when a mapping result is supplied (emulating
    bandwidth-limited off-chip readout)."""
    pool = record.neurons_recorded()
    if n > len(pool):
        raise WafersimError("subset larger than recorded neuron count")
    rng = stream("readout", seed)
    if n == len(pool):
        chosen = pool.copy()
    elif mapping is None:
        chosen = rng.choice(pool, size=n, replace=False)
    else:
        asics = mapping.placement.neuron_asic[pool]
        per_asic: dict[int, list] = {}
        for neuron, asic in zip(pool.tolist(), asics.tolist()):
            per_asic.setdefault(asic, []).append(neuron)
        queues = []
        for asic in sorted(per_asic):
            members = np.asarray(per_asic[asic])
            queues.append(rng.permutation(members))
        chosen_list: list[int] = []
        depth = 0
        while len(chosen_list) < n:
            progressed = False
            for q in queues:
                if depth < len(q):
                    chosen_list.append(int(q[depth]))
                    progressed = True
                    if len(chosen_list) == n:
                        break
            if not progressed:
                break
            depth += 1
        chosen = np.asarray(chosen_list, dtype=np.uint32)
    chosen = np.sort(np.asarray(chosen, dtype=np.uint32))
    if n == 0 and record.spike_count():
        warnings.warn("empty readout subset requested on a nonempty record")
    keep = np.isin(record.ids, chosen)
    return SpikeRecord(
        times=record.times[keep], ids=record.ids[keep],
        n_neurons=record.n_neurons, duration=record.duration, dt=record.dt,
        deliveries=record.deliveries, wall_time=record.wall_time,
        population_slices=record.population_slices, config=record.config,
        recorded_neurons=chosen,
        probe_times=record.probe_times, probes=record.probes,
    )


def biological_speedup(bio_duration_ms: float, wall_duration_s: float) -> float:
    """Ratio of emulated biological time to wall-clock time."""
    if wall_duration_s <= 0:
        raise WafersimError("wall duration must be > 0")
    return (bio_duration_ms * 1e-3) / wall_duration_s


# --- spike record serialization ----------------------------------------------

_SPIKE_MAGIC = b"WSSR"


def _record_header(record: SpikeRecord) -> dict:
    return {
        "config_hash": SimulationConfig(**{
            k: v for k, v in record.config.items()
        }).content_hash() if record.config else "",
        "duration_ms": record.duration,
        "dt_ms": record.dt,
        "n_neurons": record.n_neurons,
        "deliveries": record.deliveries,
        "wall_time_s": record.wall_time,
        "population_slices": {k: list(v) for k, v in record.population_slices.items()},
        "recorded_neurons": (None if record.recorded_neurons is None
                             else record.recorded_neurons.tolist()),
    }


def save_spikes_csv(record: SpikeRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [f"# {k}={json.dumps(v)}" for k, v in sorted(_record_header(record).items())]
    lines.append("time_ms,neuron_id")
    for t, i in zip(record.times, record.ids):
        lines.append(f"{t:.6f},{i}")
    path.write_text("\n".join(lines) + "\n")
    return path


def save_spikes_binary(record: SpikeRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = json.dumps(_record_header(record), sort_keys=True).encode()
    rec = np.empty(len(record.times), dtype=[("time", "<f8"), ("id", "<u4")])
    rec["time"] = record.times
    rec["id"] = record.ids
    with open(path, "wb") as f:
        f.write(_SPIKE_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(rec.tobytes())
    return path


def load_spikes_binary(path: Union[str, Path]) -> SpikeRecord:
    raw = Path(path).read_bytes()
    if raw[:4] != _SPIKE_MAGIC:
        raise WafersimError("not a spike record file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode())
    rec = np.frombuffer(raw[8 + hlen:], dtype=[("time", "<f8"), ("id", "<u4")])
    return SpikeRecord(
        times=rec["time"].astype(np.float64), ids=rec["id"].astype(np.uint32),
        n_neurons=header["n_neurons"], duration=header["duration_ms"],
        dt=header["dt_ms"], deliveries=header["deliveries"],
        wall_time=header["wall_time_s"],
        population_slices={k: tuple(v) for k, v in header["population_slices"].items()},
        recorded_neurons=(None if header["recorded_neurons"] is None
                          else np.asarray(header["recorded_neurons"], np.uint32)),
    )


def save_membrane_csv(record: SpikeRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    ids = sorted(record.probes)
    lines = ["time_ms," + ",".join(f"v_{i}" for i in ids)]
    for k, t in enumerate(record.probe_times):
        lines.append(f"{t:.6f}," + ",".join(f"{record.probes[i][k]:.6f}" for i in ids))
    path.write_text("\n".join(lines) + "\n")
    return path
