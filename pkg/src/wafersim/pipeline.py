"""End-to-end pipeline: build -> adapt -> map (cached) -> simulate -> analyze.

Stage outputs are written to an output directory; the mapping stage is
content-addressed by the structure hash of the adapted network and the
topology hash, so reruns and weight/input-only changes reuse the cached
mapping.  Network translation is required only once per structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .adaptation import AdaptationConfig, adapt_pipeline
from .analysis import (
    RegimeThresholds,
    classify_regime,
    cv_isi,
    mean_rates,
    rate_distribution,
    synchrony,
)
from .bench import throughput_metrics
from .engine import (
    SimulationConfig,
    save_spikes_binary,
    save_spikes_csv,
    simulate,
)
from .hardware import CapacityError, WaferTopology, capacity_report
from .mapping import apply_loss, load_mapping, map_network, mapping_report, save_mapping
from .models import (
    BrunelParams,
    MicrocircuitParams,
    build_brunel,
    build_microcircuit,
)
from .network import (
    NeuronParameters,
    WafersimError,
    ensure_sampled,
    mapping_relevant_hash,
    save_spec,
    validate_network,
)


class ValidationFailure(WafersimError):
    pass


class StageFailure(WafersimError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    model: dict
    adaptation: dict = field(default_factory=dict)
    topology: Optional[dict] = None  # None disables mapping
    simulation: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PipelineConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "adaptation": self.adaptation,
            "topology": self.topology,
            "simulation": self.simulation,
            "analysis": self.analysis,
            "seed": self.seed,
        }


def build_model(model: dict, seed: int) -> NetworkSpec:
    name = model.get("name")
    params = dict(model.get("params", {}))
    if name == "brunel":
        if "neuron" in params:
            params["neuron"] = NeuronParameters(**params["neuron"])
        return build_brunel(BrunelParams(**params), seed=seed)
    if name == "microcircuit":
        return build_microcircuit(MicrocircuitParams(**params), seed=seed)
    raise WafersimError(f"unknown model '{name}'")


@dataclass
class PipelineResult:
    out_dir: Path
    artifacts: dict
    mapping_cached: bool
    record: object = None
    throughput: object = None


def scaled_brunel_config(g: float = 6.0, eta: float = 4.0, seed: int = 0,
                         duration: float = 2000.0,
                         topology: Optional[dict] = None) -> PipelineConfig:
    """Balanced-random-network benchmark scaled to 2083 neurons with the
    200-sample external pool; expected internal synapse count is near 690k."""
    return PipelineConfig(
        model={"name": "brunel", "params": {"g": g, "eta": eta}},
        adaptation={
            "neuron_scale": 2083 / 12400,
            "indegree_scale": 0.2673,
            "poisson_pool": {"pool_size": 2083, "samples_per_target": 200},
        },
        topology=topology,
        simulation={"duration": duration},
        seed=seed,
    )


def scaled_microcircuit_config(seed: int = 0, duration: float = 10000.0,
                               topology: Optional[dict] = None) -> PipelineConfig:
    """Cortical microcircuit scaled to 7713 neurons; the in-degree scale is
    chosen so the post-mapping synapse count lands near 2.374 million."""
    if topology is None:
        topology = {}
    return PipelineConfig(
        model={"name": "microcircuit", "params": {}},
        adaptation={
            "neuron_scale": 7712 / 77169,
            "indegree_scale": 0.09,
            "leak_shift_input": True,
        },
        topology=topology,
        simulation={"duration": duration},
        seed=seed,
    )


def run_pipeline(config: Union[PipelineConfig, str, Path, dict],
                 out_dir: Union[str, Path], threads: int = 1) -> PipelineResult:
    """Execute all stages, writing intermediate files; idempotent reruns
    reuse the cached mapping when structure and topology hashes match."""
    if isinstance(config, (str, Path)):
        config = PipelineConfig.from_file(config)
    elif isinstance(config, dict):
        config = PipelineConfig(**config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}

    # build
    try:
        spec = build_model(config.model, config.seed)
    except Exception as exc:
        raise StageFailure("build", exc)
    report = validate_network(spec)
    if not report.ok:
        raise ValidationFailure("; ".join(report.findings))
    artifacts["spec"] = save_spec(spec, out_dir / "spec.json")

    # adapt
    try:
        adapt_cfg = AdaptationConfig.from_dict(
            {"seed": config.seed, **config.adaptation})
        adapted, adapt_report = adapt_pipeline(spec, adapt_cfg)
        ensure_sampled(adapted)
    except Exception as exc:
        raise StageFailure("adapt", exc)
    artifacts["adapted"] = save_spec(adapted, out_dir / "adapted.json")
    (out_dir / "adaptation_report.json").write_text(
        json.dumps(adapt_report.to_dict(), indent=2))
    (out_dir / "adaptation_report.txt").write_text(adapt_report.render_text())
    artifacts["adaptation_report"] = out_dir / "adaptation_report.json"

    # map (cached by structure + topology hash)
    mapping_cached = False
    run_spec = adapted
    if config.topology is not None:
        try:
            topology = WaferTopology.from_dict(config.topology)
            cap = capacity_report(topology, adapted)
            (out_dir / "capacity_report.json").write_text(
                json.dumps(cap.to_dict(), indent=2))
            if not cap.feasible:
                raise CapacityError(
                    "network does not fit the wafer: " + "; ".join(cap.notes))
            cache_key = f"{mapping_relevant_hash(adapted)}_{topology.content_hash()}"
            cache_path = out_dir / f"mapping_{cache_key}.json"
            if cache_path.exists():
                result = load_mapping(cache_path)
                mapping_cached = True
            else:
                result = map_network(adapted, topology, seed=config.seed)
                save_mapping(result, cache_path)
            artifacts["mapping"] = cache_path
            (out_dir / "mapping_report.json").write_text(
                json.dumps(mapping_report(result, topology), indent=2))
            artifacts["mapping_report"] = out_dir / "mapping_report.json"
            run_spec = apply_loss(adapted, result)
            artifacts["mapped_spec"] = save_spec(run_spec, out_dir / "mapped.json")
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure("map", exc)

    # simulate
    try:
        sim_cfg = SimulationConfig(**{"seed": config.seed, **config.simulation})
        record = simulate(run_spec, sim_cfg)
    except Exception as exc:
        raise StageFailure("simulate", exc)
    artifacts["spikes_csv"] = save_spikes_csv(record, out_dir / "spikes.csv")
    artifacts["spikes_bin"] = save_spikes_binary(record, out_dir / "spikes.bin")

    # analyze
    try:
        a_cfg = dict(config.analysis)
        window = (
            float(a_cfg.get("window_start", min(1000.0, record.duration / 2))),
            float(a_cfg.get("window_end", record.duration)),
        )
        rates = mean_rates(record, window)
        lines = ["population,mean_rate_hz"]
        for pid, rate in rates.per_population_mean.items():
            lines.append(f"{pid},{rate:.6f}")
        (out_dir / "rates.csv").write_text("\n".join(lines) + "\n")
        artifacts["rates"] = out_dir / "rates.csv"
        hist_lines = ["population,bin_lo_hz,bin_hi_hz,count"]
        bins = int(a_cfg.get("bins", 20))
        for pid in record.population_slices:
            try:
                hist = rate_distribution(record, pid, window, bins=bins)
            except WafersimError:
                continue
            for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
                hist_lines.append(f"{pid},{lo:.4f},{hi:.4f},{c}")
        (out_dir / "rate_histograms.csv").write_text("\n".join(hist_lines) + "\n")
        artifacts["histograms"] = out_dir / "rate_histograms.csv"
        summary = {
            "window": list(window),
            "per_population_mean_rate_hz": rates.per_population_mean,
        }
        if len(rates.recorded_neurons) >= 2 and (window[1] - window[0]) >= 20.0:
            cv = cv_isi(record, window)
            sync = synchrony(record, window,
                             float(a_cfg.get("synchrony_bin_ms", 2.0)))
            summary["cv_isi_mean"] = cv.mean()
            summary["synchrony"] = sync
            summary["regime"] = classify_regime(rates, cv, sync, RegimeThresholds())
        (out_dir / "analysis.json").write_text(json.dumps(summary, indent=2))
        artifacts["analysis"] = out_dir / "analysis.json"
    except Exception as exc:
        raise StageFailure("analyze", exc)

    throughput = throughput_metrics(record)
    (out_dir / "throughput.json").write_text(
        json.dumps(throughput.to_dict(), indent=2))
    (out_dir / "throughput.txt").write_text(throughput.render_text() + "\n")
    artifacts["throughput"] = out_dir / "throughput.json"
    return PipelineResult(out_dir, artifacts, mapping_cached,
                          record=record, throughput=throughput)
