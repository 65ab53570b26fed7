"""Statistics over spike records: mean rates, rate distributions, ISI
irregularity, synchrony, firing-regime classification, and the (g, eta)
parameter sweep driver.

Warmup handling lives here (window start), not in the engine: the standard
protocol analyzes the 9 s after a 1 s onset for 10 s runs.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adaptation import AdaptationConfig, adapt_pipeline
from .engine import SimulationConfig, SpikeRecord, simulate
from .models import BrunelParams, build_brunel
from .network import WafersimError


@dataclass
class RateSummary:
    window: tuple[float, float]  # (start ms, end ms)
    per_population_mean: dict[str, float]  # Hz
    per_neuron_rates: np.ndarray  # Hz, over recorded neurons
    recorded_neurons: np.ndarray

    def overall_mean(self) -> float:
        return float(self.per_neuron_rates.mean()) if len(self.per_neuron_rates) else 0.0


def _window_check(record: SpikeRecord, window: tuple[float, float]) -> None:
    lo, hi = window
    if hi <= lo:
        raise WafersimError("empty analysis window")
    if lo < 0 or hi > record.duration + 1e-9:
        raise WafersimError("analysis window outside record duration")


def mean_rates(record: SpikeRecord, window: tuple[float, float]) -> RateSummary:
    """Per-neuron rate = spikes in window / window length; population mean
    over the recorded members of each population."""
    _window_check(record, window)
    lo, hi = window
    seconds = (hi - lo) * 1e-3
    neurons = record.neurons_recorded()
    in_win = (record.times >= lo) & (record.times < hi)
    counts = np.bincount(record.ids[in_win], minlength=record.n_neurons)
    rates_all = counts / seconds
    per_pop = {}
    for pid, (a, b) in record.population_slices.items():
        members = neurons[(neurons >= a) & (neurons < b)]
        per_pop[pid] = float(rates_all[members].mean()) if len(members) else 0.0
    return RateSummary(
        window=window,
        per_population_mean=per_pop,
        per_neuron_rates=rates_all[neurons],
        recorded_neurons=neurons,
    )


@dataclass
class RateHistogram:
    bin_edges: np.ndarray  # Hz
    counts: np.ndarray
    quartiles: tuple[float, float, float]  # for violin-style plotting

    def total(self) -> int:
        return int(self.counts.sum())


def rate_distribution(record: SpikeRecord, population: str,
                      window: tuple[float, float], bins: int = 20,
                      rate_range: Optional[tuple[float, float]] = None
                      ) -> RateHistogram:
    """Histogram of per-neuron rates within one population."""
    if bins <= 0:
        raise WafersimError("bins must be > 0")
    summary = mean_rates(record, window)
    a, b = record.population_slices[population]
    neurons = summary.recorded_neurons
    member = (neurons >= a) & (neurons < b)
    rates = summary.per_neuron_rates[member]
    if not len(rates):
        raise WafersimError(f"population {population} has no recorded neurons")
    counts, edges = np.histogram(rates, bins=bins, range=rate_range)
    q1, q2, q3 = np.percentile(rates, [25, 50, 75])
    return RateHistogram(edges, counts, (float(q1), float(q2), float(q3)))


@dataclass
class CvIsiResult:
    per_neuron: dict[int, float]
    excluded: int  # neurons with < 3 spikes in the window

    def mean(self) -> float:
        vals = list(self.per_neuron.values())
        return float(np.mean(vals)) if vals else float("nan")


def cv_isi(record: SpikeRecord, window: Optional[tuple[float, float]] = None
           ) -> CvIsiResult:
    """Coefficient of variation of inter-spike intervals per neuron; neurons
    with fewer than 3 spikes are excluded and counted."""
    if window is None:
        window = (0.0, record.duration)
    lo, hi = window
    in_win = (record.times >= lo) & (record.times < hi)
    times, ids = record.times[in_win], record.ids[in_win]
    per_neuron = {}
    excluded = 0
    for neuron in np.unique(ids):
        t = np.sort(times[ids == neuron])
        if len(t) < 3:
            excluded += 1
            continue
        isi = np.diff(t)
        m = isi.mean()
        per_neuron[int(neuron)] = float(isi.std() / m) if m > 0 else 0.0
    # recorded neurons that never spiked also count as excluded
    excluded += len(record.neurons_recorded()) - len(np.unique(ids)) \
        if len(ids) else len(record.neurons_recorded())
    return CvIsiResult(per_neuron, excluded)


def synchrony(record: SpikeRecord, window: tuple[float, float],
              bin_ms: float = 2.0) -> float:
    """Pooled-variance synchrony index on binned spike counts.

    Var(population count) / (N * mean single-neuron count variance): about 1
    for independent neurons, about N when all neurons spike in the same bins.
    """
    _window_check(record, window)
    lo, hi = window
    n_bins = int((hi - lo) / bin_ms)
    if n_bins < 10:
        raise WafersimError("window must span at least 10 bins")
    neurons = record.neurons_recorded()
    if len(neurons) < 2:
        raise WafersimError("synchrony needs at least 2 recorded neurons")
    in_win = (record.times >= lo) & (record.times < lo + n_bins * bin_ms)
    ids = record.ids[in_win]
    bins = ((record.times[in_win] - lo) / bin_ms).astype(np.int64)
    id_index = np.full(record.n_neurons, -1, dtype=np.int64)
    id_index[neurons] = np.arange(len(neurons))
    counts = np.zeros((len(neurons), n_bins), dtype=np.float64)
    np.add.at(counts, (id_index[ids], bins), 1.0)
    pop = counts.sum(axis=0)
    single_var = counts.var(axis=1).mean()
    if single_var == 0:
        return 0.0
    return float(pop.var() / (len(neurons) * single_var))


class Regime:
    SR = "SR"
    AI = "AI"
    SI_FAST = "SI-fast"
    SI_SLOW = "SI-slow"
    SATURATED = "Saturated"


@dataclass
class RegimeThresholds:
    cv_irregular: float = 0.5  # CV at/above which firing counts as irregular
    synchrony_high: float = 2.0  # synchrony index above which bins lock together
    saturation_rate: float = 250.0  # Hz, routing-bound ceiling
    si_fast_rate: float = 60.0  # Hz, splits SI into fast/slow oscillation proxies


def classify_regime(rate_summary: RateSummary, cv: CvIsiResult,
                    synchrony_index: float,
                    thresholds: Optional[RegimeThresholds] = None) -> str:
    """Map (rate, irregularity, synchrony) to a firing-regime label.

    Pure function of its inputs; thresholds are documented defaults, not
    fitted values.
    """
    th = thresholds or RegimeThresholds()
    rate = rate_summary.overall_mean()
    if rate > th.saturation_rate:
        return Regime.SATURATED
    cv_mean = cv.mean()
    irregular = bool(cv_mean >= th.cv_irregular) if cv_mean == cv_mean else False
    synchronous = synchrony_index >= th.synchrony_high
    if not irregular:
        return Regime.SR
    if not synchronous:
        return Regime.AI
    return Regime.SI_FAST if rate >= th.si_fast_rate else Regime.SI_SLOW


# --- phase sweep --------------------------------------------------------------


@dataclass
class SweepCell:
    g: float
    eta: float
    mean_rate_exc: float
    mean_rate_inh: float
    cv: float
    synchrony: float
    regime: str
    error: Optional[str] = None


@dataclass
class SweepGrid:
    g_values: list[float]
    eta_values: list[float]
    cells: dict[tuple[float, float], SweepCell]
    partial: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["g", "eta", "mean_rate_exc", "mean_rate_inh",
                         "cv", "synchrony", "regime"])
        for g in self.g_values:
            for eta in self.eta_values:
                c = self.cells.get((g, eta))
                if c is None or c.error:
                    writer.writerow([g, eta, "", "", "", "", "failed"])
                else:
                    writer.writerow([
                        c.g, c.eta, f"{c.mean_rate_exc:.4f}",
                        f"{c.mean_rate_inh:.4f}", f"{c.cv:.4f}",
                        f"{c.synchrony:.4f}", c.regime,
                    ])
        return buf.getvalue()


@dataclass
class SweepBaseConfig:
    brunel: BrunelParams
    adaptation: AdaptationConfig
    simulation: SimulationConfig
    window_start: float = 500.0  # ms discarded as warmup
    synchrony_bin_ms: float = 2.0
    thresholds: RegimeThresholds = field(default_factory=RegimeThresholds)
    seed: int = 0


def run_sweep_cell(base: SweepBaseConfig, g: float, eta: float) -> SweepCell:
    """Build, adapt, simulate and analyze one (g, eta) cell.

    Cells with identical seeds are reproducible independently of sweep
    scheduling; a single cell equals a direct run with the same settings.
    """
    params = replace(base.brunel, g=g, eta=eta)
    spec = build_brunel(params, seed=base.seed)
    adapted, _ = adapt_pipeline(spec, base.adaptation)
    record = simulate(adapted, base.simulation)
    window = (base.window_start, record.duration)
    rates = mean_rates(record, window)
    cv = cv_isi(record, window)
    sync = synchrony(record, window, base.synchrony_bin_ms)
    regime = classify_regime(rates, cv, sync, base.thresholds)
    return SweepCell(
        g=g, eta=eta,
        mean_rate_exc=rates.per_population_mean.get("exc", 0.0),
        mean_rate_inh=rates.per_population_mean.get("inh", 0.0),
        cv=cv.mean(), synchrony=sync, regime=regime,
    )


def _sweep_worker(args) -> tuple[tuple[float, float], SweepCell]:
    base, g, eta = args
    try:
        return (g, eta), run_sweep_cell(base, g, eta)
    except Exception as exc:  # per-cell failures mark the grid partial
        return (g, eta), SweepCell(g, eta, 0, 0, float("nan"), float("nan"),
                                   "failed", error=str(exc))


def phase_sweep(g_values: list[float], eta_values: list[float],
                base: SweepBaseConfig, parallel: int = 1) -> SweepGrid:
    """Sweep the (g, eta) grid; cells are independent jobs."""
    if not g_values or not eta_values:
        raise WafersimError("g and eta lists must be nonempty")
    jobs = [(base, g, eta) for g in g_values for eta in eta_values]
    results: dict[tuple[float, float], SweepCell] = {}
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for key, cell in pool.map(_sweep_worker, jobs):
                results[key] = cell
    else:
        for job in jobs:
            key, cell = _sweep_worker(job)
            results[key] = cell
    partial = any(c.error for c in results.values())
    return SweepGrid(list(g_values), list(eta_values), results, partial=partial)
