"""Power-capture analysis, scenario generation and Monte-Carlo sweeps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from domp.channel import (
    MultipathComponent,
    PhysicalChannel,
    UlaConfig,
    build_channel,
    dirichlet_atom,
    peak_to_angle,
)
from domp.errors import DomainError, DompError, ScenarioError
from domp.estimators import ESTIMATORS, EstimatorConfig, default_tolerance
from domp.measurement import build_sensing_setup, derive_seed, make_rng, measure

GAIN_MODELS = ("unit", "complex_gaussian")
PLACEMENTS = ("offgrid", "ongrid")


@dataclass(frozen=True)
class ScenarioSpec:
    """Random multipath scenario.

    ``placement="offgrid"`` puts every path near the midpoint between two
    adjacent grid cells, displaced by ``+-offgrid_scale * zeta / 2`` cells
    with ``zeta ~ U[0, 1]``. ``placement="ongrid"`` puts paths exactly on
    grid cells.
    """

    config: UlaConfig = UlaConfig(32, 32)
    num_paths: int = 3
    offgrid_scale: float = 0.1
    min_separation_deg: float = 20.0
    gain_model: str = "complex_gaussian"
    trials: int = 50
    root_seed: int = 0
    placement: str = "offgrid"

    def __post_init__(self):
        if int(self.num_paths) < 1:
            raise DomainError("num_paths must be at least 1")
        if int(self.trials) < 1:
            raise DomainError("trials must be at least 1")
        if self.offgrid_scale < 0 or self.offgrid_scale > 1:
            raise DomainError("offgrid_scale must lie in [0, 1]")
        if self.min_separation_deg < 0:
            raise DomainError("min_separation_deg must be non-negative")
        if self.gain_model not in GAIN_MODELS:
            raise DomainError(f"gain_model must be one of {GAIN_MODELS}")
        if self.placement not in PLACEMENTS:
            raise DomainError(f"placement must be one of {PLACEMENTS}")


@dataclass
class TrialRecord:
    axis_value: float
    estimator: str
    trial: int
    nmse: float = math.nan
    iterations: int = 0
    final_residual: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class SweepResult:
    axis_name: str
    axis_values: list
    estimators: list
    mean_nmse: dict = field(default_factory=dict)
    stderr_nmse: dict = field(default_factory=dict)
    n_trials: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def mean(self, estimator, axis_value):
        return self.mean_nmse[(axis_value, estimator)]


def _worst_case_beamspace(M, N, offsets):
    # unit path whose peak sits `offsets` cells away from cell (1, 1)
    return dirichlet_atom(1.0 + offsets[0] % M, 1.0 + offsets[1] % N, 1.0, UlaConfig(M, N))


def power_capture_oracle(M: int, N: int, offsets, K: int) -> float:
    """Fraction of a unit path's beamspace power held by its ``K`` strongest cells.

    ``offsets`` are fractional peak offsets in cells; ``(0.5, 0.5)`` is the
    worst case. Computed by brute force: build the beamspace matrix, sort the
    squared magnitudes, sum the top ``K``.
    """
    if int(K) != K or not 1 <= K <= M * N:
        raise DomainError(f"K must be an integer in [1, {M * N}], got {K}")
    power = np.sort(np.abs(_worst_case_beamspace(M, N, offsets)).ravel() ** 2)[::-1]
    return float(power[: int(K)].sum() / power.sum())


def _quadrant_terms(M, N):
    i = np.arange(1, M // 2 + 1)
    j = np.arange(1, N // 2 + 1)
    a = 1.0 / np.sin(np.pi * (2 * i - 1) / (2 * M)) ** 2
    b = 1.0 / np.sin(np.pi * (2 * j - 1) / (2 * N)) ** 2
    return np.outer(a, b) / (M * N) ** 2


def power_capture_closed_form(M: int, N: int, K: int) -> float:
    """Worst-case power captured by the ``K`` strongest cells, from the kernel's closed form.

    At half-cell offsets every cell has magnitude
    ``1 / (M N |sin(pi (2i-1) / 2M) sin(pi (2j-1) / 2N)|)`` and the pattern
    is four-fold symmetric, so::

        P_K = 4 * sum of the K/4 largest quadrant terms
        P_T = 4 * sum over i <= M/2, j <= N/2 of the quadrant terms

    ``K`` must be a multiple of 4 and ``M``, ``N`` even.
    """
    if M % 2 or N % 2:
        raise DomainError("the closed form needs even M and N")
    if int(K) != K or K < 4 or K % 4 or K > M * N:
        raise DomainError(f"K must be a positive multiple of 4 not above {M * N}, got {K}")
    terms = np.sort(_quadrant_terms(M, N).ravel())[::-1]
    p_k = 4.0 * terms[: int(K) // 4].sum()
    p_t = 4.0 * terms.sum()
    return float(p_k / p_t)


def nmse(H_hat, H) -> float:
    """``||H_hat - H||_F^2 / ||H||_F^2``."""
    H = H.matrix if isinstance(H, PhysicalChannel) else np.asarray(H)
    ref = float(np.linalg.norm(H)) ** 2
    if ref == 0:
        raise DomainError("NMSE undefined for a zero channel")
    return float(np.linalg.norm(np.asarray(H_hat) - H) ** 2 / ref)


def _virtual_to_angle(coord0, size, spacing):
    """Physical angle for a 0-based continuous virtual coordinate."""
    return peak_to_angle(coord0 + 1.0, size, spacing)


def _draw_coordinate(rng, size, spec):
    cell = int(rng.integers(size))
    if spec.placement == "ongrid":
        return float(cell)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    zeta = rng.random()
    return (cell + 0.5 + sign * spec.offgrid_scale * zeta / 2.0) % size


def generate_offgrid_scenario(spec: ScenarioSpec, trial_index: int, rng=None) -> PhysicalChannel:
    """Random channel for one trial.

    Each path picks a random pair of adjacent grid cells in both virtual
    domains and lands near their midpoint (see :class:`ScenarioSpec`), then
    is mapped back to physical angles. Paths are redrawn until all pairwise
    AoA and AoD separations reach ``min_separation_deg``. Gains are
    rescaled so that ``sum |alpha|^2 = L``.
    """
    cfg = spec.config
    if rng is None:
        rng = make_rng(derive_seed(spec.root_seed, trial_index), stream=0)
    min_sep = math.radians(spec.min_separation_deg)
    paths = []
    redraws = 0
    while len(paths) < spec.num_paths:
        aod = _virtual_to_angle(_draw_coordinate(rng, cfg.M, spec), cfg.M, cfg.element_spacing)
        aoa = _virtual_to_angle(_draw_coordinate(rng, cfg.N, spec), cfg.N, cfg.element_spacing)
        if all(abs(aod - p[0]) >= min_sep and abs(aoa - p[1]) >= min_sep for p in paths):
            paths.append((aod, aoa))
            continue
        redraws += 1
        if redraws >= 10_000:
            raise ScenarioError(
                f"could not place {spec.num_paths} paths {spec.min_separation_deg} deg apart "
                f"(trial {trial_index})"
            )

    L = spec.num_paths
    if spec.gain_model == "unit":
        gains = np.ones(L, dtype=complex)
    else:
        gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2)
        gains *= np.sqrt(L / np.sum(np.abs(gains) ** 2))
    components = [MultipathComponent(complex(g), aod=a, aoa=b) for g, (a, b) in zip(gains, paths)]
    return build_channel(cfg, components)


def split_measurements(total: int):
    """``M_t = N_t = round(sqrt(total))``."""
    side = max(1, int(round(math.sqrt(total))))
    return side, side


def run_trial(spec: ScenarioSpec, trial_index: int, snr_db: float, measurements: int,
              estimators, estimator_config: EstimatorConfig | None = None,
              axis_value=None, max_paths: int | None = None):
    """One Monte-Carlo trial; every estimator sees the same observation.

    Seeds depend only on ``(root_seed, trial_index)``, so the same trial
    index reuses its channel and beamformers across axis points. Without an
    ``estimator_config`` the tolerance follows the noise floor of each
    observation and the iteration cap is ``max_paths`` (default ``L``).
    """
    axis_value = snr_db if axis_value is None else axis_value
    seed = derive_seed(spec.root_seed, trial_index)
    try:
        channel = generate_offgrid_scenario(spec, trial_index, make_rng(seed, stream=0))
        M_t, N_t = split_measurements(measurements)
        setup = build_sensing_setup(spec.config, M_t, N_t, seed)
        obs = measure(channel, setup, snr_db, seed)
    except DompError as exc:
        return [TrialRecord(axis_value, name, trial_index, error=f"{type(exc).__name__}: {exc}")
                for name in estimators]

    if estimator_config is None:
        estimator_config = EstimatorConfig(
            residual_tolerance=default_tolerance(obs.y, snr_db),
            max_paths=max_paths or spec.num_paths,
        )
    records = []
    for name in estimators:
        try:
            result = ESTIMATORS[name](obs.y, setup.sensing_matrix, spec.config, estimator_config)
            records.append(TrialRecord(
                axis_value, name, trial_index,
                nmse=nmse(result.H_hat, channel),
                iterations=result.iterations,
                final_residual=result.final_residual,
            ))
        except (DompError, np.linalg.LinAlgError) as exc:
            records.append(TrialRecord(axis_value, name, trial_index,
                                       error=f"{type(exc).__name__}: {exc}"))
    return records


def _aggregate(result: SweepResult):
    for axis in result.axis_values:
        for name in result.estimators:
            vals = np.array([r.nmse for r in result.records
                             if r.axis_value == axis and r.estimator == name and r.ok])
            n = len(vals)
            result.n_trials[(axis, name)] = n
            result.mean_nmse[(axis, name)] = float(vals.mean()) if n else math.nan
            result.stderr_nmse[(axis, name)] = (
                float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
            )
    return result


def _run_sweep(spec, axis_name, axis_values, jobs, estimators, threads):
    estimators = list(estimators)
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown or not estimators:
        raise DomainError(f"unknown or empty estimator set: {unknown or estimators}")
    threads = threads or os.cpu_count() or 1
    keys = [(a, t) for a in range(len(axis_values)) for t in range(spec.trials)]
    if threads == 1:
        outputs = [jobs(a, t) for a, t in keys]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda k: jobs(*k), keys))
    result = SweepResult(axis_name, list(axis_values), estimators)
    for recs in outputs:  # already in (axis, trial) key order
        result.records.extend(recs)
    return _aggregate(result)


def sweep_snr(spec: ScenarioSpec, snr_list_db, measurements_total: int = 100,
              estimator_set=tuple(ESTIMATORS), threads: int | None = 1,
              estimator_config: EstimatorConfig | None = None,
              max_paths: int | None = None) -> SweepResult:
    """Mean NMSE per estimator over an SNR grid at a fixed measurement count."""
    snrs = [float(s) for s in snr_list_db]

    def job(a, t):
        return run_trial(spec, t, snrs[a], measurements_total, estimator_set, estimator_config,
                         snrs[a], max_paths)

    return _run_sweep(spec, "snr_db", snrs, job, estimator_set, threads)


def sweep_measurements(spec: ScenarioSpec, measurement_list, snr_db: float = 20.0,
                       estimator_set=tuple(ESTIMATORS), threads: int | None = 1,
                       estimator_config: EstimatorConfig | None = None,
                       max_paths: int | None = None) -> SweepResult:
    """Mean NMSE per estimator over measurement counts at a fixed SNR."""
    counts = [int(m) for m in measurement_list]

    def job(a, t):
        return run_trial(spec, t, snr_db, counts[a], estimator_set, estimator_config,
                         counts[a], max_paths)

    return _run_sweep(spec, "measurements", counts, job, estimator_set, threads)


def with_config(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    return replace(spec, **changes)
