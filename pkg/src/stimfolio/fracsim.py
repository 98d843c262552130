"""Reduced-order simulator of simultaneous multi-cluster fracture growth.

Each cluster is a uniformly pressurised penny-shaped crack held at the
toughness limit. Clusters share one wellbore pressure; flow into a cluster pays
a quadratic perforation loss and a lumped radial viscous drop. Opened cracks
raise the stress on their neighbours and lose fluid by Carter leak-off.

Energy bookkeeping: input energy is ``p_w * Q_i`` integrated at the wellbore,
fracture energy is ``K_Ic^2 / E' * pi * R_i^2``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stimfolio import _kernel
from stimfolio.designs import Design, build_cluster_layout
from stimfolio.formation import FormationRealization

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when a simulation or flow partition cannot be completed."""


@dataclass(frozen=True)
class ClusterState:
    radius: float
    volume: float
    net_pressure: float
    exposure_time: float = 0.0

    def __post_init__(self):
        if self.radius < 0 or self.volume < 0:
            raise ValueError("radius and volume must be >= 0")


@dataclass(frozen=True)
class SimConfig:
    n_clusters: int = 5
    t_end: float = 600.0
    dt: float = 0.5
    wellbore_radius: float = 0.1
    #: floor on mean aperture in the viscous-drop term, m
    min_aperture: float = 1.0e-6
    #: if set, pumping stops after this injected volume (m^3) instead of at t_end
    injected_volume: float | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.t_end <= self.dt:
            raise ValueError("t_end must exceed dt")
        if self.wellbore_radius <= 0:
            raise ValueError("wellbore_radius must be > 0")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")

    def end_time(self, injection_rate: float) -> float:
        if self.injected_volume is not None:
            return self.injected_volume / injection_rate
        return self.t_end

    def n_steps(self, injection_rate: float) -> int:
        return max(1, int(round(self.end_time(injection_rate) / self.dt)))


@dataclass
class SimResult:
    radius: np.ndarray
    area: np.ndarray
    fracture_energy: np.ndarray
    input_energy: np.ndarray
    volume: np.ndarray
    net_pressure: np.ndarray
    wellbore_pressure: float
    leaked_volume: float
    injected_volume: float
    end_time: float
    dt: float
    trace: dict | None = field(default=None, repr=False)

    @property
    def cluster_efficiency(self) -> np.ndarray:
        e_in = self.input_energy
        out = np.zeros_like(e_in)
        np.divide(self.fracture_energy, e_in, out=out, where=e_in > 0)
        return out

    @property
    def energy_efficiency(self) -> float:
        return float(self.fracture_energy.sum() / self.input_energy.sum())

    @property
    def energy_variance(self) -> float:
        """Population standard deviation of the per-cluster efficiencies."""
        eff = self.cluster_efficiency
        if eff.size < 2:
            return 0.0
        return float(np.std(eff))

    def mass_balance_error(self) -> float:
        """Relative mismatch between stored + leaked and injected volume."""
        return abs(self.volume.sum() + self.leaked_volume - self.injected_volume) / self.injected_volume


def partition_flow(p_entries, perf_factor: float, total_rate: float, resistances=None):
    """Wellbore pressure and per-cluster rates for a limited-entry stage.

    Each cluster takes ``Q_i = sqrt(max(p_w - p_entry_i, 0) / kappa)`` and the
    rates sum to ``total_rate``. With ``resistances`` an extra linear drop
    ``c_i * Q_i`` is added to each cluster's loss. With ``kappa == 0`` and no
    resistance the flow goes in equal parts to the lowest-entry clusters.

    Returns
    -------
    (float, ndarray)
        Wellbore pressure and rates.
    """
    p = np.ascontiguousarray(p_entries, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p_entries must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(p)) or not math.isfinite(perf_factor) or not math.isfinite(total_rate):
        raise ValueError("partition_flow inputs must be finite")
    if perf_factor < 0 or total_rate <= 0:
        raise ValueError("need perf_factor >= 0 and total_rate > 0")
    c = np.zeros_like(p) if resistances is None else np.ascontiguousarray(resistances, dtype=float)
    if c.shape != p.shape or np.any(c < 0) or np.any(np.isnan(c)):
        raise ValueError("resistances must be non-negative and match p_entries")
    rates = np.empty_like(p)
    p_w, status = _kernel.partition_flow_kernel(p, float(perf_factor), c, float(total_rate), rates)
    if status != _kernel.STATUS_OK:
        raise SimulationError(
            f"flow partition did not converge: p_entries={p.tolist()}, kappa={perf_factor!r}, "
            f"Q={total_rate!r}, residual={abs(rates.sum() - total_rate)!r}"
        )
    return p_w, rates


def equilibrium_radius(volume: float, toughness: float, plane_strain_modulus: float) -> float:
    """Radius of a uniformly pressurised penny crack at the toughness limit."""
    if volume < 0 or toughness < 0 or plane_strain_modulus < 0:
        raise ValueError("inputs must be >= 0")
    return _kernel.equilibrium_radius_kernel(float(volume), float(toughness), float(plane_strain_modulus))


def net_pressure_at_toughness(radius: float, toughness: float) -> float:
    """Uniform pressure that brings a penny crack of ``radius`` to ``K_I = K_Ic``."""
    if radius <= 0:
        return 0.0
    return toughness * math.sqrt(math.pi) / (2.0 * math.sqrt(radius))


def interaction_stress(neighbor_states, distances) -> float:
    """Compressive stress induced by neighbouring cracks on one cluster.

    Uses the on-axis decay ``p_net * (1 + (h/R)^2)^(-3/2)`` of each neighbour.
    """
    total = 0.0
    for state, h in zip(neighbor_states, distances):
        if h <= 0:
            raise ValueError("distances must be > 0")
        if state.radius <= 0:
            continue
        total += state.net_pressure * (1.0 + (h / state.radius) ** 2) ** -1.5
    return total


def _run_kernel(design: Design, props: dict, positions: np.ndarray, config: SimConfig, dt: float, trace: bool):
    n_steps = max(1, int(round(config.end_time(design.injection_rate) / dt)))
    out = _kernel.simulate_kernel(
        props["in_situ_stress"], props["plane_strain_modulus"], props["toughness"], props["leakoff_coeff"],
        positions, float(design.viscosity), float(design.injection_rate), float(design.perf_factor),
        float(config.wellbore_radius), float(config.min_aperture), float(dt), n_steps, bool(trace),
    )
    return n_steps, out


def simulate(design: Design, realization: FormationRealization, config: SimConfig, trace: bool = False) -> SimResult:
    """Pump one stage of ``design`` into ``realization`` and collect energies."""
    n = config.n_clusters
    if realization.n_clusters != n:
        raise ValueError(f"realization has {realization.n_clusters} clusters, config expects {n}")
    if n == 1:
        positions = np.zeros(1)
    else:
        positions = np.asarray(build_cluster_layout(design, n).positions)
    props = realization.as_arrays()

    dt = config.dt
    n_steps, out = _run_kernel(design, props, positions, config, dt, trace)
    status = out[8]
    if status != _kernel.STATUS_OK:
        log.warning("simulation unstable at dt=%g for %s; retrying with dt=%g", dt, design, dt / 10)
        dt = dt / 10.0
        n_steps, out = _run_kernel(design, props, positions, config, dt, trace)
        status = out[8]
        if status != _kernel.STATUS_OK:
            raise SimulationError(f"simulation failed (status {status}) for {design} at dt={dt}")

    radius, volume, p_net, _, e_in, e_frac, leaked, p_w, _, tr_t, tr_pw, tr_r, tr_q = out
    trace_data = None
    if trace:
        trace_data = {"time": tr_t, "wellbore_pressure": tr_pw, "radius": tr_r, "rate": tr_q}
    return SimResult(
        radius=radius,
        area=np.pi * radius**2,
        fracture_energy=e_frac,
        input_energy=e_in,
        volume=volume,
        net_pressure=p_net,
        wellbore_pressure=float(p_w),
        leaked_volume=float(leaked),
        injected_volume=design.injection_rate * n_steps * dt,
        end_time=n_steps * dt,
        dt=dt,
        trace=trace_data,
    )


def write_trace_csv(path: Path, result: SimResult) -> None:
    """Write the time series of a traced simulation."""
    if result.trace is None:
        raise ValueError("simulation was run without trace=True")
    tr = result.trace
    n = tr["radius"].shape[1]
    header = ["time", "wellbore_pressure"] + [f"radius_{i}" for i in range(n)] + [f"rate_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(tr["time"].shape[0]):
            writer.writerow(
                [repr(float(tr["time"][k])), repr(float(tr["wellbore_pressure"][k]))]
                + [repr(float(v)) for v in tr["radius"][k]]
                + [repr(float(v)) for v in tr["rate"][k]]
            )
