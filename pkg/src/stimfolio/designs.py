"""Stimulation designs, their sampling ranges and cluster layouts."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from stimfolio.sampling import latin_hypercube

UNIFORM = "uniform"
NONUNIFORM = "nonuniform"
SPACING_MODES = (UNIFORM, NONUNIFORM)

DESIGN_COLUMNS = ("spacing_ratio", "viscosity", "stage_length", "injection_rate", "perf_factor", "spacing_mode")
NUMERIC_FIELDS = DESIGN_COLUMNS[:5]


@dataclass(frozen=True, order=True)
class Design:
    """One stimulation design.

    ``spacing_ratio`` is the outer gap over the stage length, ``viscosity`` in
    Pa.s, ``stage_length`` in m, ``injection_rate`` in m^3/s and
    ``perf_factor`` the entry-loss coefficient in Pa.s^2/m^6.
    """

    spacing_ratio: float
    viscosity: float
    stage_length: float
    injection_rate: float
    perf_factor: float
    spacing_mode: str = NONUNIFORM

    def __post_init__(self):
        for name in NUMERIC_FIELDS:
            value = getattr(self, name)
            # a zero perforation factor is allowed: it switches the entry loss off
            floor_ok = value >= 0 if name == "perf_factor" else value > 0
            if not (np.isfinite(value) and floor_ok):
                raise ValueError(f"{name} must be finite and positive, got {value!r}")
        if self.spacing_ratio >= 0.5:
            raise ValueError(f"spacing_ratio must be < 0.5, got {self.spacing_ratio!r}")
        if self.spacing_mode not in SPACING_MODES:
            raise ValueError(f"unknown spacing_mode {self.spacing_mode!r}")

    def vector(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in NUMERIC_FIELDS)

    def nominal_entry_loss(self, n_clusters: int) -> float:
        """Perforation loss at an equal flow split, kappa * (Q/N)^2."""
        return self.perf_factor * (self.injection_rate / n_clusters) ** 2


@dataclass(frozen=True)
class DesignRanges:
    spacing_ratio: tuple[float, float] = (0.2, 0.45)
    viscosity: tuple[float, float] = (0.003, 0.6)
    stage_length: tuple[float, float] = (20.0, 50.0)
    injection_rate: tuple[float, float] = (0.1, 0.25)
    perf_factor: tuple[float, float] = (1.0e5, 1.0e10)

    #: Sampled log10-uniformly.
    log_fields = ("perf_factor",)

    def __post_init__(self):
        for name in NUMERIC_FIELDS:
            lo, hi = getattr(self, name)
            if not (0 < lo < hi and np.isfinite(hi)):
                raise ValueError(f"invalid range for {name}: ({lo!r}, {hi!r})")

    def contains(self, design: Design) -> bool:
        return all(
            getattr(self, name)[0] <= getattr(design, name) <= getattr(self, name)[1]
            for name in NUMERIC_FIELDS
        )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "DesignRanges":
        return cls(**{k: tuple(float(x) for x in v) for k, v in mapping.items()})


@dataclass(frozen=True)
class ClusterLayout:
    positions: tuple[float, ...]

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.positions)

    def distances(self) -> np.ndarray:
        p = np.asarray(self.positions)
        return np.abs(p[:, None] - p[None, :])


def uniform_spacing_ratio(n_clusters: int) -> float:
    return 1.0 / (n_clusters - 1)


def sample_designs(
    ranges: DesignRanges,
    n: int,
    seed: int,
    spacing_mode: str = NONUNIFORM,
    n_clusters: int = 5,
) -> list[Design]:
    """Latin hypercube sample of ``n`` designs.

    In uniform mode the spacing ratio is pinned to ``1/(N-1)`` and only the
    other four variables are sampled.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if spacing_mode not in SPACING_MODES:
        raise ValueError(f"unknown spacing_mode {spacing_mode!r}")
    sampled = list(NUMERIC_FIELDS) if spacing_mode == NONUNIFORM else list(NUMERIC_FIELDS[1:])
    unit = latin_hypercube(n, len(sampled), np.random.default_rng(seed))

    columns = {}
    for j, name in enumerate(sampled):
        lo, hi = getattr(ranges, name)
        if name in ranges.log_fields:
            columns[name] = 10.0 ** (np.log10(lo) + unit[:, j] * (np.log10(hi) - np.log10(lo)))
        else:
            columns[name] = lo + unit[:, j] * (hi - lo)
    if spacing_mode == UNIFORM:
        columns["spacing_ratio"] = np.full(n, uniform_spacing_ratio(n_clusters))

    return [
        Design(**{name: float(columns[name][i]) for name in NUMERIC_FIELDS}, spacing_mode=spacing_mode)
        for i in range(n)
    ]


def build_cluster_layout(design: Design, n_clusters: int) -> ClusterLayout:
    """Symmetric cluster positions over ``[0, Z]``.

    Uniform designs split the stage into ``N-1`` equal gaps. Non-uniform designs
    put an outer gap ``h1 = spacing_ratio * Z`` at both ends and divide the
    remainder into ``N-3`` equal interior gaps.
    """
    if n_clusters < 2:
        raise ValueError("n_clusters must be >= 2")
    z = design.stage_length
    if design.spacing_mode == UNIFORM:
        gaps = np.full(n_clusters - 1, z / (n_clusters - 1))
    else:
        if n_clusters < 4:
            raise ValueError("non-uniform layouts need at least 4 clusters")
        h1 = design.spacing_ratio * z
        inner = (z - 2.0 * h1) / (n_clusters - 3)
        if inner <= 0.0:
            raise ValueError(
                f"infeasible layout: spacing_ratio={design.spacing_ratio!r} leaves interior gap {inner!r}"
            )
        gaps = np.concatenate([[h1], np.full(n_clusters - 3, inner), [h1]])
    positions = np.concatenate([[0.0], np.cumsum(gaps)])
    # pin the far end and mirror the upper half so the layout is exactly symmetric
    positions[-1] = z
    half = n_clusters // 2
    positions[n_clusters - half:] = z - positions[:half][::-1]
    if n_clusters % 2:
        positions[half] = z / 2.0
    return ClusterLayout(tuple(float(p) for p in positions))


def write_designs_csv(path: Path, designs: list[Design]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DESIGN_COLUMNS)
        for d in designs:
            writer.writerow([repr(v) for v in d.vector()] + [d.spacing_mode])


def design_from_row(row: dict) -> Design:
    return Design(
        **{name: float(row[name]) for name in NUMERIC_FIELDS},
        spacing_mode=row["spacing_mode"],
    )


def read_designs_csv(path: Path) -> list[Design]:
    with open(path, newline="") as fh:
        return [design_from_row(row) for row in csv.DictReader(fh)]


def design_dict(design: Design) -> dict:
    return asdict(design)

