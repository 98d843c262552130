"""Formation parameters and uncertain realizations.

Each uncertain parameter of a cluster is scaled by a multiplier drawn from a
Latin hypercube column. Stress, modulus and toughness multipliers are uniform
on ``[1 - u/2, 1 + u/2]``; the leak-off multiplier is log10-uniform on
``[10**(-u/2), 10**(u/2)]``. Poisson's ratio is not sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stimfolio.sampling import latin_hypercube

#: Order of the sampled dimensions inside one cluster slot.
UNCERTAIN_FIELDS = ("in_situ_stress", "youngs_modulus", "toughness", "leakoff_coeff")
LINEAR_FIELDS = ("in_situ_stress", "youngs_modulus", "toughness")


@dataclass(frozen=True)
class FormationParams:
    in_situ_stress: float = 3.0e7
    youngs_modulus: float = 3.0e10
    poisson_ratio: float = 0.25
    toughness: float = 1.0e6
    leakoff_coeff: float = 1.0e-5

    def __post_init__(self):
        for name in ("in_situ_stress", "youngs_modulus", "toughness"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")
        if not (np.isfinite(self.leakoff_coeff) and self.leakoff_coeff >= 0):
            raise ValueError(f"leakoff_coeff must be finite and >= 0, got {self.leakoff_coeff!r}")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in (0, 0.5), got {self.poisson_ratio!r}")

    @property
    def plane_strain_modulus(self) -> float:
        return self.youngs_modulus / (1.0 - self.poisson_ratio**2)

    def scaled(self, multipliers) -> "FormationParams":
        """Copy with each field in ``UNCERTAIN_FIELDS`` multiplied in turn."""
        values = {
            name: getattr(self, name) * float(m) for name, m in zip(UNCERTAIN_FIELDS, multipliers)
        }
        return FormationParams(poisson_ratio=self.poisson_ratio, **values)


@dataclass(frozen=True)
class UncertaintySpec:
    level: float
    base: FormationParams = field(default_factory=FormationParams)

    def __post_init__(self):
        if not 0.0 <= self.level < 1.0:
            raise ValueError(f"uncertainty level must satisfy 0 <= u < 1, got {self.level!r}")

    def linear_range(self) -> tuple[float, float]:
        return 1.0 - self.level / 2.0, 1.0 + self.level / 2.0

    def log_range(self) -> tuple[float, float]:
        """Range of log10 of the leak-off multiplier."""
        return -self.level / 2.0, self.level / 2.0


@dataclass(frozen=True)
class FormationRealization:
    per_cluster: tuple[FormationParams, ...]

    @property
    def n_clusters(self) -> int:
        return len(self.per_cluster)

    @classmethod
    def homogeneous(cls, base: FormationParams, n_clusters: int) -> "FormationRealization":
        return cls(tuple([base] * n_clusters))

    def as_arrays(self) -> dict[str, np.ndarray]:
        """Per-cluster arrays keyed by field name, plus ``plane_strain_modulus``."""
        out = {
            name: np.array([getattr(p, name) for p in self.per_cluster], dtype=float)
            for name in ("in_situ_stress", "youngs_modulus", "poisson_ratio", "toughness", "leakoff_coeff")
        }
        out["plane_strain_modulus"] = np.array([p.plane_strain_modulus for p in self.per_cluster])
        return out


def multipliers_from_unit(spec: UncertaintySpec, unit: np.ndarray) -> np.ndarray:
    """Map unit-cube samples (last axis = UNCERTAIN_FIELDS) onto multipliers."""
    unit = np.asarray(unit, dtype=float)
    out = np.empty_like(unit)
    lo, hi = spec.linear_range()
    out[..., :3] = lo + unit[..., :3] * (hi - lo)
    llo, lhi = spec.log_range()
    out[..., 3] = 10.0 ** (llo + unit[..., 3] * (lhi - llo))
    return out


def sample_multipliers(
    spec: UncertaintySpec,
    n_realizations: int,
    n_clusters: int,
    seed: int,
    per_well: bool = False,
) -> np.ndarray:
    """Multiplier array of shape ``(n_realizations, n_clusters, 4)``.

    Every ``(cluster, field)`` column is its own Latin hypercube over the
    realizations. With ``per_well`` all clusters share one column per field.
    """
    if n_realizations < 1 or n_clusters < 1:
        raise ValueError("n_realizations and n_clusters must be >= 1")
    rng = np.random.default_rng(seed)
    n_fields = len(UNCERTAIN_FIELDS)
    if per_well:
        unit = latin_hypercube(n_realizations, n_fields, rng)
        unit = np.repeat(unit[:, None, :], n_clusters, axis=1)
    else:
        unit = latin_hypercube(n_realizations, n_clusters * n_fields, rng)
        unit = unit.reshape(n_realizations, n_clusters, n_fields)
    return multipliers_from_unit(spec, unit)


def sample_realizations(
    spec: UncertaintySpec,
    n_realizations: int,
    n_clusters: int,
    seed: int,
    per_well: bool = False,
) -> list[FormationRealization]:
    """Sample ``n_realizations`` formation realizations at ``spec.level``."""
    mult = sample_multipliers(spec, n_realizations, n_clusters, seed, per_well=per_well)
    return [
        FormationRealization(tuple(spec.base.scaled(m) for m in row))
        for row in mult
    ]
