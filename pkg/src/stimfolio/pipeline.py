"""End-to-end workflow: sample, score, pick, evaluate, mix, combine, report.

Every stage reads its inputs from and writes its outputs to one run
directory, and records file digests in ``manifest.json`` so later stages can
refuse stale inputs. Per-level artifacts live in ``level_<u>/`` subdirectories.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from stimfolio import __version__
from stimfolio.config import RunConfig
from stimfolio.designs import (
    DESIGN_COLUMNS,
    NONUNIFORM,
    UNIFORM,
    Design,
    design_from_row,
    read_designs_csv,
    sample_designs,
    write_designs_csv,
)
from stimfolio.formation import FormationRealization, UncertaintySpec, sample_realizations
from stimfolio.fracsim import SimConfig, simulate, write_trace_csv
from stimfolio.frontier import (
    ScoredDesign,
    pareto_frontier,
    pick_exl_designs,
    pick_frontier_designs,
    read_scored_csv,
    write_scored_csv,
)
from stimfolio.portfolio import (
    DesignPerformance,
    Portfolio,
    combine,
    lambda_grid,
    normalize_to_base,
    performance_from_samples,
    portfolio_frontier,
    random_portfolios,
    recompute,
    tangent_combination,
)
from stimfolio.sampling import derive_seed

log = logging.getLogger(__name__)

STAGES = ("sample", "score", "frontier", "evaluate", "mix", "combine", "report")

STAGE_DEPS = {
    "sample": (),
    "score": ("sample",),
    "frontier": ("score",),
    "evaluate": ("frontier",),
    "mix": ("evaluate",),
    "combine": ("evaluate", "mix"),
    "report": ("score", "frontier", "evaluate", "mix", "combine"),
}

# config sections each stage's outputs depend on
STAGE_SECTIONS = {
    "sample": ("seed", "design", "sim"),
    "score": ("seed", "design", "sim", "formation"),
    "frontier": ("seed", "design", "sim", "formation", "picks"),
    "evaluate": ("seed", "design", "sim", "formation", "picks", "evaluation"),
    "mix": ("seed", "design", "sim", "formation", "picks", "evaluation", "portfolio"),
    "combine": ("seed", "design", "sim", "formation", "picks", "evaluation", "portfolio"),
    "report": ("seed", "design", "sim", "formation", "picks", "evaluation", "portfolio", "report"),
}

PICK = "pick"
REPEAT = "repeat"
EXL_CANDIDATE = "exl_candidate"
BASE = "base"
HIGH_POOL = "high"
EXL_POOL = "exl"

MANIFEST = "manifest.json"
PORTFOLIO_RECOMPUTE_TOL = 1e-12


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    pass


class StaleArtifactError(PipelineError):
    pass


def level_dir(out: Path, level: float) -> Path:
    return out / f"level_{level:g}"


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- manifest -------------------------------------------------------------


class Manifest:
    """Provenance record of one run directory."""

    def __init__(self, out: Path, data: dict | None = None):
        self.out = Path(out)
        self.data = data or {"software_version": __version__, "stages": {}, "seeds": {}}

    @classmethod
    def load(cls, out: Path) -> "Manifest":
        path = Path(out) / MANIFEST
        if path.exists():
            return cls(out, json.loads(path.read_text()))
        return cls(out)

    def save(self) -> None:
        _write_json(self.out / MANIFEST, self.data)

    @property
    def stages(self) -> dict:
        return self.data["stages"]

    def record(self, stage, cfg, inputs, outputs, seeds, wall_clock) -> None:
        rel = lambda p: str(Path(p).relative_to(self.out))
        self.data["software_version"] = __version__
        self.data["config"] = cfg.to_dict()
        self.data["seeds"].update(seeds)
        self.stages[stage] = {
            "config_digest": cfg.section_digest(*STAGE_SECTIONS[stage]),
            "inputs": {rel(p): file_digest(p) for p in sorted(inputs)},
            "outputs": {rel(p): file_digest(p) for p in sorted(outputs)},
            "wall_clock_s": round(wall_clock, 3),
        }
        self.save()

    def check_upstream(self, stage: str, cfg: RunConfig, force: bool = False) -> None:
        """Raise unless every upstream stage's artifacts exist and are current."""
        for dep in STAGE_DEPS[stage]:
            entry = self.stages.get(dep)
            if entry is None:
                raise MissingArtifactError(
                    f"stage '{stage}' needs outputs of '{dep}'; run `stimfolio {dep}` first"
                )
            for rel, digest in entry["outputs"].items():
                path = self.out / rel
                if not path.exists():
                    raise MissingArtifactError(f"missing {path}; run `stimfolio {dep}` first")
                if file_digest(path) != digest and not force:
                    raise StaleArtifactError(
                        f"{path} changed since '{dep}' wrote it; re-run `stimfolio {dep}` or pass --force"
                    )
            if entry["config_digest"] != cfg.section_digest(*STAGE_SECTIONS[dep]) and not force:
                raise StaleArtifactError(
                    f"config changed since '{dep}' ran; re-run `stimfolio {dep}` or pass --force"
                )


# -- simulation work queue --------------------------------------------------


class SimCache:
    """In-memory cache of (eta, ev) keyed by design, formation and sim config."""

    def __init__(self):
        self._store: dict[str, tuple[float, float]] = {}

    @staticmethod
    def key(design: Design, realization: FormationRealization, sim: SimConfig) -> str:
        h = hashlib.sha256()
        h.update(repr((design.vector(), design.spacing_mode, sim)).encode())
        for name, arr in sorted(realization.as_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value) -> None:
        self._store[key] = value

    def __len__(self):
        return len(self._store)


def run_simulations(
    tasks: Sequence[tuple[Design, FormationRealization]],
    sim: SimConfig,
    workers: int = 1,
    cache: SimCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate every ``(design, realization)`` task; results are index-placed."""
    etas = np.empty(len(tasks))
    evs = np.empty(len(tasks))
    keys = [SimCache.key(d, r, sim) for d, r in tasks] if cache is not None else [None] * len(tasks)
    todo = []
    for i, key in enumerate(keys):
        hit = cache.get(key) if cache is not None else None
        if hit is None:
            todo.append(i)
        else:
            etas[i], evs[i] = hit

    def work(i):
        design, realization = tasks[i]
        res = simulate(design, realization, sim)
        return i, res.energy_efficiency, res.energy_variance

    if workers <= 1:
        results = map(work, todo)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        results = pool.map(work, todo, chunksize=1)
    try:
        for i, eta, ev in results:
            etas[i], evs[i] = eta, ev
            if cache is not None:
                cache.put(keys[i], (eta, ev))
    finally:
        if workers > 1:
            pool.shutdown()
    return etas, evs


# -- artifact helpers -------------------------------------------------------


def _design_cells(d: Design) -> list[str]:
    return [_fmt(v) for v in d.vector()] + [d.spacing_mode]


PERF_HEADER = ("id", "role", "return", "std_eta", "std_ev", "risk") + DESIGN_COLUMNS


def write_performances(path: Path, rows: Sequence[tuple[int, str, DesignPerformance]]) -> None:
    _write_csv(
        path,
        PERF_HEADER,
        [
            [i, role, _fmt(p.return_r), _fmt(p.std_eta), _fmt(p.std_ev), _fmt(p.risk)] + _design_cells(p.design)
            for i, role, p in rows
        ],
    )


def read_performances(path: Path) -> list[tuple[int, str, DesignPerformance]]:
    out = []
    for r in _read_csv(path):
        perf = DesignPerformance(design_from_row(r), float(r["return"]), float(r["std_eta"]), float(r["std_ev"]))
        out.append((int(r["id"]), r["role"], perf))
    return out


def write_portfolios(path: Path, portfolios: Sequence[tuple[str, Portfolio]]) -> None:
    k = max((len(p.members) for _, p in portfolios), default=0)
    header = ["pool", "return", "risk"] + [f"member_{j + 1}" for j in range(k)]
    rows = []
    for pool, p in portfolios:
        cells = [f"{m}:{_fmt(w)}" for m, w in zip(p.members, p.weights)]
        rows.append([pool, _fmt(p.return_p), _fmt(p.risk_p)] + cells + [""] * (k - len(cells)))
    _write_csv(path, header, rows)


def read_portfolios(path: Path, perf_by_id: dict[int, DesignPerformance]) -> list[tuple[str, Portfolio, tuple]]:
    """Portfolios rebuilt from weights, each with its stored ``(return, risk)``."""
    out = []
    for r in _read_csv(path):
        pairs = [r[c].split(":") for c in r if c.startswith("member_") and r[c]]
        members = [int(m) for m, _ in pairs]
        weights = [float(w) for _, w in pairs]
        port = Portfolio.build(
            members,
            weights,
            [perf_by_id[m].return_r for m in members],
            [perf_by_id[m].risk for m in members],
        )
        out.append((r["pool"], port, (float(r["return"]), float(r["risk"]))))
    return out


def _portfolio_json(p: Portfolio) -> dict:
    return {
        "members": [{"id": m, "weight": w} for m, w in zip(p.members, p.weights)],
        "return": p.return_p,
        "risk": p.risk_p,
    }


# -- stages ---------------------------------------------------------------


@dataclass
class StageContext:
    cfg: RunConfig
    out: Path
    manifest: Manifest
    cache: SimCache
    force: bool = False
    trace: bool = False

    def seed(self, *names) -> int:
        return derive_seed(self.cfg.seed, *names)


def stage_sample(ctx: StageContext):
    cfg = ctx.cfg
    n_clusters = cfg.sim.n_clusters
    seeds = {f"sample/{mode}": ctx.seed("sample", mode) for mode in (UNIFORM, NONUNIFORM)}
    designs = []
    for mode in (UNIFORM, NONUNIFORM):
        designs += sample_designs(cfg.design.ranges, cfg.design.n_designs, seeds[f"sample/{mode}"], mode, n_clusters)
    path = ctx.out / "designs.csv"
    write_designs_csv(path, designs)
    return [], [path], seeds


def stage_score(ctx: StageContext):
    cfg = ctx.cfg
    src = ctx.out / "designs.csv"
    designs = read_designs_csv(src)
    nominal = FormationRealization.homogeneous(cfg.formation.base, cfg.sim.n_clusters)
    etas, evs = run_simulations([(d, nominal) for d in designs], cfg.sim, cfg.workers, ctx.cache)
    scored = [ScoredDesign(d, float(e), float(v)) for d, e, v in zip(designs, etas, evs)]
    path = ctx.out / "scores.csv"
    write_scored_csv(path, scored, extra={"index": list(range(len(scored)))})
    return [src], [path], {}


def select_picks(scored: Sequence[ScoredDesign], cfg: RunConfig):
    """``(role, ScoredDesign)`` rows for mixing, repetition and EXL candidates."""
    p = cfg.picks
    rows: list[tuple[str, ScoredDesign]] = []
    frontiers = {}
    for mode in (UNIFORM, NONUNIFORM):
        members = [s for s in scored if s.design.spacing_mode == mode]
        if not members:
            continue
        frontiers[mode] = pareto_frontier(members)
        rows += [(PICK, s) for s in pick_frontier_designs(frontiers[mode], p.pick_start, p.pick_interval)]
    # the pooled frontier is too sparse below the pick range; take the lowest-EV design per bin instead
    by_eta = sorted(scored, key=ScoredDesign.sort_key)
    rows += [
        (REPEAT, s)
        for s in pick_frontier_designs(by_eta, p.repeat_start, p.repeat_interval, stop=p.repeat_stop)
    ]
    n_clusters = cfg.sim.n_clusters
    exl = [s for s in scored if s.design.nominal_entry_loss(n_clusters) >= p.exl_threshold]
    exl.sort(key=lambda s: (s.ev, s.design.vector(), s.design.spacing_mode))
    rows += [(EXL_CANDIDATE, s) for s in exl[: p.exl_candidates]]
    return rows, frontiers


def stage_frontier(ctx: StageContext):
    cfg = ctx.cfg
    src = ctx.out / "scores.csv"
    scored, _ = read_scored_csv(src)
    rows, frontiers = select_picks(scored, cfg)

    nominal = FormationRealization.homogeneous(cfg.formation.base, cfg.sim.n_clusters)
    base = cfg.design.base_case
    (b_eta,), (b_ev,) = run_simulations([(base, nominal)], cfg.sim, 1, ctx.cache)
    rows.append((BASE, ScoredDesign(base, float(b_eta), float(b_ev))))

    front_rows = [s for mode in (UNIFORM, NONUNIFORM) if mode in frontiers for s in frontiers[mode]]
    frontier_path = ctx.out / "frontier.csv"
    write_scored_csv(frontier_path, front_rows)
    picks_path = ctx.out / "picks.csv"
    write_scored_csv(
        picks_path,
        [s for _, s in rows],
        extra={"id": list(range(len(rows))), "role": [r for r, _ in rows]},
    )
    n_pick = sum(1 for r, _ in rows if r == PICK)
    log.info("picked %d designs for mixing, %d for repetition", n_pick, sum(1 for r, _ in rows if r == REPEAT))

    outputs = [frontier_path, picks_path]
    if ctx.trace:
        trace_dir = ctx.out / "traces"
        trace_dir.mkdir(exist_ok=True)
        for i, (role, s) in enumerate(rows):
            if role == EXL_CANDIDATE:
                continue
            path = trace_dir / f"{i:04d}_{role}.csv"
            write_trace_csv(path, simulate(s.design, nominal, cfg.sim, trace=True))
    return [src], outputs, {}


def _read_picks(out: Path):
    scored, rows = read_scored_csv(out / "picks.csv")
    return [(int(r["id"]), r["role"], s) for r, s in zip(rows, scored)]


def stage_evaluate(ctx: StageContext):
    cfg = ctx.cfg
    src = ctx.out / "picks.csv"
    picks = _read_picks(ctx.out)
    outputs, seeds = [], {}
    n_real = cfg.evaluation.n_realizations
    for level in cfg.evaluation.levels:
        seed = ctx.seed("evaluate", f"{level:g}")
        seeds[f"evaluate/{level:g}"] = seed
        spec = UncertaintySpec(level, cfg.formation.base)
        realizations = sample_realizations(spec, n_real, cfg.sim.n_clusters, seed, per_well=cfg.formation.per_well)
        tasks = [(s.design, r) for _, _, s in picks for r in realizations]
        etas, evs = run_simulations(tasks, cfg.sim, cfg.workers, ctx.cache)
        etas = etas.reshape(len(picks), n_real)
        evs = evs.reshape(len(picks), n_real)
        rows = [
            (pid, role, performance_from_samples(s.design, etas[k], evs[k]))
            for k, (pid, role, s) in enumerate(picks)
        ]
        path = level_dir(ctx.out, level) / "performances.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_performances(path, rows)
        outputs.append(path)
    return [src], outputs, seeds


def _k_for(pool_size: int, k: int, label: str) -> int:
    if pool_size < k:
        log.warning("%s pool holds %d designs; mixing %d per portfolio instead of %d", label, pool_size, pool_size, k)
        return pool_size
    return k


def stage_mix(ctx: StageContext):
    cfg = ctx.cfg
    pc = cfg.portfolio
    inputs, outputs, seeds = [], [], {}
    for level in cfg.evaluation.levels:
        ldir = level_dir(ctx.out, level)
        src = ldir / "performances.csv"
        inputs.append(src)
        perfs = read_performances(src)
        high = [(i, p) for i, role, p in perfs if role == PICK]
        candidates = [(i, p) for i, role, p in perfs if role == EXL_CANDIDATE]
        chosen = pick_exl_designs([p for _, p in candidates], cfg.picks.exl_threshold, pc.n_exl, cfg.sim.n_clusters)
        exl = [next((i, c) for i, c in candidates if c is p) for p in chosen]

        portfolios: list[tuple[str, Portfolio]] = []
        fronts: list[tuple[str, Portfolio]] = []
        for pool_name, pool in ((HIGH_POOL, high), (EXL_POOL, exl)):
            if not pool:
                log.warning("level %g: %s pool is empty; no portfolios mixed", level, pool_name)
                continue
            seed = ctx.seed("mix", f"{level:g}", pool_name)
            seeds[f"mix/{level:g}/{pool_name}"] = seed
            k = _k_for(len(pool), pc.k, pool_name)
            mixed = random_portfolios([p for _, p in pool], k, pc.n_mix, seed, ids=[i for i, _ in pool])
            portfolios += [(pool_name, p) for p in mixed]
            fronts += [(pool_name, p) for p in portfolio_frontier(mixed)]

        p_path = ldir / "portfolios.csv"
        f_path = ldir / "frontier_portfolios.csv"
        e_path = ldir / "exl_picks.csv"
        write_portfolios(p_path, portfolios)
        write_portfolios(f_path, fronts)
        write_performances(e_path, [(i, EXL_POOL, p) for i, p in exl])
        outputs += [p_path, f_path, e_path]
    return inputs, outputs, seeds


def combination_table(line, base: DesignPerformance, n_lambda: int) -> list[dict]:
    rows = []
    for lam in lambda_grid(n_lambda):
        c = combine(line, float(lam))
        d_ret, d_risk = normalize_to_base((c.return_p, c.risk_p), base)
        rows.append(
            {
                "lambda": float(lam),
                "return": c.return_p,
                "risk": c.risk_p,
                "risk_exact": c.risk_exact,
                "dimensionless_return": d_ret,
                "dimensionless_risk": d_risk,
                "weights": {str(m): w for m, w in c.weights.items()},
            }
        )
    return rows


def _level_state(out: Path, level: float):
    ldir = level_dir(out, level)
    perfs = read_performances(ldir / "performances.csv")
    by_id = {i: p for i, _, p in perfs}
    base = next((p for _, role, p in perfs if role == BASE), None)
    if base is None:
        raise PipelineError(f"no base case in {ldir / 'performances.csv'}")
    return ldir, perfs, by_id, base


def stage_combine(ctx: StageContext):
    cfg = ctx.cfg
    inputs, outputs = [], []
    for level in cfg.evaluation.levels:
        ldir, perfs, by_id, base = _level_state(ctx.out, level)
        f_path = ldir / "frontier_portfolios.csv"
        inputs += [ldir / "performances.csv", f_path]
        fronts = read_portfolios(f_path, by_id)
        high = [p for pool, p, _ in fronts if pool == HIGH_POOL]
        anchors = [p for pool, p, _ in fronts if pool == EXL_POOL]
        if not high or not anchors:
            raise PipelineError(f"level {level:g}: need both high-efficiency and EXL portfolios to combine")
        line = tangent_combination(anchors, high, cfg.portfolio.anchor_rule)
        other_rule = "dominance" if cfg.portfolio.anchor_rule == "min_gradient" else "min_gradient"
        alt = tangent_combination(anchors, high, other_rule)
        data = {
            "level": level,
            "rule": line.rule,
            "gradient": line.gradient,
            "anchor": _portfolio_json(line.anchor),
            "tangent": _portfolio_json(line.tangent),
            "alternate": {"rule": alt.rule, "gradient": alt.gradient, "same_line": alt.anchor == line.anchor},
            "base": {"return": base.return_r, "risk": base.risk},
            "samples": combination_table(line, base, cfg.portfolio.n_lambda),
        }
        path = ldir / "combination_line.json"
        _write_json(path, data)
        outputs.append(path)
    return inputs, outputs, {}


def check_portfolios(out: Path, levels: Sequence[float], tol: float = PORTFOLIO_RECOMPUTE_TOL) -> int:
    """Recompute every stored portfolio from its weights; return how many were checked."""
    checked = 0
    for level in levels:
        ldir, _, by_id, _ = _level_state(out, level)
        returns = {i: p.return_r for i, p in by_id.items()}
        risks = {i: p.risk for i, p in by_id.items()}
        for name in ("portfolios.csv", "frontier_portfolios.csv"):
            for pool, port, (ret, risk) in read_portfolios(ldir / name, by_id):
                r2, s2 = recompute(port, returns, risks)
                if not (math.isclose(r2, ret, rel_tol=tol, abs_tol=0) and math.isclose(s2, risk, rel_tol=tol, abs_tol=0)):
                    raise PipelineError(
                        f"{ldir / name}: stored ({ret!r}, {risk!r}) != recomputed ({r2!r}, {s2!r}) for {port.members}"
                    )
                checked += 1
    return checked


def emit_plot_data(out: Path, cfg: RunConfig) -> list[Path]:
    """Write ``fig2a.csv``, ``fig2bc.csv`` and ``fig3.csv`` from the run's artifacts.

    Requires the frontier and evaluate stages. Missing mix/combine outputs
    leave the corresponding rows out.
    """
    out = Path(out)
    for name in ("scores.csv", "picks.csv"):
        if not (out / name).exists():
            raise MissingArtifactError(f"incomplete run: {out / name} is missing")

    scored, score_rows = read_scored_csv(out / "scores.csv")
    picks = _read_picks(out)
    frontier_keys = set()
    for mode in (UNIFORM, NONUNIFORM):
        members = [s for s in scored if s.design.spacing_mode == mode]
        if members:
            frontier_keys |= {s.design for s in pareto_frontier(members)}
    pick_keys = {s.design for _, role, s in picks if role == PICK}
    repeat_keys = {s.design for _, role, s in picks if role == REPEAT}

    def klass(s):
        if s.design in pick_keys:
            return "pick"
        if s.design in repeat_keys:
            return "repeat"
        if s.design in frontier_keys:
            return "frontier"
        return "cloud"

    fig2a = out / "fig2a.csv"
    _write_csv(fig2a, ("eta", "ev", "class"), [[_fmt(s.eta), _fmt(s.ev), klass(s)] for s in scored])

    level = cfg.figure_level
    ldir = level_dir(out, level)
    if not (ldir / "performances.csv").exists():
        raise MissingArtifactError(f"incomplete run: {ldir / 'performances.csv'} is missing")
    _, perfs, by_id, base = _level_state(out, level)
    rows = [[_fmt(p.risk), _fmt(p.return_r), "design"] for _, role, p in perfs if role == PICK]
    if (ldir / "portfolios.csv").exists():
        ports = read_portfolios(ldir / "portfolios.csv", by_id)
        exl = read_performances(ldir / "exl_picks.csv")
        rows += [[_fmt(risk), _fmt(ret), "portfolio"] for pool, _, (ret, risk) in ports if pool == HIGH_POOL]
        rows += [[_fmt(p.risk), _fmt(p.return_r), "exl"] for _, _, p in exl]
        rows += [[_fmt(risk), _fmt(ret), "exl_portfolio"] for pool, _, (ret, risk) in ports if pool == EXL_POOL]
    if (ldir / "combination_line.json").exists():
        line = json.loads((ldir / "combination_line.json").read_text())
        rows += [[_fmt(s["risk"]), _fmt(s["return"]), "line"] for s in line["samples"]]
    fig2bc = out / "fig2bc.csv"
    _write_csv(fig2bc, ("risk", "return", "class"), rows)

    fig3_rows = []
    for lvl in cfg.evaluation.levels:
        path = level_dir(out, lvl) / "combination_line.json"
        if not path.exists():
            continue
        line = json.loads(path.read_text())
        for s in line["samples"]:
            fig3_rows.append([f"{lvl:g}", _fmt(s["dimensionless_risk"]), _fmt(s["dimensionless_return"]), _fmt(s["lambda"])])
    fig3 = out / "fig3.csv"
    _write_csv(fig3, ("level", "dimensionless_risk", "dimensionless_return", "lambda"), fig3_rows)
    return [fig2a, fig2bc, fig3]


def stage_report(ctx: StageContext):
    cfg = ctx.cfg
    n = check_portfolios(ctx.out, cfg.evaluation.levels)
    log.info("recomputed %d portfolios from their weights", n)
    inputs = [ctx.out / "scores.csv", ctx.out / "picks.csv"]
    for level in cfg.evaluation.levels:
        ldir = level_dir(ctx.out, level)
        inputs += [ldir / f for f in ("performances.csv", "portfolios.csv", "exl_picks.csv", "combination_line.json")]
    outputs = emit_plot_data(ctx.out, cfg)
    return inputs, outputs, {}


STAGE_FUNCS: dict[str, Callable] = {
    "sample": stage_sample,
    "score": stage_score,
    "frontier": stage_frontier,
    "evaluate": stage_evaluate,
    "mix": stage_mix,
    "combine": stage_combine,
    "report": stage_report,
}


def run_stage(
    stage: str,
    cfg: RunConfig,
    out: Path | None = None,
    force: bool = False,
    trace: bool = False,
    cache: SimCache | None = None,
) -> Manifest:
    """Run one stage against the artifacts already in the run directory."""
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest.load(out)
    manifest.check_upstream(stage, cfg, force=force)
    ctx = StageContext(cfg, out, manifest, cache if cache is not None else SimCache(), force, trace)
    start = time.perf_counter()
    inputs, outputs, seeds = STAGE_FUNCS[stage](ctx)
    manifest.record(stage, cfg, inputs, outputs, seeds, time.perf_counter() - start)
    log.info("stage %s done in %.1f s", stage, time.perf_counter() - start)
    return manifest


def run_pipeline(cfg: RunConfig, out: Path | None = None, force: bool = False, trace: bool = False) -> Manifest:
    """Run every stage in order, sharing one simulation cache."""
    cache = SimCache()
    manifest = None
    for stage in STAGES:
        manifest = run_stage(stage, cfg, out, force=force, trace=trace, cache=cache)
    return manifest
