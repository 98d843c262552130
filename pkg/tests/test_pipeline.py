import csv
import json
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from stimfolio.cli import main
from stimfolio.config import (
    DesignConfig,
    EvaluationConfig,
    PortfolioConfig,
    RunConfig,
    config_from_dict,
    load_config,
)
from stimfolio.designs import read_designs_csv
from stimfolio.formation import FormationParams, FormationRealization
from stimfolio.fracsim import SimConfig
from stimfolio.pipeline import (
    BASE,
    MANIFEST,
    STAGES,
    MissingArtifactError,
    PipelineError,
    SimCache,
    StaleArtifactError,
    check_portfolios,
    emit_plot_data,
    file_digest,
    level_dir,
    read_performances,
    run_pipeline,
    run_simulations,
    run_stage,
)
from stimfolio.portfolio import normalize_to_base

LEVELS = (0.05, 0.1, 0.2)


def small(out, **changes):
    cfg = RunConfig(
        seed=7,
        out=str(out),
        design=DesignConfig(n_designs=150),
        sim=SimConfig(t_end=200.0, dt=1.0),
        evaluation=EvaluationConfig(levels=LEVELS, n_realizations=8),
        portfolio=PortfolioConfig(n_mix=300),
    )
    return cfg.replace(**changes) if changes else cfg


def artifact_digests(out: Path) -> dict:
    return {
        str(p.relative_to(out)): file_digest(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline") / "run"
    run_pipeline(small(out))
    return out


def test_all_artifacts_written(run_dir):
    for name in ("designs.csv", "scores.csv", "frontier.csv", "picks.csv", "fig2a.csv", "fig2bc.csv", "fig3.csv"):
        assert (run_dir / name).exists(), name
    for u in LEVELS:
        for name in ("performances.csv", "portfolios.csv", "frontier_portfolios.csv", "exl_picks.csv", "combination_line.json"):
            assert (level_dir(run_dir, u) / name).exists(), (u, name)


def test_manifest_contents(run_dir):
    m = json.loads((run_dir / MANIFEST).read_text())
    assert set(m["stages"]) == set(STAGES)
    assert m["software_version"]
    assert m["config"]["seed"] == 7
    assert "evaluate/0.05" in m["seeds"] and "sample/uniform" in m["seeds"]
    for entry in m["stages"].values():
        assert entry["wall_clock_s"] >= 0
        for digest in entry["outputs"].values():
            assert len(digest) == 64


def test_both_spacing_modes_sampled(run_dir):
    modes = [d.spacing_mode for d in read_designs_csv(run_dir / "designs.csv")]
    assert modes.count("uniform") == 150 and modes.count("nonuniform") == 150


def test_picks_carry_base_case_last(run_dir):
    rows = read_rows(run_dir / "picks.csv")
    assert rows[-1]["role"] == BASE
    assert [int(r["id"]) for r in rows] == list(range(len(rows)))
    assert {"pick", "repeat", "exl_candidate"} <= {r["role"] for r in rows}


def test_one_combination_line_per_level(run_dir):
    for u in LEVELS:
        line = json.loads((level_dir(run_dir, u) / "combination_line.json").read_text())
        assert line["level"] == u
        assert line["gradient"] > 0
        lams = [s["lambda"] for s in line["samples"]]
        assert lams == pytest.approx(np.linspace(0, 1, 11).tolist(), abs=0)
        rets = [s["return"] for s in line["samples"]]
        assert all(b >= a for a, b in zip(rets, rets[1:]))
        for s in line["samples"]:
            assert s["risk_exact"] <= s["risk"] * (1 + 1e-12)
            assert sum(s["weights"].values()) == pytest.approx(1.0, abs=1e-12)


def test_report_recomputes_portfolios(run_dir):
    n = check_portfolios(run_dir, LEVELS)
    assert n >= 3 * 2 * 300


def test_fig_columns_and_classes(run_dir):
    fig2a = read_rows(run_dir / "fig2a.csv")
    assert list(fig2a[0]) == ["eta", "ev", "class"]
    assert {r["class"] for r in fig2a} <= {"cloud", "frontier", "pick", "repeat"}
    assert len(fig2a) == 300
    fig2bc = read_rows(run_dir / "fig2bc.csv")
    assert list(fig2bc[0]) == ["risk", "return", "class"]
    assert {r["class"] for r in fig2bc} == {"design", "portfolio", "exl", "exl_portfolio", "line"}
    fig3 = read_rows(run_dir / "fig3.csv")
    assert list(fig3[0]) == ["level", "dimensionless_risk", "dimensionless_return", "lambda"]
    assert sorted({r["level"] for r in fig3}) == ["0.05", "0.1", "0.2"]


def test_fig3_matches_normalization(run_dir):
    fig3 = read_rows(run_dir / "fig3.csv")
    for u in LEVELS:
        base = next(p for _, role, p in read_performances(level_dir(run_dir, u) / "performances.csv") if role == BASE)
        line = json.loads((level_dir(run_dir, u) / "combination_line.json").read_text())
        rows = [r for r in fig3 if r["level"] == f"{u:g}"]
        assert len(rows) == len(line["samples"])
        for r, s in zip(rows, line["samples"]):
            d_ret, d_risk = normalize_to_base((s["return"], s["risk"]), base)
            assert float(r["dimensionless_return"]) == d_ret
            assert float(r["dimensionless_risk"]) == d_risk
            assert float(r["lambda"]) == s["lambda"]


def test_worker_count_does_not_change_outputs(run_dir, tmp_path):
    out = tmp_path / "run8"
    run_pipeline(small(out, workers=8))
    assert artifact_digests(out) == artifact_digests(run_dir)


def test_subcommand_rerun_reproduces_bytes(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    before = artifact_digests(out)
    for stage in ("frontier", "mix", "report"):
        run_stage(stage, small(out), force=True)
    assert artifact_digests(out) == before


def test_deleting_downstream_keeps_upstream(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    for u in LEVELS:
        shutil.rmtree(level_dir(out, u))
    run_stage("score", small(out))
    assert file_digest(out / "scores.csv") == file_digest(run_dir / "scores.csv")


def test_missing_upstream_names_subcommand(tmp_path):
    with pytest.raises(MissingArtifactError, match="stimfolio frontier"):
        run_stage("evaluate", small(tmp_path / "empty"))


def test_deleted_artifact_reported(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    (out / "picks.csv").unlink()
    with pytest.raises(MissingArtifactError, match="stimfolio frontier"):
        run_stage("evaluate", small(out))


def test_stale_artifact_refused_unless_forced(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    with open(out / "scores.csv", "a") as fh:
        fh.write("\n")
    with pytest.raises(StaleArtifactError, match="--force"):
        run_stage("frontier", small(out))
    run_stage("frontier", small(out), force=True)


def test_config_change_makes_upstream_stale(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    with pytest.raises(StaleArtifactError):
        run_stage("score", small(out, seed=8))
    # worker count is not part of any output, so it never invalidates artifacts
    run_stage("score", small(out, workers=3))


def test_tampered_portfolio_fails_report(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    path = level_dir(out, 0.05) / "portfolios.csv"
    rows = path.read_text().splitlines()
    cells = rows[1].split(",")
    cells[1] = repr(float(cells[1]) * (1 + 1e-9))
    rows[1] = ",".join(cells)
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(PipelineError, match="recomputed"):
        run_stage("report", small(out), force=True)


def test_partial_emission_without_portfolios(run_dir, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(run_dir, out)
    for u in LEVELS:
        for name in ("portfolios.csv", "frontier_portfolios.csv", "exl_picks.csv", "combination_line.json"):
            (level_dir(out, u) / name).unlink()
    emit_plot_data(out, small(out))
    assert {r["class"] for r in read_rows(out / "fig2bc.csv")} == {"design"}
    assert read_rows(out / "fig3.csv") == []


def test_incomplete_run_rejected(tmp_path):
    with pytest.raises(MissingArtifactError):
        emit_plot_data(tmp_path, small(tmp_path))


def test_sim_cache_reuses_results():
    cache = SimCache()
    real = FormationRealization.homogeneous(FormationParams(), 5)
    cfg = SimConfig(t_end=20.0)
    design = DesignConfig().base_case
    first = run_simulations([(design, real)] * 3, cfg, 1, cache)
    assert len(cache) == 1
    again = run_simulations([(design, real)], cfg, 1, cache)
    assert again[0][0] == first[0][0]


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.evaluation.levels == (0.05, 0.10, 0.20)
        assert (cfg.design.n_designs, cfg.evaluation.n_realizations) == (2000, 200)
        assert (cfg.portfolio.n_mix, cfg.portfolio.k) == (12500, 6)
        assert cfg.figure_level == 0.05

    def test_yaml_round_trip(self, tmp_path):
        data = {
            "seed": 11,
            "formation": {"toughness": 1.5e6, "per_well": True},
            "design": {"n_designs": 10, "ranges": {"viscosity": [0.01, 0.1]}},
            "sim": {"t_end": 100.0},
            "evaluation": {"levels": [0.1], "n_realizations": 4},
            "portfolio": {"anchor_rule": "dominance"},
        }
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(data))
        cfg = load_config(path)
        assert cfg.seed == 11
        assert cfg.formation.base.toughness == 1.5e6 and cfg.formation.per_well
        assert cfg.design.ranges.viscosity == (0.01, 0.1)
        assert cfg.sim.t_end == 100.0
        assert cfg.evaluation.levels == (0.1,)
        assert cfg.portfolio.anchor_rule == "dominance"

    def test_plain_exponent_floats(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("formation:\n  toughness: 1.5e6\ndesign:\n  ranges:\n    perf_factor: [1e5, 1.0e9]\n")
        cfg = load_config(path)
        assert cfg.formation.base.toughness == 1.5e6
        assert cfg.design.ranges.perf_factor == (1e5, 1e9)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            config_from_dict({"evaluation": {"levels": [1.2]}})
        with pytest.raises(ValueError):
            config_from_dict({"portfolio": {"n_mix": 0}})
        with pytest.raises(ValueError):
            config_from_dict({"sim": {"unknown_key": 1}})
        with pytest.raises(ValueError):
            config_from_dict({"plotting": {}})

    def test_section_digest_tracks_changes(self):
        a = RunConfig()
        assert a.section_digest("design") == RunConfig().section_digest("design")
        b = a.replace(design=replace(a.design, n_designs=10))
        assert a.section_digest("design") != b.section_digest("design")
        assert a.section_digest("sim") == b.section_digest("sim")


class TestCli:
    def write_config(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            yaml.safe_dump(
                {
                    "seed": 7,
                    "design": {"n_designs": 150},
                    "sim": {"t_end": 200.0, "dt": 1.0},
                    "evaluation": {"n_realizations": 8},
                    "portfolio": {"n_mix": 300},
                }
            )
        )
        return path

    def test_run_and_stage_commands(self, tmp_path, run_dir):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "cli"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--workers", "2"]) == 0
        assert artifact_digests(out) == artifact_digests(run_dir)
        assert main(["report", "--config", str(cfg), "--out", str(out)]) == 0

    def test_level_override(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "cli"
        for stage in ("sample", "score", "frontier", "evaluate"):
            assert main([stage, "--config", str(cfg), "--out", str(out), "--level", "0.1", "--level", "0.3"]) == 0
        assert sorted(p.name for p in out.glob("level_*")) == ["level_0.1", "level_0.3"]

    def test_trace_flag_writes_series(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "cli"
        for stage in ("sample", "score"):
            assert main([stage, "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["frontier", "--config", str(cfg), "--out", str(out), "--trace"]) == 0
        traces = sorted((out / "traces").glob("*.csv"))
        assert traces and traces[-1].name.endswith("_base.csv")

    def test_missing_upstream_exit_code(self, tmp_path, capsys):
        assert main(["mix", "--out", str(tmp_path / "nothing")]) == 2
        assert "stimfolio evaluate" in capsys.readouterr().err

    def test_seed_override_is_stale_for_later_stage(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "cli"
        assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["score", "--config", str(cfg), "--out", str(out), "--seed", "99"]) == 2
        assert "--force" in capsys.readouterr().err
