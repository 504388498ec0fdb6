import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

import cebench
from cebench import cli, figures
from cebench.tables import LAYOUTS, Column, Layout, LayoutError, coverage_manifest, emit_table, parse_table, parse_text, render_table
from cebench.wls import EstimationError

CONFIGS = Path(cebench.__file__).parent / "configs"


def _config(tmp_path, name, edit=None):
    raw = yaml.safe_load((CONFIGS / f"{name}.yaml").read_text())
    if edit is not None:
        edit(raw)
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(raw, sort_keys=False))
    return path


def _small(raw):
    raw["simulation"]["reps"] = 3
    raw["analysis"]["ipw"]["enabled"] = False


def test_validate_reference_counts(tmp_path):
    out = tmp_path / "out"
    res = CliRunner().invoke(cli.main, ["validate", "--config", str(_config(tmp_path, "reference")), "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = {r["arm"]: r for r in parse_table(out / "design_counts.csv", LAYOUTS["design_counts"])}
    assert [rows[a]["villages"] for a in ("Control", "Gikuriro", "GD_Lower", "GD_Middle", "GD_Upper", "GD_Large")] == [
        74, 74, 22, 22, 22, 34]
    assert rows["Control"]["flow"] is None
    assert "Gikuriro" in res.output


def test_simulate_is_byte_deterministic(tmp_path):
    cfg = _config(tmp_path, "simulated", _small)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run("simulate", cfg, out=a) == 0
    assert cli.run("simulate", cfg, out=b) == 0
    names = sorted(p.name for p in a.iterdir())
    assert {"villages.csv", "households.csv", "monte_carlo.csv"} <= set(names)
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_override_changes_draws(tmp_path):
    cfg = _config(tmp_path, "simulated", _small)
    cli.run("simulate", cfg, out=tmp_path / "a")
    cli.run("simulate", cfg, out=tmp_path / "b", seed=7)
    assert (tmp_path / "a" / "households.csv").read_bytes() != (tmp_path / "b" / "households.csv").read_bytes()


def test_ce_without_ledger_is_validation_error(tmp_path):
    cfg = _config(tmp_path, "simulated", lambda r: r.pop("costs"))
    out = tmp_path / "out"
    assert cli.run("ce", cfg, out=out) == cli.EXIT_VALIDATION
    rec = json.loads((out / "error.json").read_text())
    assert rec["exit_code"] == 1 and rec["kind"] == "validation" and "ledger" in rec["message"]


def test_unknown_config_key_rejected(tmp_path):
    cfg = _config(tmp_path, "reference", lambda r: r.update(bogus_key=1))
    out = tmp_path / "out"
    res = CliRunner().invoke(cli.main, ["validate", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 1
    assert "bogus_key" in json.loads((out / "error.json").read_text())["message"]


@pytest.mark.parametrize("edit", [
    lambda r: r.update(schema_version=99),
    lambda r: r.update(dgp={"eligible_per_village": 3}),
])
def test_bad_config_exit_one(tmp_path, edit):
    assert cli.run("validate", _config(tmp_path, "reference", edit), out=tmp_path / "o") == 1


def test_missing_config_and_env(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.CONFIG_ENV, raising=False)
    assert cli.run("validate", None, out=tmp_path) == 1
    monkeypatch.setenv(cli.CONFIG_ENV, str(_config(tmp_path, "reference")))
    assert cli.run("validate", None, out=tmp_path / "env") == 0


def test_unknown_variant(tmp_path):
    cfg = _config(tmp_path, "simulated", _small)
    assert cli.run("ce", cfg, out=tmp_path / "o", variant="Quartic") == 1


def test_estimation_failure_exit_two(tmp_path, monkeypatch):
    def boom(ctx):
        raise EstimationError("design matrix is rank deficient")

    monkeypatch.setitem(cli.COMMANDS, "itt", boom)
    out = tmp_path / "o"
    assert cli.run("itt", _config(tmp_path, "reference"), out=out) == cli.EXIT_ESTIMATION
    assert json.loads((out / "error.json").read_text())["kind"] == "estimation"


def test_every_command_registered():
    assert set(cli.main.commands) == set(cli.COMMANDS)


def test_coverage_manifest_maps_to_commands():
    man = coverage_manifest()
    assert set(man) == set(LAYOUTS)
    assert set(man.values()) <= set(cli.COMMANDS)


def test_pipeline_emits_manifest_tables(tmp_path):
    cfg = _config(tmp_path, "simulated", lambda r: r["analysis"].update(granular=True))
    out = tmp_path / "out"
    for cmd in ("validate", "itt", "ce", "tce", "bcr", "spillover", "modality", "choice", "hetero", "attrition"):
        assert cli.run(cmd, cfg, out=out) == 0, cmd
    produced = {p.stem for p in out.glob("*.csv")}
    for name, cmd in coverage_manifest().items():
        if cmd in {"forest", "simulate", "power"}:
            continue
        assert name in produced, name
        rows = parse_table(out / f"{name}.csv", LAYOUTS[name])
        assert rows, name


def test_itt_header_order():
    assert LAYOUTS["itt"].header == [
        "outcome", "family",
        "T_GK", "T_GK_se", "T_GK_q",
        "T_GDMain", "T_GDMain_se", "T_GDMain_q",
        "T_GDLarge", "T_GDLarge_se", "T_GDLarge_q",
        "control_mean", "control_sd", "N", "R2",
        "p[GDM=GDL]", "p[GK=GDL]",
    ]
    assert LAYOUTS["bcr"].header[-3:] == ["p[a]", "p[b]", "p[c]"]


def test_table_round_trip_exact(rng):
    lay = LAYOUTS["itt"]
    rows = []
    for k in range(5):
        row = {"outcome": f"y{k}", "family": "Primary", "N": int(rng.integers(10, 5000))}
        for c in lay.columns:
            if c.kind in ("value", "se", "q") and c.name not in row:
                row[c.name] = float(rng.normal() * 10.0 ** rng.integers(-8, 8))
        rows.append(row)
    rows[0]["T_GK_q"] = None
    back = parse_text(render_table(rows, lay), lay)
    assert np.isnan(back[0]["T_GK_q"])
    for r, b in zip(rows[1:], back[1:]):
        assert r == b


def test_empty_rows_header_only(tmp_path):
    p = emit_table([], LAYOUTS["spillover"], tmp_path / "s.csv")
    assert p.read_text() == ",".join(LAYOUTS["spillover"].header) + "\n"
    assert parse_table(p, LAYOUTS["spillover"]) == []


def test_layout_rejects_strays():
    lay = Layout("t", (Column("a", "text"), Column("b", "se")), "itt")
    with pytest.raises(LayoutError):
        render_table([{"a": "x", "c": 1.0}], lay)
    with pytest.raises(LayoutError):
        parse_text("a,b\nx,1.0\n", lay)
    with pytest.raises(LayoutError):
        parse_text("b,a\n", lay)


def test_figures_deterministic_and_wellformed(tmp_path):
    import xml.etree.ElementTree as ET

    args = ({"A": [1.0, 2.0, 3.0, 10.0], "B": [2.0, 2.5]}, {"A": 2.0, "B": 2.2})
    s1 = figures.transfer_box_plot(*args, path=tmp_path / "a.svg")
    s2 = figures.transfer_box_plot(*args)
    assert s1 == s2 == (tmp_path / "a.svg").read_text()
    ET.fromstring(s1)
    ET.fromstring(figures.ce_vs_ceff({"GK": 124.8, "GD": 101.9}, {"GK": 0.1, "GD": 0.2}, "GK", [(0, 0), (150, 0.3)]))
    ET.fromstring(figures.share_bars({"g1": {"C": 0.3, "T": 0.5}}))
    ET.fromstring(figures.cdf_plot({"y": ([0.0, 1.0], [0.5, 1.0])}))


def test_report_svgs_byte_identical(tmp_path):
    cfg = _config(tmp_path, "simulated", _small)
    for d in ("a", "b"):
        assert cli.run("report", cfg, out=tmp_path / d) == 0
    svgs = sorted((tmp_path / "a").rglob("*.svg"))
    assert svgs
    for p in svgs:
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
