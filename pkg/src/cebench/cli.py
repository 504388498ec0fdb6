"""Command-line pipeline runner.

Every command reads one YAML config, writes deterministic CSV (and, for
``report``, SVG) artifacts into the output directory, and exits 0 on
success, 1 on a configuration or data validation error and 2 on an
estimation failure.  Failures also leave ``error.json`` in the output
directory and print the same record on stderr.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import click
import numpy as np
import pandas as pd

from . import costing, estimators, figures, forest, inference, simlab
from .config import CONFIG_ENV, ConfigError, RunConfig, load_config, load_data
from .data_model import ARM_ORDER, GD_ARMS, GD_MAIN_ARMS, Arm, DataError, Level, Modality, OutcomeSpec, Stratum, TrialData
from .estimators import CeVariant, Moderator
from .selection import ConvergenceError
from .tables import LAYOUTS, emit_table, regression_row
from .wls import EstimationError

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 1, 2
IMPLIED_CUBIC_RATIO = 2.58
CHILD_MODERATORS = frozenset({Moderator.BASELINE_ANTHRO, Moderator.FIRST_THOUSAND_DAYS, Moderator.NEWBORN})

VALIDATION_ERRORS = (ConfigError, DataError, simlab.SpecError)
ESTIMATION_ERRORS = (
    EstimationError,
    ConvergenceError,
    inference.SeparationError,
    simlab.MonteCarloAbort,
    np.linalg.LinAlgError,
)


@dataclass
class RunContext:
    cfg: RunConfig
    out: Path
    seed: int
    threads: int = 1
    variant: str | None = None
    _data: TrialData | None = None

    @property
    def data(self) -> TrialData:
        if self._data is None:
            self._data = load_data(self.cfg, self.seed)
        return self._data

    @property
    def outcomes(self) -> list[OutcomeSpec]:
        return self.cfg.outcome_specs()

    def ledgers(self, required: bool = True):
        led = self.cfg.ledgers()
        if required and not led:
            raise ConfigError("this command needs a cost ledger (costs section)")
        return led

    def map(self, fn: Callable, items: Sequence) -> list:
        """Run independent tasks, in parallel threads if requested; results keep input order."""
        self.data  # load once before any worker touches it
        if self.threads > 1 and len(items) > 1:
            from joblib import Parallel, delayed

            return Parallel(n_jobs=self.threads, prefer="threads")(delayed(fn)(x) for x in items)
        return [fn(x) for x in items]

    def emit(self, layout: str, rows, name: str | None = None) -> Path:
        return emit_table(rows, LAYOUTS[layout], self.out / f"{name or layout}.csv")


def _analysis_kwargs(ctx: RunContext) -> dict:
    a = ctx.cfg.analysis
    return dict(controls=tuple(a.controls), candidates=tuple(a.candidates), always_keep=tuple(a.always_keep))


def _household_outcomes(ctx: RunContext) -> list[OutcomeSpec]:
    return [o for o in ctx.outcomes if o.level is Level.HOUSEHOLD]


def _qvalues(fits, terms) -> list[dict[str, float]]:
    """Sharpened q-values within each outcome family, over every outcome and term in the table."""
    out = [dict() for _ in fits]
    fams: dict[str, list[tuple[int, str]]] = {}
    for i, res in enumerate(fits):
        for t in terms:
            if t in res.params.index:
                fams.setdefault(res.meta.get("family", ""), []).append((i, t))
    for keys in fams.values():
        p = [float(fits[i].pvalues[t]) for i, t in keys]
        for (i, t), q in zip(keys, inference.sharpened_q(p)):
            out[i][t] = float(q)
    return out


def _regression_table(ctx: RunContext, layout: str, fits, name: str | None = None, **extra) -> Path:
    lay = LAYOUTS[layout]
    terms = [c.name for c in lay.columns if f"{c.name}_q" in lay.header]
    qs = _qvalues(fits, terms)
    rows = [regression_row(res, lay, q, **extra) for res, q in zip(fits, qs)]
    return ctx.emit(layout, rows, name)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(ctx: RunContext) -> list[Path]:
    data = ctx.data
    hh = data.households
    counts = data.design.arm_counts()
    rows = []
    for arm in ARM_ORDER:
        sub = hh[hh["arm"] == arm.value]
        elig = sub[sub["stratum"] == Stratum.ELIGIBLE.value]
        mods = elig["modality"].value_counts() if "modality" in elig else pd.Series(dtype=int)
        rows.append(
            {
                "arm": arm.value,
                "villages": counts[arm],
                "eligible": len(elig),
                "ineligible": int((sub["stratum"] == Stratum.INELIGIBLE.value).sum()),
                "flow": int(mods.get(Modality.FLOW.value, 0)) if arm.is_cash else None,
                "lumpsum": int(mods.get(Modality.LUMP_SUM.value, 0)) if arm.is_cash else None,
                "choice": int(mods.get(Modality.CHOICE.value, 0)) if arm.is_cash else None,
            }
        )
    click.echo(f"{'arm':<10} {'villages':>8} {'eligible':>8} {'inelig.':>8}")
    for r in rows:
        click.echo(f"{r['arm']:<10} {r['villages']:>8} {r['eligible']:>8} {r['ineligible']:>8}")
    return [ctx.emit("design_counts", rows)]


def _ipw(ctx: RunContext):
    ip = ctx.cfg.analysis.ipw
    if not ip.enabled:
        return None
    data = ctx.data
    hh = estimators.add_arm_dummies(data.households)
    hh = hh[hh["stratum"] == Stratum.ELIGIBLE.value].assign(remain=(~data.attrited()).astype(float))
    model = inference.fit_remain_propensity(hh, ip.covariates, estimators.POOLED_TERMS,
                                            on_separation=ip.on_separation, floor=ip.floor)
    w = inference.ipw_weights(model, hh, base=())
    return pd.Series(w.to_numpy(), index=hh.loc[w.index, "household_id"].astype(str).to_numpy())


def cmd_itt(ctx: RunContext) -> list[Path]:
    kw = _analysis_kwargs(ctx)
    led = ctx.ledgers(required=False) or None
    fits = ctx.map(lambda o: estimators.itt(ctx.data, o, ledgers=led, **kw), ctx.outcomes)
    paths = [_regression_table(ctx, "itt", fits)]
    if ctx.cfg.analysis.granular:
        gfits = ctx.map(lambda o: estimators.itt(ctx.data, o, granular=True, **kw), ctx.outcomes)
        paths.append(_regression_table(ctx, "itt_granular", gfits))
    ipw = _ipw(ctx)
    if ipw is not None:
        hh_specs = _household_outcomes(ctx)
        wfits = ctx.map(lambda o: estimators.itt(ctx.data, o, ledgers=led, ipw=ipw, **kw), hh_specs)
        paths.append(_regression_table(ctx, "itt_ipw", wfits))
    return paths


def _variants(ctx: RunContext) -> list[CeVariant]:
    if ctx.variant:
        try:
            return [CeVariant(ctx.variant)]
        except ValueError:
            raise ConfigError(f"unknown variant {ctx.variant!r}; choose from {[v.value for v in CeVariant]}") from None
    return list(ctx.cfg.analysis.variants)


def cmd_ce(ctx: RunContext) -> list[Path]:
    led = ctx.ledgers()
    bench = ctx.cfg.costs.benchmark
    kw = _analysis_kwargs(ctx)
    jobs = [(v, o) for v in _variants(ctx) for o in ctx.outcomes]
    res = ctx.map(lambda j: estimators.cost_equivalent(ctx.data, j[1], led, j[0], benchmark=bench, **kw), jobs)
    lay = LAYOUTS["cost_equivalent"]
    rows = []
    for v in dict.fromkeys(j[0] for j in jobs):
        fits = [r.fit for (jv, _), r in zip(jobs, res) if jv is v]
        qs = _qvalues(fits, ("T_any", "T_GK", "tau100"))
        rows += [regression_row(f, lay, q, variant=v.value) for f, q in zip(fits, qs)]
    return [ctx.emit("cost_equivalent", rows)]


def cmd_tce(ctx: RunContext) -> list[Path]:
    kw = _analysis_kwargs(ctx)
    led = ctx.ledgers(required=False) or None
    specs = _household_outcomes(ctx)
    fits = ctx.map(lambda o: estimators.tce(ctx.data, o, ledgers=led, **kw), specs)
    paths = [_regression_table(ctx, "tce", fits)]
    if led:
        bfits = ctx.map(lambda o: estimators.benchmarked_tce(ctx.data, o, led, **kw).fit, specs)
        paths.append(_regression_table(ctx, "tce_benchmarked", bfits))
    return paths


def cost_rows(ledgers) -> list[dict]:
    bench = costing.default_benchmark(ledgers)
    rows = []
    for arm in ARM_ORDER:
        if arm not in ledgers:
            continue
        led = ledgers[arm]
        cpe = costing.cost_per_eligible(led)
        rows.append(
            {
                "arm": arm.value,
                "cost_per_beneficiary": led.cost_per_beneficiary,
                "averted_share": led.averted_share,
                "compliance_eligible": led.compliance_eligible,
                "compliance_population": led.compliance_population,
                "cost_per_eligible": cpe,
                "cost_per_village_household": costing.cost_per_village_household(led),
                "tau": cpe - bench if arm.is_cash else 0.0,
            }
        )
    return rows


def cmd_bcr(ctx: RunContext) -> list[Path]:
    led = ctx.ledgers()
    paths = [ctx.emit("cost_ledger", cost_rows(led))]
    kw = _analysis_kwargs(ctx)
    fits = ctx.map(lambda o: estimators.itt(ctx.data, o, **kw), ctx.outcomes)
    costs = estimators.term_costs(led)
    rows = []
    for res in fits:
        b = estimators.bcr_row(res, costs)
        row = {"outcome": b.outcome, "family": b.family}
        for t in estimators.POOLED_TERMS:
            row[f"bcr[{t}]"] = b.bcr[t]
            row[f"bcr[{t}]_se"] = b.se[t]
        row.update({f"p[{k}]": v for k, v in b.pvalues.items()})
        rows.append(row)
    paths.append(ctx.emit("bcr", rows))
    return paths


def cmd_spillover(ctx: RunContext) -> list[Path]:
    led = ctx.ledgers(required=False) or None
    controls = tuple(ctx.cfg.analysis.controls)
    fits = ctx.map(lambda o: estimators.spillover(ctx.data, o, ledgers=led, controls=controls),
                   _household_outcomes(ctx))
    return [_regression_table(ctx, "spillover", fits)]


def cmd_modality(ctx: RunContext) -> list[Path]:
    controls = tuple(ctx.cfg.analysis.controls)
    fits = ctx.map(lambda o: estimators.lumpsum_flow(ctx.data, o, controls=controls), ctx.outcomes)
    return [_regression_table(ctx, "lumpsum_flow", fits)]


def cmd_choice(ctx: RunContext) -> list[Path]:
    controls = tuple(ctx.cfg.analysis.controls)
    fits = ctx.map(lambda o: estimators.choice_effect(ctx.data, o, controls=controls), ctx.outcomes)
    return [_regression_table(ctx, "choice", fits)]


def cmd_hetero(ctx: RunContext) -> list[Path]:
    mods = ctx.cfg.analysis.moderators
    if not mods:
        raise ConfigError("hetero needs analysis.moderators")
    controls = tuple(ctx.cfg.analysis.controls)
    # child-specific moderators pair only with individual-level outcomes
    jobs = [(m, o) for m in mods for o in ctx.outcomes
            if m not in CHILD_MODERATORS or o.level is Level.INDIVIDUAL]
    fits = ctx.map(lambda j: estimators.prespecified_heterogeneity(ctx.data, j[1], j[0], controls=controls), jobs)
    lay = LAYOUTS["heterogeneity"]
    terms = [c.name for c in lay.columns if f"{c.name}_q" in lay.header]
    rows = []
    for m in mods:
        sub = [f for (jm, _), f in zip(jobs, fits) if jm is m]
        rows += [regression_row(f, lay, q, moderator=m.value) for f, q in zip(sub, _qvalues(sub, terms))]
    return [ctx.emit("heterogeneity", rows)]


@dataclass
class ForestRun:
    predictions: dict[str, np.ndarray]
    row_ids: np.ndarray
    control_sd: dict[str, float]


def run_forests(ctx: RunContext) -> ForestRun:
    """GD-Main versus Gikuriro CATEs for each configured outcome on one shared sample."""
    fc = ctx.cfg.analysis.forest
    if not fc.outcomes or not fc.moderators:
        raise ConfigError("forest needs analysis.forest.outcomes and analysis.forest.moderators")
    data = ctx.data
    hh = data.households
    elig = hh[hh["stratum"] == Stratum.ELIGIBLE.value]
    sample = elig[elig["arm"].isin([Arm.GIKURIRO.value] + [a.value for a in GD_MAIN_ARMS])]
    cols = [f"{o}__el" for o in fc.outcomes]
    sample = sample[sample[cols + fc.moderators + fc.covariates].notna().all(axis=1)]
    ctrl = elig[elig["arm"] == Arm.CONTROL.value]
    treated = sample["arm"].isin([a.value for a in GD_MAIN_ARMS]).to_numpy(float)
    w = (sample["sampling_weight"] * sample["tracking_weight"]).to_numpy(float)
    cfg = fc.config(ctx.seed, ctx.threads)
    preds, sds = {}, {}
    for o in fc.outcomes:
        covs = sample[fc.covariates].copy()
        if f"{o}__bl" in sample:
            covs[f"{o}__bl"] = sample[f"{o}__bl"].fillna(sample[f"{o}__bl"].mean())
        r = forest.residualize(sample[f"{o}__el"].to_numpy(float), treated, covs, w, sample["block_id"].to_numpy())
        model = forest.fit_forest(r, sample[fc.moderators], cfg)
        preds[o] = model.predict(sample[fc.moderators])
        sd = float(ctrl[f"{o}__el"].std(ddof=0))
        sds[o] = sd if sd > 0 else 1.0
    return ForestRun(preds, sample["household_id"].astype(str).to_numpy(), sds)


def cmd_forest(ctx: RunContext) -> list[Path]:
    fr = run_forests(ctx)
    rows = [{"outcome": o, "row_id": rid, "cate": float(v)} for o, p in fr.predictions.items()
            for rid, v in zip(fr.row_ids, p)]
    paths = [ctx.emit("cate_predictions", rows)]
    corr_rows = []
    if len(fr.predictions) > 1:
        C = forest.cross_outcome_correlation(fr.predictions)
        corr_rows = [{"outcome": a, "with": b, "correlation": float(C.loc[a, b])} for a in C.index for b in C.columns]
    paths.append(ctx.emit("cate_correlation", corr_rows))
    rep = forest.targeting_gains(fr.predictions, standardizer=fr.control_sd)
    trows = [{"policy": k, "gain": g, "share_cash": float(np.mean(rep.assignments[k]))}
             for k, g in rep.outcome_gains.items()]
    trows.append({"policy": "mean_of_outcomes", "gain": rep.mean_outcome_gain, "share_cash": None})
    trows.append({"policy": "composite", "gain": rep.composite_gain,
                  "share_cash": float(np.mean(rep.assignments["composite"]))})
    paths.append(ctx.emit("targeting", trows))
    return paths


def cmd_attrition(ctx: RunContext) -> list[Path]:
    levels = ctx.cfg.analysis.attrition_levels
    fits = ctx.map(lambda lv: estimators.attrition_regression(ctx.data, lv), levels)
    lay = LAYOUTS["attrition"]
    rows = [regression_row(f, lay, None, level=lv) for f, lv in zip(fits, levels)]
    return [ctx.emit("attrition", rows)]


def _descriptor(ctx: RunContext, spec: simlab.DgpSpec) -> simlab.EstimatorDescriptor:
    sim = ctx.cfg.simulation
    o = spec.outcomes[0]
    ospec = OutcomeSpec(o.name)
    led = spec.ledgers
    if sim.estimator == "ce":
        def run(data):
            r = estimators.cost_equivalent(data, ospec, led, sim.variant)
            return simlab.fit_estimates(r.fit, ("T_GK", "T_any")), {}
        truth = {"T_GK": o.effects.gk_offset} if o.effects.cash_at_benchmark is not None else {}
        return simlab.EstimatorDescriptor("cost_equivalent", run, truth)
    if sim.estimator == "itt":
        def run(data):
            return simlab.fit_estimates(estimators.itt(data, ospec), estimators.POOLED_TERMS), {}
        truth = {"T_GK": o.effects.arm_effect(Arm.GIKURIRO, led),
                 "T_GDLarge": o.effects.arm_effect(Arm.GD_LARGE, led)}
        return simlab.EstimatorDescriptor("itt", run, truth)

    def run(data):
        res = estimators.itt(data, ospec, ledgers=led)
        return simlab.fit_estimates(res, estimators.POOLED_TERMS), {k: v[1] for k, v in res.tests.items()}
    return simlab.EstimatorDescriptor("ratio_test", run)


def mc_rows(rep: simlab.McReport) -> list[dict]:
    rows = [
        {"parameter": r.parameter, "kind": "estimate", "truth": r.truth, "mean": r.mean, "bias": r.bias,
         "sd": r.sd, "mc_se": r.mc_se, "mean_se": r.mean_se, "coverage": r.coverage,
         "rejection_rate": r.reject_null, "n": r.n}
        for r in rep.rows.itertuples(index=False)
    ]
    rows += [{"parameter": r.test, "kind": "test", "rejection_rate": r.rejection_rate, "n": r.n}
             for r in rep.tests.itertuples(index=False)]
    return rows


def _write_frame(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        df.to_csv(fh, index=False, lineterminator="\n")
    return path


def _dgp_spec(ctx: RunContext) -> simlab.DgpSpec:
    if ctx.cfg.dgp is None:
        raise ConfigError("this command needs a dgp section")
    return ctx.cfg.dgp.spec(ctx.cfg.ledgers())


def cmd_simulate(ctx: RunContext) -> list[Path]:
    spec = _dgp_spec(ctx)
    data = ctx.data
    paths = [
        _write_frame(data.design.village_frame(), ctx.out / "villages.csv"),
        _write_frame(data.households, ctx.out / "households.csv"),
    ]
    if data.individuals is not None:
        paths.append(_write_frame(data.individuals, ctx.out / "individuals.csv"))
    reps = ctx.cfg.simulation.reps
    if reps > 0:
        rep = simlab.monte_carlo(spec, _descriptor(ctx, spec), reps, seed=ctx.seed, n_jobs=ctx.threads)
        click.echo(rep.summary(), nl=False)
        paths.append(ctx.emit("monte_carlo", mc_rows(rep)))
    return paths


def cmd_power(ctx: RunContext) -> list[Path]:
    sim = ctx.cfg.simulation
    spec = _dgp_spec(ctx) if ctx.cfg.dgp is not None else simlab.power_spec()
    if spec.design_seed is None:
        spec = replace(spec, design_seed=ctx.seed)
    variants = [v.value for v in sim.power_variants]
    if "Linear" not in variants:
        variants.insert(0, "Linear")
    study = simlab.interpolation_power_study(spec, sim.power_reps, variants=variants, seed=ctx.seed)
    rows = [dict(r._asdict(), reference_ratio=IMPLIED_CUBIC_RATIO if r.variant == "Cubic" else None)
            for r in study.table().itertuples(index=False)]
    for r in rows:
        click.echo(f"{r['variant']:<10} analytic ratio {r['analytic_ratio']:.3f}  MC ratio {r['mc_ratio']:.3f}")
    return [ctx.emit("power", rows)]


def cmd_report(ctx: RunContext) -> list[Path]:
    data = ctx.data
    hh = data.households
    out = ctx.out / "figures"
    paths = []
    if "transfer_usd" in hh:
        got = hh[hh["complied"].astype(bool) & hh["arm"].isin([a.value for a in GD_ARMS])]
        vf = data.design.village_frame()
        actual = {a.value: got.loc[got["arm"] == a.value, "transfer_usd"].to_numpy(float) for a in GD_ARMS}
        actual = {k: v for k, v in actual.items() if v.size}
        assigned = {a: float(vf.loc[vf["arm"] == a, "assigned_transfer"].mean()) for a in actual}
        if actual:
            figures.transfer_box_plot(actual, assigned, out / "transfers.svg")
            paths.append(out / "transfers.svg")
    led = ctx.ledgers(required=False)
    if led and ctx.outcomes:
        o = ctx.outcomes[0]
        res = estimators.itt(data, o, granular=True, **_analysis_kwargs(ctx))
        ce = estimators.cost_equivalent(data, o, led, CeVariant.LINEAR, **_analysis_kwargs(ctx))
        terms = {"T_GK": Arm.GIKURIRO, "T_GDLower": Arm.GD_LOWER, "T_GDMiddle": Arm.GD_MIDDLE,
                 "T_GDUpper": Arm.GD_UPPER, "T_GDLarge": Arm.GD_LARGE}
        costs = {a.value: costing.cost_per_eligible(led[a]) for a in terms.values()}
        effects = {a.value: float(res.params[t]) for t, a in terms.items()}
        grid = np.linspace(0.0, max(costs.values()), 41)
        figures.ce_vs_ceff(costs, effects, Arm.GIKURIRO.value, [(float(g), ce.predict_cash(g)) for g in grid],
                           out / "ce_vs_ceff.svg")
        paths.append(out / "ce_vs_ceff.svg")
    fg = ctx.cfg.analysis.food_groups
    if fg:
        elig = hh[hh["stratum"] == Stratum.ELIGIBLE.value]
        shares = {}
        for g in fg:
            ok = elig[g].notna()
            shares[g] = {}
            for arm in ARM_ORDER:
                m = ok & (elig["arm"] == arm.value)
                if m.any():
                    w = (elig.loc[m, "sampling_weight"] * elig.loc[m, "tracking_weight"]).to_numpy(float)
                    shares[g][arm.value] = float(np.sum(w * elig.loc[m, g].to_numpy(float)) / w.sum())
        figures.share_bars(shares, out / "food_groups.svg")
        paths.append(out / "food_groups.svg")
    fc = ctx.cfg.analysis.forest
    if fc.outcomes and fc.moderators:
        fr = run_forests(ctx)
        figures.cdf_plot({k: forest.cate_cdf(v) for k, v in fr.predictions.items()}, out / "cate_cdf.svg")
        paths.append(out / "cate_cdf.svg")
    return paths


COMMANDS: dict[str, Callable[[RunContext], list[Path]]] = {
    "validate": cmd_validate,
    "itt": cmd_itt,
    "ce": cmd_ce,
    "tce": cmd_tce,
    "bcr": cmd_bcr,
    "spillover": cmd_spillover,
    "modality": cmd_modality,
    "choice": cmd_choice,
    "hetero": cmd_hetero,
    "forest": cmd_forest,
    "attrition": cmd_attrition,
    "simulate": cmd_simulate,
    "power": cmd_power,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# entry points


def error_record(exc: BaseException, command: str, code: int) -> dict:
    return {
        "status": "error",
        "command": command,
        "exit_code": code,
        "kind": "validation" if code == EXIT_VALIDATION else "estimation",
        "error": type(exc).__name__,
        "message": str(exc),
    }


def classify(exc: BaseException) -> int:
    if isinstance(exc, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    return EXIT_ESTIMATION


def run(command: str, config: str | Path | None, *, seed: int | None = None, out: str | Path | None = None,
        threads: int = 1, variant: str | None = None) -> int:
    """Execute one command; returns the process exit code."""
    out_dir = Path(out) if out is not None else None
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        config = config or os.environ.get(CONFIG_ENV)
        if not config:
            raise ConfigError(f"no config given (use --config or set {CONFIG_ENV})")
        cfg = load_config(config)
        out_dir = out_dir or Path(cfg.output_dir)
        ctx = RunContext(cfg, out_dir, cfg.seed if seed is None else seed, max(1, threads), variant)
        COMMANDS[command](ctx)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        code = classify(exc)
        rec = error_record(exc, command, code)
        click.echo(json.dumps(rec, sort_keys=True), err=True)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(rec, sort_keys=True, indent=2) + "\n")
        return code


def _common(f):
    f = click.option("--variant", default=None, help="cost-equivalent variant (Linear, Cubic, DropLarge, ...)")(f)
    f = click.option("--threads", default=1, show_default=True, type=int, help="parallel estimator tasks")(f)
    f = click.option("--out", "out", default=None, type=click.Path(file_okay=False), help="output directory")(f)
    f = click.option("--seed", default=None, type=int, help="override the config seed")(f)
    f = click.option("--config", "config", default=None, envvar=CONFIG_ENV, type=click.Path(dir_okay=False),
                     help=f"YAML run config (default: ${CONFIG_ENV})")(f)
    return f


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Cost-benchmarking analyses for cluster-randomized cash versus in-kind trials."""


def _make(name: str):
    @main.command(name, help=(COMMANDS[name].__doc__ or f"Run the {name} analysis.").strip().split("\n")[0])
    @_common
    def _cmd(config, seed, out, threads, variant):
        sys.exit(run(name, config, seed=seed, out=out, threads=threads, variant=variant))

    return _cmd


for _name in COMMANDS:
    _make(_name)


if __name__ == "__main__":  # pragma: no cover
    main()
