"""Aligned plain-text tables: estimate row, then a bracketed interval row."""

from __future__ import annotations

import json
import math

import numpy as np


def _num(x, digits=4) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "."
    return f"{x:.{digits}f}"


def _stars(p) -> str:
    if p is None or not math.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def render_table(title: str, columns: list[str], rows: list[tuple[str, list[str]]], notes: list[str] = ()) -> str:
    widths = [max(len(r[0]) for r in rows + [("", [])])] if rows else [0]
    widths[0] = max(widths[0], 12)
    for j, col in enumerate(columns):
        w = len(col)
        for _, cells in rows:
            if j < len(cells):
                w = max(w, len(cells[j]))
        widths.append(w)
    line = "-" * (sum(widths) + 2 * len(widths))
    out = [title, line, "".ljust(widths[0] + 2) + "  ".join(c.rjust(w) for c, w in zip(columns, widths[1:])), line]
    for label, cells in rows:
        out.append(label.ljust(widths[0] + 2) + "  ".join(c.rjust(w) for c, w in zip(cells, widths[1:])))
    out.append(line)
    out.extend(notes)
    return "\n".join(out) + "\n"


def regression_rows(fits: dict, names: list[str]) -> list[tuple[str, list[str]]]:
    """Coefficient with stars, then its standard error in parentheses."""
    rows = []
    for nm in names:
        est, se = [], []
        for fit in fits.values():
            if fit is not None and nm in fit.coefficients.index:
                est.append(_num(float(fit.coefficients[nm])) + _stars(float(fit.pvalues[nm])))
                se.append(f"({_num(float(fit.bse[nm]))})")
            else:
                est.append("")
                se.append("")
        rows.append((nm, est))
        rows.append(("", se))
    return rows


def estimation_text(report) -> str:
    cfg = report.config
    fits = {"First stage": report.first_stage, "Reduced form": report.reduced_form, "OLS": report.ols, "IV": report.iv, "Calibrated IV": report.calibrated}
    names = [*cfg.instruments, cfg.friends, cfg.education, *cfg.controls]
    rows = regression_rows(fits, names)
    rows.append(("Observations", [str(f.n_obs) for f in fits.values()]))
    rows.append(("Clusters", [str(f.n_clusters) for f in fits.values()]))
    head = render_table(
        "Regressions",
        list(fits),
        rows,
        [f"Clustered standard errors in parentheses; calibrated IV fixes the education return at {cfg.calibrated_r:g}."],
    )
    return head + "\n" + bounds_text(report.bounds)


def bounds_text(bounds) -> str:
    spec = bounds.spec
    names = [n for n in bounds.table.index if n in spec.base.endogenous or n in spec.base.exogenous]
    rows = []
    for nm in names:
        r = bounds.table.loc[nm]
        rows.append((nm, [_num(r["theta_lower"]), _num(r["theta_upper"])]))
        rows.append(("", [f"[{_num(r['ci_lower'])}", f"{_num(r['ci_upper'])}]"]))
    notes = [
        f"Education return assumed in [{spec.r_lower:g}, {spec.r_upper:g}]; "
        f"{100 * (1 - spec.alpha):g}% Imbens-Manski interval in brackets.",
        f"Sign probe (education on instrumented {spec.primary}): {bounds.probe_coef:.4f} (t = {bounds.probe_t:.2f}); "
        f"upper bound for {spec.primary} reached at r_e = {bounds.primary_upper_at:g}.",
        f"Observations: {bounds.n_obs}; clusters: {bounds.n_clusters}.",
    ]
    return render_table("Bounds", ["Lower", "Upper"], rows, notes)


def diagnostics_text(report: dict) -> str:
    parts = []
    pl = report["placebo"]["per_variable"]
    rows = [(k, [_num(v["coef"]), f"({_num(v['se'])})", _num(v["p"], 3)]) for k, v in pl.items()]
    j = report["placebo"]["joint"]
    parts.append(render_table("Placebo regressions on the instrument", ["Coef", "SE", "p"], rows, [f"Joint F = {j['F']:.3f}, p = {j['p']:.3f}"]))
    rows = [(str(r["controls"]), [_num(r["sd"])]) for r in report["residual_variation"]]
    parts.append(render_table("Residual variation of the instrument", ["SD"], rows))
    rows = [
        (d["label"], [_num(d["split_point"], 3), str(d["n_high"]), str(d["n_low"]), _num(d["S_hat"], 3), _num(d["p_value"], 3)])
        for d in report["dominance"]
    ]
    parts.append(render_table("Dominance test (median split)", ["Split", "N high", "N low", "S", "p"], rows))
    return "\n".join(parts)


def mc_text(summary: dict) -> str:
    keys = [
        "reps", "succeeded", "failed", "true_r_f", "true_r_e", "ci_coverage", "bounds_coverage",
        "mean_width", "ols_bias_mean", "ols_median", "iv_median", "first_stage_negative_significant",
    ]
    rows = []
    for k in keys:
        if k in summary:
            v = summary[k]
            rows.append((k, [str(v) if isinstance(v, (int, bool, np.integer)) else _num(float(v))]))
    if "first_stage_F" in summary:
        F = summary["first_stage_F"]
        rows.append(("first_stage_F", [f"{F['median']:.1f} [{F['p10']:.1f}, {F['p90']:.1f}]"]))
    return render_table(f"Monte Carlo ({summary['dgp']} design)", ["Value"], rows)


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")
