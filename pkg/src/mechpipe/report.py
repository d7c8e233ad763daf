"""Report assembly: a structured document in which every numeric value is
paired with the ledger record it came from, a self-contained HTML page, a
delimited run table, and rendered figures.
"""

from __future__ import annotations

import csv
import html
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from .ledger import ContextLedger
from .orchestrator import RunStatistics


def traced(value: float, record_seq: int) -> dict:
    """A report numeric: value plus the ledger record it traces to."""
    return {"value": value, "record": record_seq}


def _seq_of(ledger: ContextLedger, kind: str, predicate=None) -> int:
    last = None
    for record in ledger.records():
        if record.kind == kind and (predicate is None or predicate(record)):
            last = record.seq
    if last is None:
        raise KeyError(f"no ledger record of kind {kind!r}")
    return last


def build_report(
    ledger: ContextLedger,
    statistics: RunStatistics,
    verdict: str,
    analytic_only: bool = False,
) -> dict:
    view = ledger.snapshot()
    extraction = view.last_of_kind("extraction")
    bounds = view.last_of_kind("bounds")
    bc = view.last_of_kind("bc-spec")
    run_records = [r for r in view.by_kind("run-result")]
    uncertainty = next(
        r for r in view.by_kind("assessment") if r.payload.get("stage") == "uncertainty"
    )
    compliance = next(
        r for r in view.by_kind("assessment") if r.payload.get("stage") == "compliance"
    )
    mesh_review = next(
        (r for r in view.by_kind("assessment") if r.payload.get("stage") == "mesh-review"), None
    )
    gate_records = view.by_kind("gate-outcome")
    warnings = [r.payload for r in view.by_kind("warning")]

    extraction_rows = []
    for name, est in extraction.payload["parameters"].items():
        extraction_rows.append(
            {
                "name": name,
                "value": traced(est["value"], extraction.seq),
                "band": [
                    traced(est["band"][0], extraction.seq),
                    traced(est["band"][1], extraction.seq),
                ],
                "unit": est.get("unit", ""),
                "band_kind": est.get("band_kind", ""),
            }
        )

    run_rows = []
    for record in run_records:
        doc = record.payload
        run_rows.append(
            {
                "run_id": doc["spec"]["run_id"],
                "bc_variant": doc["spec"]["bc_variant"],
                "load_case": doc["spec"]["load_case"],
                "mesh_variant": doc["spec"]["mesh_variant"],
                "thickness_mm": traced(doc["spec"]["thickness"], record.seq),
                "peak_vm_stress_MPa": traced(doc["peak_vm_stress"], record.seq),
                "engineering_bend_stress_MPa": traced(doc["engineering_bend_stress"], record.seq),
                "max_deflection_mm": traced(doc["max_deflection"], record.seq),
            }
        )

    sign_off = [
        {"gate": r.payload["gate_id"], "level": r.payload["level"], "warnings": r.payload["warnings"]}
        for r in gate_records
        if r.payload["level"] != "PASS"
    ]

    stats_seq = _seq_of(ledger, "trace")
    report = {
        "title": "Structural assessment report",
        "mode": "analytic-only (no recorded solver runs)" if analytic_only else "fixture replay",
        "verdict": verdict,
        "inputs": {
            "metadata": extraction.payload.get("metadata", {}),
            "dominant_material": extraction.payload.get("dominant_material"),
        },
        "extraction": {"rows": extraction_rows, "warnings": extraction.payload["warnings"]},
        "geometry_audit": (dict(mesh_review.payload) if mesh_review else None),
        "bounds": {
            "stress_MPa": [
                traced(bounds.payload["stress"]["lo"], bounds.seq),
                traced(bounds.payload["stress"]["hi"], bounds.seq),
            ],
            "deflection_mm": [
                traced(bounds.payload["deflection"]["lo"], bounds.seq),
                traced(bounds.payload["deflection"]["hi"], bounds.seq),
            ],
            "working": bounds.payload["working"],
        },
        "run_matrix": run_rows,
        "uncertainty": {
            "envelopes": uncertainty.payload["envelopes"],
            "yield_range_fos": [
                traced(v, uncertainty.seq) for v in uncertainty.payload["yield_range_fos"]
            ],
            "range_factors": {
                k: traced(v, uncertainty.seq)
                for k, v in uncertainty.payload["range_factors"].items()
            },
            "ranking": uncertainty.payload["uncertainty_ranking"],
        },
        "compliance": {
            "baseline_checks": compliance.payload["baseline_checks"],
            "max_safe_load_N": traced(compliance.payload["max_safe_load_N"], compliance.seq),
            "governing_limit": compliance.payload["governing_limit"],
            "redesign": compliance.payload["redesign"],
            "scaling_comparison": compliance.payload["scaling_comparison"],
        },
        "sign_off": {"gate_warnings": sign_off, "other_warnings": warnings},
        "statistics": {**statistics.to_doc(), "record": stats_seq},
        "reproducibility": {
            "limits": bc.payload["limits"],
            "ledger_records": len(ledger),
        },
    }
    return report


# ---------------------------------------------------------------------------
# Traceability validation
# ---------------------------------------------------------------------------


def _payload_contains(payload: Any, value: float, rel_tol: float = 1e-9) -> bool:
    if isinstance(payload, (int, float)) and not isinstance(payload, bool):
        return math.isclose(float(payload), value, rel_tol=rel_tol, abs_tol=1e-12)
    if isinstance(payload, Mapping):
        return any(_payload_contains(v, value, rel_tol) for v in payload.values())
    if isinstance(payload, (list, tuple)):
        return any(_payload_contains(v, value, rel_tol) for v in payload)
    return False


def validate_traceability(report: Mapping, ledger: ContextLedger) -> list[str]:
    """Walk the report; every {value, record} pair must name an existing
    ledger record whose payload contains the value.  Returns violations."""
    problems: list[str] = []

    def walk(node: Any, path: str) -> None:
        if isinstance(node, Mapping):
            if set(node) == {"value", "record"}:
                seq = node["record"]
                if not isinstance(seq, int) or not 0 <= seq < len(ledger):
                    problems.append(f"{path}: record {seq!r} out of range")
                elif isinstance(node["value"], (int, float)) and not _payload_contains(
                    ledger.snapshot().get(seq).payload, float(node["value"])
                ):
                    problems.append(
                        f"{path}: value {node['value']} not found in record {seq}"
                    )
                return
            for key, child in node.items():
                walk(child, f"{path}.{key}")
        elif isinstance(node, (list, tuple)):
            for i, child in enumerate(node):
                walk(child, f"{path}[{i}]")

    walk(report, "report")
    return problems


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_STYLE = """
body { font-family: Georgia, serif; margin: 2rem auto; max-width: 60rem; color: #222; }
h1, h2 { color: #1a3a5c; }
table { border-collapse: collapse; margin: 1rem 0; }
th, td { border: 1px solid #999; padding: 0.3rem 0.6rem; text-align: right; }
th { background: #e8eef4; }
td.l, th.l { text-align: left; }
.fail { color: #a02020; font-weight: bold; }
.pass { color: #207020; font-weight: bold; }
.cond { color: #b07010; font-weight: bold; }
.warn { background: #fff6e0; padding: 0.5rem 1rem; border-left: 4px solid #b07010; }
"""


def _verdict_css(verdict: str) -> str:
    if "FAIL" in verdict or "reject" in verdict.lower():
        return "fail"
    if "COND" in verdict.upper() or "conditional" in verdict:
        return "cond"
    return "pass"


def _num(node: Any) -> str:
    if isinstance(node, Mapping) and "value" in node:
        node = node["value"]
    return f"{node:g}" if isinstance(node, (int, float)) else html.escape(str(node))


def render_html(report: Mapping, generated_at: str | None = None) -> str:
    if generated_at is None:
        generated_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    e = html.escape
    rows = []
    rows.append(f"<h1>{e(report['title'])}</h1>")
    rows.append(
        f"<p>Mode: {e(report['mode'])} &mdash; verdict "
        f"<span class='{_verdict_css(report['verdict'])}'>{e(report['verdict'])}</span></p>"
    )

    rows.append("<h2>Extraction</h2><table><tr><th class='l'>Parameter</th>"
                "<th>Value</th><th>Band</th><th class='l'>Unit</th></tr>")
    for row in report["extraction"]["rows"]:
        rows.append(
            f"<tr><td class='l'>{e(row['name'])}</td><td>{_num(row['value'])}</td>"
            f"<td>[{_num(row['band'][0])}, {_num(row['band'][1])}]</td>"
            f"<td class='l'>{e(row['unit'])}</td></tr>"
        )
    rows.append("</table>")

    rows.append("<h2>Analytical bounds</h2>")
    b = report["bounds"]
    rows.append(
        f"<p>Bend stress [{_num(b['stress_MPa'][0])}, {_num(b['stress_MPa'][1])}] MPa; "
        f"deflection [{_num(b['deflection_mm'][0])}, {_num(b['deflection_mm'][1])}] mm.</p>"
    )

    rows.append("<h2>Run matrix</h2><table><tr><th class='l'>Run</th><th class='l'>BC</th>"
                "<th class='l'>Load case</th><th>t (mm)</th><th>Peak VM (MPa)</th>"
                "<th>Eng. bend (MPa)</th><th>Deflection (mm)</th></tr>")
    for row in report["run_matrix"]:
        rows.append(
            f"<tr><td class='l'>{e(row['run_id'])}</td><td class='l'>{e(row['bc_variant'])}</td>"
            f"<td class='l'>{e(row['load_case'])}</td><td>{_num(row['thickness_mm'])}</td>"
            f"<td>{_num(row['peak_vm_stress_MPa'])}</td>"
            f"<td>{_num(row['engineering_bend_stress_MPa'])}</td>"
            f"<td>{_num(row['max_deflection_mm'])}</td></tr>"
        )
    rows.append("</table>")

    rows.append("<h2>Compliance</h2><table><tr><th class='l'>Check</th><th>Value</th>"
                "<th>Limit</th><th class='l'>Verdict</th><th>FoS</th></tr>")
    for check in report["compliance"]["baseline_checks"]:
        rows.append(
            f"<tr><td class='l'>{e(check['name'])}</td><td>{check['value']:g}</td>"
            f"<td>{check['limit']:g}</td>"
            f"<td class='l {_verdict_css(check['verdict'])}'>{e(check['verdict'])}</td>"
            f"<td>{e(check['fos_display'])}</td></tr>"
        )
    rows.append("</table>")
    rows.append(
        f"<p>Maximum safe load {_num(report['compliance']['max_safe_load_N'])} N, governed by "
        f"{e(report['compliance']['governing_limit'])}.</p>"
    )
    for redesign in report["compliance"]["redesign"]:
        rows.append(
            f"<h2>Redesign: {e(redesign['proposal']['label'])}</h2>"
            f"<p>Worst verdict <span class='{_verdict_css(redesign['verdict'])}'>"
            f"{e(redesign['verdict'])}</span></p>"
        )
        rows.append("<table><tr><th class='l'>Run</th><th class='l'>Check</th><th>Value</th>"
                    "<th>Limit</th><th class='l'>Verdict</th><th>FoS</th></tr>")
        for run_id, checks in redesign["checks_by_run"].items():
            for check in checks:
                rows.append(
                    f"<tr><td class='l'>{e(run_id)}</td><td class='l'>{e(check['name'])}</td>"
                    f"<td>{check['value']:g}</td><td>{check['limit']:g}</td>"
                    f"<td class='l {_verdict_css(check['verdict'])}'>{e(check['verdict'])}</td>"
                    f"<td>{e(check['fos_display'])}</td></tr>"
                )
        rows.append("</table>")

    rows.append("<h2>Warnings for sign-off</h2>")
    for entry in report["sign_off"]["gate_warnings"]:
        body = "; ".join(entry["warnings"]) or entry["level"]
        rows.append(f"<div class='warn'><b>{e(entry['gate'])}</b> ({e(entry['level'])}): {e(body)}</div>")

    stats = report["statistics"]
    rows.append("<h2>Run statistics</h2>")
    rows.append(
        f"<p>{stats['agents_invoked']} agents, {stats['tool_calls']} tool calls, "
        f"{stats['total_tokens']} tokens ({stats['tokens_in']} in / {stats['tokens_out']} out), "
        f"{stats['wall_clock_s']:.0f} s recorded wall clock, "
        f"{stats['files_generated']} files. Estimated cost: "
        + ", ".join(f"{k} ${v:.2f}" for k, v in stats["costs"].items())
        + ".</p>"
    )

    rows.append(f"<p><small>Generated {e(generated_at)}</small></p>")
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        f"<title>{e(report['title'])}</title><style>{_STYLE}</style></head><body>"
        + "".join(rows)
        + "</body></html>\n"
    )


def write_runs_csv(report: Mapping, path: Path) -> None:
    fields = [
        "run_id",
        "bc_variant",
        "load_case",
        "mesh_variant",
        "thickness_mm",
        "peak_vm_stress_MPa",
        "engineering_bend_stress_MPa",
        "max_deflection_mm",
    ]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in report["run_matrix"]:
            writer.writerow(
                {k: (row[k]["value"] if isinstance(row[k], Mapping) else row[k]) for k in fields}
            )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_figures(report: Mapping, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []

    base_rows = [r for r in report["run_matrix"] if not r["run_id"].endswith("_rd")]
    ids = [r["run_id"] for r in base_rows]
    peaks = [r["peak_vm_stress_MPa"]["value"] for r in base_rows]
    defls = [r["max_deflection_mm"]["value"] for r in base_rows]
    stress_lo = report["bounds"]["stress_MPa"][0]["value"]
    stress_hi = report["bounds"]["stress_MPa"][1]["value"]
    yield_mpa = report["reproducibility"]["limits"]["yield_strength"]
    gamma = report["reproducibility"]["limits"]["gamma"]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.bar(ids, peaks, color="#4878a8")
    ax1.axhline(yield_mpa, color="#a02020", ls="--", lw=1, label=f"yield {yield_mpa:g} MPa")
    ax1.axhline(yield_mpa / gamma, color="#b07010", ls="--", lw=1, label="allowable")
    ax1.axhspan(stress_lo, stress_hi, color="#777777", alpha=0.15, label="analytic bounds")
    ax1.set_ylabel("peak VM stress (MPa)")
    ax1.legend(fontsize=8)
    ax2.bar(ids, defls, color="#6a9a58")
    arm_length = next(
        r["value"]["value"] for r in report["extraction"]["rows"] if r["name"] == "arm_length"
    )
    defl_limit = arm_length / report["reproducibility"]["limits"]["span_ratio"]
    ax2.axhline(defl_limit, color="#a02020", ls="--", lw=1, label=f"limit {defl_limit:g} mm")
    ax2.set_ylabel("max deflection (mm)")
    ax2.legend(fontsize=8)
    fig.suptitle("Run matrix")
    fig.tight_layout()
    path = out_dir / "run_matrix.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)

    rows = report["extraction"]["rows"]
    names = [r["name"] for r in rows]
    values = [r["value"]["value"] for r in rows]
    lows = [r["value"]["value"] - r["band"][0]["value"] for r in rows]
    highs = [r["band"][1]["value"] - r["value"]["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.errorbar(range(len(rows)), values, yerr=[lows, highs], fmt="o", capsize=4, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("estimate with plausibility band")
    ax.set_title("Extracted parameters")
    fig.tight_layout()
    path = out_dir / "extraction_bands.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    paths.append(path)

    return paths


def write_outputs(
    out_dir: str | Path,
    ledger: ContextLedger,
    report: Mapping,
    figures: bool = True,
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts["report_json"] = path

    path = out_dir / "report.html"
    path.write_text(render_html(report), encoding="utf-8")
    artifacts["report_html"] = path

    path = out_dir / "runs.csv"
    write_runs_csv(report, path)
    artifacts["runs_csv"] = path

    path = out_dir / "ledger.jsonl"
    ledger.save(path)
    artifacts["ledger"] = path

    path = out_dir / "statistics.json"
    path.write_text(
        json.dumps(report["statistics"], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    artifacts["statistics"] = path

    if figures:
        for fig_path in render_figures(report, out_dir / "figures"):
            artifacts[fig_path.stem] = fig_path
    return artifacts
