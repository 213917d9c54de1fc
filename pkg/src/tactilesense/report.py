"""Render interrogation and characterization reports as text tables and CSV."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import ConfigError

COLUMNS = ("Target", "True Size", "Estimated Size", "Size Error", "DI", "Risk Score")
UNITS = ("", "(mm)", "(mm)", "(%)", "(x10^3)", "")


class CorruptReport(ConfigError):
    """A report file that cannot be parsed or lacks required fields."""


def load_report(path: Path | str) -> dict:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as e:
        raise CorruptReport(f"{p}: cannot read report ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise CorruptReport(f"{p}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict) or data.get("kind") not in ("interrogation", "characterization"):
        raise CorruptReport(f"{p}: not an interrogation or characterization report")
    if not isinstance(data.get("inclusions"), list):
        raise CorruptReport(f"{p}: missing 'inclusions' list")
    return data


def _num(v, fmt: str) -> str:
    return "-" if v is None else format(v, fmt)


def table_rows(report: dict) -> list[tuple[str, ...]]:
    """One row per inclusion, formatted to two decimals (DI in thousands)."""
    rows = []
    for inc in report["inclusions"]:
        try:
            target = inc.get("label") or inc.get("matched_truth") or f"#{inc['id']}"
            size = inc.get("size") or {}
            di = inc.get("DI") or {}
            rows.append((
                str(target),
                _num(inc.get("true_size_mm"), ".2f"),
                _num(size.get("D_mm"), ".2f"),
                _num(inc.get("size_error_pct"), ".2f"),
                _num(di.get("DI_e3"), ".2f"),
                _num(inc.get("risk_score"), ".3f"),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptReport(f"malformed inclusion entry {inc!r}: {e}") from e
    return rows


def render_table(report: dict) -> str:
    rows = table_rows(report)
    header = [f"{c} {u}".strip() for c, u in zip(COLUMNS, UNITS)]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = "  ".join("-" * w for w in widths)
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)), line]
    for r in rows:
        out.append("  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths))))
    extra = []
    if report.get("kind") == "interrogation":
        extra.append(f"merged inclusions: {len(report.get('merged', []))}")
        for inc in report["inclusions"]:
            if inc.get("localization_error_mm") is not None:
                extra.append(f"  #{inc['id']} -> {inc.get('matched_truth')}: "
                             f"localization error {inc['localization_error_mm']:.2f} mm")
    if report.get("di_ratio_stiff_over_soft") is not None:
        extra.append(f"DI ratio (stiff/soft): {report['di_ratio_stiff_over_soft']:.2f}")
    extra.append(f"manual operator arm: {report.get('manual_operator_arm', 'not reproducible')}")
    return "\n".join(out + [""] + extra) + "\n"


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(COLUMNS)
    wr.writerows(table_rows(report))
    return buf.getvalue()
