"""Deterministic CSV / markdown rendering of evaluation reports."""
from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal

from ..metrics import EvalReport


class ReportError(ValueError):
    pass


def fmt_fixed(x, places):
    """Decimal rounding of the shortest repr, halves away from zero: 23.345 -> '23.35'."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def render_csv(report):
    if not report.categories:
        raise ReportError("report has no categories")
    lines = ["category,count,psnr,ssim"]
    for cat, s in report.categories.items():
        lines.append(f"{cat},{s.count},{fmt_fixed(s.psnr, 2)},{fmt_fixed(s.ssim, 4)}")
    total = sum(s.count for s in report.categories.values())
    lines.append(f"Average,{total},{fmt_fixed(report.overall_psnr, 2)},{fmt_fixed(report.overall_ssim, 4)}")
    return "\n".join(lines) + "\n"


def render_markdown(report):
    if not report.categories:
        raise ReportError("report has no categories")
    cats = list(report.categories)
    head = ["Metric"] + cats + ["Average"]
    psnr = ["PSNR"] + [fmt_fixed(report.categories[c].psnr, 2) for c in cats] + [fmt_fixed(report.overall_psnr, 2)]
    ssim = ["SSIM"] + [fmt_fixed(report.categories[c].ssim, 4) for c in cats] + [fmt_fixed(report.overall_ssim, 4)]
    rows = [head, ["---"] * len(head), psnr, ssim]
    return "\n".join("| " + " | ".join(r) + " |" for r in rows) + "\n"


def emit_report(report: EvalReport, fmt, path):
    if fmt == "csv":
        text = render_csv(report)
    elif fmt in ("markdown", "md"):
        text = render_markdown(report)
    else:
        raise ReportError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return text
