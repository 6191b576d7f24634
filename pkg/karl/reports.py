"""Report files: CSV tables, PNG curves, acceptance checks and the PDF summary."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import mm
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)


def clean(val):
    if isinstance(val, float):
        return f"{val:.4f}" if math.isfinite(val) else str(val)
    return str(val) if val is not None and val != '' else "-"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ''

    def as_dict(self):
        return {'name': self.name, 'passed': self.passed, 'detail': self.detail}


# --- tables and plots ---

def frame(rows):
    return pd.DataFrame([row.as_dict() if hasattr(row, 'as_dict') else row for row in rows])


def write_csv(df, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


def plot_curves(series, path, xlabel, ylabel, title):
    """One line per label; ``series`` maps label -> (xs, ys)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.figure(figsize=(5, 3.5))
    for label, (xs, ys) in series.items():
        plt.plot(xs, ys, marker='o', label=str(label))
    plt.xlabel(xlabel)
    plt.ylabel(ylabel)
    plt.title(title)
    if len(series) > 1:
        plt.legend()
    plt.grid(True)
    plt.tight_layout()
    plt.savefig(path)
    plt.close()
    return path


# --- acceptance checks ---

def fixed_token_checks(reports):
    counts = sorted(reports)
    low, high = reports[counts[0]], reports[counts[-1]]
    return [
        Check('fixed-token l1 drops by 15%', high.l1_x10 <= 0.85 * low.l1_x10,
              f"l1x10 {low.l1_x10:.4f} at {counts[0]} tokens, {high.l1_x10:.4f} at {counts[-1]}"),
        Check('fixed-token ssim rises', high.ssim > low.ssim,
              f"ssim {low.ssim:.4f} -> {high.ssim:.4f}"),
    ]


def variable_token_checks(reports):
    eps_values = sorted(reports)
    tokens = [reports[e].tokens_used for e in eps_values]
    return [
        Check('one encoder and one decoder pass per image',
              all(reports[e].runs == (1.0, 1.0) for e in eps_values),
              ', '.join(f"{e}: {reports[e].runs}" for e in eps_values)),
        Check('tokens used fall as eps grows', all(b < a for a, b in zip(tokens, tokens[1:])),
              ', '.join(f"{e}: {t:.2f}" for e, t in zip(eps_values, tokens))),
    ]


def threshold_checks(reports, eps=0.05):
    checks = [Check('exceed fractions nested', all(r.is_nested() for r in reports.values()))]
    report = reports.get(eps)
    if report is not None:
        at_eps = report.frac_exceed.get(0.0, 0.0)
        at_margin = min((v for m, v in report.frac_exceed.items() if m >= 0.03 - 1e-9), default=0.0)
        checks.append(Check(f'at most 20% of masked images exceed {eps}', at_eps <= 0.2, f"{at_eps:.3f}"))
        checks.append(Check(f'at most 10% exceed {eps} + 0.03', at_margin <= 0.1, f"{at_margin:.3f}"))
    return checks


def oracle_checks(agreement, monotonicity):
    rho = agreement['spearman_rho']
    return [
        Check('median one-pass/oracle gap within one grid step', agreement['median_gap_steps'] <= 1.0,
              f"{agreement['median_abs_gap']:.1f} tokens over {agreement['n']} images"),
        Check('positive Spearman correlation', not math.isnan(rho) and rho > 0,
              f"rho {rho:.3f}, p {agreement['spearman_p']:.3g}"),
        Check('oracle error non-increasing in 95% of steps', monotonicity >= 0.95, f"{monotonicity:.3f}"),
    ]


def invariance_checks(summary):
    within = summary['within_step']
    return [Check('t_hat stable across budgets for 80% of eligible images',
                  not math.isnan(within) and within >= 0.8,
                  f"{within:.3f} of {summary['eligible']} images")]


def family_checks(ordering, deltas):
    checks = [Check('mean t_hat ordered ' + ' < '.join(ordering['families']), ordering['ordered'],
                    ', '.join(f"{f}: {m:.2f}" for f, m in zip(ordering['families'], ordering['means'])))]
    if 'noise' in deltas and 'checkerboard' in deltas:
        checks.append(Check('noise delta below checkerboard delta',
                            abs(deltas['noise']) < deltas['checkerboard'],
                            f"noise {deltas['noise']:.4f}, checkerboard {deltas['checkerboard']:.4f}"))
    return checks


def sweep_checks(standing):
    if not standing:
        return []
    return [
        Check('small encoder / large decoder never the worst cell', not standing['worst'],
              f"rank {standing['rank']} of {standing['cells']}"),
        Check('small encoder / large decoder is the best cell', standing['best'],
              f"rank {standing['rank']} of {standing['cells']}"),
    ]


# --- PDF ---

def _table(df, width=180 * mm):
    data = [list(df.columns)] + [[clean(v) for v in row] for row in df.itertuples(index=False)]
    t = Table(data, colWidths=[width / max(len(df.columns), 1)] * len(df.columns), repeatRows=1)
    t.setStyle(TableStyle([
        ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
        ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 7),
        ('ALIGN', (1, 1), (-1, -1), 'RIGHT'),
    ]))
    return t


def _checks_table(checks, style):
    data = [['Check', 'Result', 'Detail']]
    for c in checks:
        data.append([Paragraph(c.name, style), 'PASS' if c.passed else 'FAIL', Paragraph(c.detail, style)])
    t = Table(data, colWidths=[70 * mm, 20 * mm, 90 * mm])
    t.setStyle(TableStyle([
        ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
        ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
        ('VALIGN', (0, 0), (-1, -1), 'TOP'),
        ('FONTSIZE', (0, 0), (-1, -1), 8),
    ]))
    for row, c in enumerate(checks, start=1):
        t.setStyle(TableStyle([('TEXTCOLOR', (1, row), (1, row), colors.green if c.passed else colors.red)]))
    return t


def build_pdf(path, title, digest, tables=(), plots=(), checks=()):
    """Writes a report PDF; ``tables`` is a sequence of (heading, DataFrame)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = SimpleDocTemplate(str(path), pagesize=A4, leftMargin=15 * mm, rightMargin=15 * mm,
                            topMargin=15 * mm, bottomMargin=15 * mm)
    styles = getSampleStyleSheet()
    style_small = ParagraphStyle('Small', parent=styles['Normal'], fontSize=8)

    elements = [
        Paragraph(title, styles['Title']),
        Paragraph(f"Config digest: {digest}", style_small),
        Spacer(1, 5 * mm),
    ]
    for heading, df in tables:
        elements.append(Paragraph(heading, styles['Heading3']))
        elements.append(_table(df))
        elements.append(Spacer(1, 4 * mm))
    for plot in plots:
        elements.append(Image(str(plot), width=120 * mm, height=84 * mm))
        elements.append(Spacer(1, 4 * mm))
    if checks:
        elements.append(Paragraph('Acceptance checks', styles['Heading3']))
        elements.append(_checks_table(checks, style_small))

    doc.build(elements)
    logger.info(f"Wrote report {path}")
    return path
