"""Plain-text and CSV rendering of metric reports.

Means are followed by their variance in brackets, e.g. ``18.63 (1.32)``.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass

from .metrics import METRIC_NAMES, MetricReport, ScoredField
from .taxonomy import RiskType

METRIC_HEADERS = ("BLEU4", "METEOR", "ROUGE_L", "CIDEr")


@dataclass(frozen=True)
class CellLabel:
    model_id: str
    mode: str
    sampling: str
    shots: int

    @property
    def sampling_display(self) -> str:
        return "-" if self.sampling == "None" else self.sampling

    def short(self) -> str:
        return f"{self.model_id}/{self.mode}/{self.sampling_display}/{self.shots}"


def fmt_score(sf: ScoredField | None, name: str) -> str:
    if sf is None:
        return "n/a"
    return f"{getattr(sf, name):.2f} ({sf.variance.get(name, 0.0):.2f})"


def fmt_acc(x: float) -> str:
    return f"{x:.3f}"


def _align_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: " | ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in rows)])


def _metric_cells(rep: MetricReport) -> list[str]:
    return ([fmt_score(rep.event_context, m) for m in METRIC_NAMES]
            + [fmt_acc(rep.maneuver_micro_accuracy)]
            + [fmt_score(rep.justification, m) for m in METRIC_NAMES])


def _group_header() -> list[str]:
    return ([f"EC {h}" for h in METRIC_HEADERS] + ["Micro-Accuracy"]
            + [f"J {h}" for h in METRIC_HEADERS])


def overall_table(cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    """Three column groups: event context | maneuver accuracy | justification."""
    header = ["Model", "Mode", "Sample Method", "Shot", *_group_header()]
    rows = [[c.model_id, c.mode, c.sampling_display, str(c.shots), *_metric_cells(r)] for c, r in cells]
    legend = ("EC = Event Context, J = Ego-car Maneuver Justification; "
              "values in brackets are the variances.")
    return _align_table(header, rows) + "\n" + legend


def sweep_table(model_id: str, cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    """One model's rows ordered baseline first, then sampling method by shot count."""
    order = {"None": 0, "Random": 1, "Similarity": 2}
    mine = sorted((x for x in cells if x[0].model_id == model_id),
                  key=lambda x: (x[0].mode, order.get(x[0].sampling, 9), x[0].shots))
    header = ["Model", "Mode", "Sample Method", "Shot", *_group_header()]
    rows = []
    for i, (c, r) in enumerate(mine):
        rows.append([model_id if i == 0 else "", c.mode, c.sampling_display, str(c.shots), *_metric_cells(r)])
    return _align_table(header, rows) + "\nValues in brackets are the variances."


def scenario_table(cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    header = ["Risk scenario", *(c.short() for c, _ in cells)]
    rows = []
    for rt in RiskType:
        rows.append([rt.value, *(f"{r.per_scenario_accuracy[rt]:.4f}" if rt in r.per_scenario_accuracy else "-"
                                 for _, r in cells)])
    rows.append(["Overall", *(fmt_acc(r.maneuver_micro_accuracy) for _, r in cells)])
    return _align_table(header, rows)


def overall_csv(cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = []
    for grp in ("event_context", "justification"):
        for m in METRIC_NAMES:
            cols += [f"{grp}_{m}", f"{grp}_{m}_var"]
    w.writerow(["model_id", "mode", "sampling", "shots", "n", "micro_accuracy", *cols])
    for c, r in cells:
        vals = []
        for grp in (r.event_context, r.justification):
            for m in METRIC_NAMES:
                vals += [repr(getattr(grp, m)), repr(grp.variance.get(m, 0.0))] if grp else ["", ""]
        w.writerow([c.model_id, c.mode, c.sampling, c.shots, r.n, repr(r.maneuver_micro_accuracy), *vals])
    return buf.getvalue()


def shot_curve_csv(cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    """Accuracy against shot count per (model, mode, sampling), for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "mode", "sampling", "shots", "micro_accuracy"])
    for c, r in sorted(cells, key=lambda x: (x[0].model_id, x[0].mode, x[0].sampling, x[0].shots)):
        w.writerow([c.model_id, c.mode, c.sampling, c.shots, repr(r.maneuver_micro_accuracy)])
    return buf.getvalue()


def scenario_csv(cells: Sequence[tuple[CellLabel, MetricReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "mode", "sampling", "shots", "risk_type", "count", "accuracy"])
    for c, r in cells:
        for rt, acc in r.per_scenario_accuracy.items():
            w.writerow([c.model_id, c.mode, c.sampling, c.shots, rt.value, r.per_scenario_count[rt], repr(acc)])
    return buf.getvalue()
