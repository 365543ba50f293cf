import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import click
from tabulate import tabulate

from .models import EvalRecord, HistogramBin, StepRecord


def format_float(value: Optional[float]) -> str:
    """Nine significant digits; missing and NaN values become ``nan``"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{value:.9g}"


class CsvFormatter:
    """Renders result rows as header-first CSV text"""

    @staticmethod
    def render(header: Sequence[str], rows: Iterable[Sequence]) -> str:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(CsvFormatter._cell(value) for value in row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def _cell(value) -> str:
        if value is None:
            return "nan"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return format_float(value)
        if hasattr(value, "value"):
            return str(value.value)
        return str(value)

    @staticmethod
    def write(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        path = Path(path)
        path.write_text(CsvFormatter.render(header, rows), encoding="utf-8")
        return path

    @staticmethod
    def steps(records: Iterable[StepRecord]) -> Tuple[List[str], List[tuple]]:
        return ["step", "branch", "loss"], [(r.step, r.branch, r.loss) for r in records]

    @staticmethod
    def evals(records: Iterable[EvalRecord]) -> Tuple[List[str], List[tuple]]:
        return (
            ["step", "spearman", "alignment", "uniformity"],
            [(r.step, r.spearman, r.alignment, r.uniformity) for r in records],
        )

    @staticmethod
    def histogram(bins: Iterable[HistogramBin]) -> Tuple[List[str], List[tuple]]:
        return ["bin_lo", "bin_hi", "count"], [(b.lo, b.hi, b.count) for b in bins]


class SummaryFormatter:
    """Human-readable tables for the terminal"""

    @staticmethod
    def table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
        styled = [click.style(h, fg="cyan", bold=True) for h in header]
        body = [[CsvFormatter._cell(value) for value in row] for row in rows]
        return tabulate(body, headers=styled, tablefmt="rounded_grid")

    @staticmethod
    def eval_line(spearman: float, alignment: float, uniformity: float) -> str:
        return (
            f"spearman={format_float(spearman)} "
            f"alignment={format_float(alignment)} "
            f"uniformity={format_float(uniformity)}"
        )
