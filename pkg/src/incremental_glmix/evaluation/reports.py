import logging
import math
from collections.abc import Iterable
from pathlib import Path
from typing import TYPE_CHECKING

import pandas as pd

from incremental_glmix.constants import ReportFormat

if TYPE_CHECKING:
    from incremental_glmix.scheduler import RoundReport


logger = logging.getLogger(__name__)

ROUND_COLUMNS = (
    "phase",
    "branch",
    "counter_before",
    "counter_after",
    "n_examples",
    "objective",
    "load_seconds",
    "fit_seconds",
    "save_seconds",
    "entity_failures",
    "failure",
    "test_auc",
)


def markdown_table(frame: pd.DataFrame) -> str:
    """Pipe table of a frame, floats with 6 decimals"""

    def cell(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return "nan" if math.isnan(value) else f"{value:.6f}"
        return str(value)

    header = "| " + " | ".join(map(str, frame.columns)) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = ["| " + " | ".join(cell(v) for v in row) + " |" for row in frame.itertuples(False)]
    return "\n".join([header, rule, *rows]) + "\n"


def rounds_frame(reports: Iterable["RoundReport"]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports], columns=list(ROUND_COLUMNS))


def write_frame(
    frame: pd.DataFrame,
    stem: Path,
    report_format: ReportFormat = ReportFormat.BOTH,
    markdown: str | None = None,
) -> list[Path]:
    """Write a frame as ``<stem>.csv``, ``<stem>.md`` or both

    Parameters
    ----------
    frame : pd.DataFrame
        Table to write
    stem : Path
        Output path without suffix, its directory is created
    report_format : ReportFormat
        Outputs to write
    markdown : str | None
        Markdown text replacing the plain table of the frame

    Returns
    -------
    list[Path]
        Written files
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if report_format in (ReportFormat.CSV, ReportFormat.BOTH):
        path = stem.with_suffix(".csv")
        frame.to_csv(path, index=False, float_format="%.10g")
        written.append(path)
    if report_format in (ReportFormat.MD, ReportFormat.BOTH):
        path = stem.with_suffix(".md")
        path.write_text(markdown if markdown is not None else markdown_table(frame))
        written.append(path)
    for path in written:
        logger.info("Report written to %s", path)
    return written
