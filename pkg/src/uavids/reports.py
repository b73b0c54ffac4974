"""JSON and CSV serialization of toolkit results in fixed table layouts."""
from __future__ import annotations

from pathlib import Path

from . import jsonio
from .explain import (ABLATION_CSV_HEADER, AblationReport, Attribution, ATTRIBUTION_CSV_HEADER,
                      ImportanceTable)
from .metrics import METRIC_NAMES, TABLE1_COLUMNS, TABLE2_HEADER, MetricsReport
from .statcompare import (TABLE7_HEADER, TABLE8_HEADER, ComparisonReport, FoldScores,
                          mcnemar_csv_rows)

TABLE1_HEADER = ["Model"] + [TABLE1_COLUMNS[k] for k in METRIC_NAMES]
TABLE3_HEADER = ["Feature", "Importance"]
TABLE4_HEADER = ["Feature", "Mean Importance", "Std Dev"]


def table1_rows(reports) -> list[list]:
    return [[r.model_name] + [r.scalars()[k] for k in METRIC_NAMES] for r in reports]


def importance_rows(table: ImportanceTable, top_n: int | None = None):
    rows = table.rows[:top_n]
    if table.source == "gini":
        return TABLE3_HEADER, [[r.feature, r.mean] for r in rows]
    return TABLE4_HEADER, [[r.feature, r.mean, r.std] for r in rows]


def to_json(obj):
    if isinstance(obj, list):
        return [to_json(o) for o in obj]
    if hasattr(obj, "to_json"):
        return obj.to_json()
    return obj


def write_report(obj, path, fmt: str = "json") -> list[Path]:
    """Write ``obj`` as JSON or in its table layout(s) as CSV.

    CSV for a :class:`ComparisonReport` produces the pairwise table at
    ``path`` plus sibling files for intervals, contingency and test rows.
    """
    path = Path(path)
    if fmt == "json":
        return [jsonio.write_json(to_json(obj), path)]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    if isinstance(obj, MetricsReport):
        return [jsonio.write_csv(TABLE1_HEADER, table1_rows([obj]), path)]
    if isinstance(obj, list) and obj and all(isinstance(o, MetricsReport) for o in obj):
        return [jsonio.write_csv(TABLE1_HEADER, table1_rows(obj), path)]
    if isinstance(obj, ImportanceTable):
        header, rows = importance_rows(obj)
        return [jsonio.write_csv(header, rows, path)]
    if isinstance(obj, FoldScores):
        header = ["Model"] + [f"Fold {i + 1}" for i in range(obj.n_folds)]
        rows = [[m] + obj.scores[i].tolist() for i, m in enumerate(obj.models)]
        return [jsonio.write_csv(header, rows, path)]
    if isinstance(obj, ComparisonReport):
        stem, parent = path.stem, path.parent
        out = [jsonio.write_csv(TABLE7_HEADER, obj.table7_rows(), path)]
        if obj.table8_rows():
            out.append(jsonio.write_csv(TABLE8_HEADER, obj.table8_rows(),
                                        parent / f"{stem}_bootstrap.csv"))
        if obj.mcnemar is not None:
            t9, t10 = mcnemar_csv_rows(obj.mcnemar, obj.mcnemar_pair or ("A", "B"))
            out.append(jsonio.write_csv(t9[0], t9[1:], parent / f"{stem}_contingency.csv"))
            out.append(jsonio.write_csv(t10[0], t10[1:], parent / f"{stem}_mcnemar.csv"))
        fr = obj.friedman
        out.append(jsonio.write_csv(["Test", "Statistic", "df", "p-value"],
                                    [["Friedman", fr.statistic, fr.df, fr.pvalue]],
                                    parent / f"{stem}_friedman.csv"))
        return out
    if isinstance(obj, AblationReport):
        return [jsonio.write_csv(ABLATION_CSV_HEADER, obj.csv_rows(), path)]
    if isinstance(obj, list) and obj and all(isinstance(o, Attribution) for o in obj):
        rows = [r for a in obj for r in a.csv_rows()]
        return [jsonio.write_csv(ATTRIBUTION_CSV_HEADER, rows, path)]
    raise TypeError(f"no CSV layout for {type(obj).__name__}")


def table2_csv(report: MetricsReport, path) -> Path:
    return jsonio.write_csv(TABLE2_HEADER, report.table2_rows(), path)
