"""Saving, loading and tabulating evaluation reports."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence

import pandas as pd

from app.models import ACTIONS, EvalReport

# row order of the result tables
METHOD_ORDER = ["KB", "Unaries", "Chain RNN", "FC GGNN", "Spatial GGNN", "SA-MT", "MA-MT"]


def save_report(report: EvalReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def load_report(path: Path | str) -> EvalReport:
    return EvalReport.model_validate_json(Path(path).read_text())


def _method_key(method: str):
    base = method.split(" (")[0].split(" w/o")[0]
    rank = METHOD_ORDER.index(base) if base in METHOD_ORDER else len(METHOD_ORDER)
    return rank, method


def relationship_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = {}
    for report in sorted(reports, key=lambda r: _method_key(r.method)):
        row = {}
        for action in ACTIONS:
            scores = report.actions.get(action)
            if scores is not None:
                row[(action, "mAcc")] = scores.macc
                row[(action, "mAcc-E")] = scores.macc_e
        rows[report.method] = row
    frame = pd.DataFrame.from_dict(rows, orient="index")
    if not frame.empty:
        frame.columns = pd.MultiIndex.from_tuples(frame.columns)
    return frame


def sentence_table(reports: Sequence[EvalReport], kind: str) -> pd.DataFrame:
    rows = {}
    for report in sorted(reports, key=lambda r: _method_key(r.method)):
        row = {}
        for action in ACTIONS:
            scores = report.sentences.get(action, {}).get(kind)
            if scores is not None:
                row[(action, "BLEU-4")] = scores.bleu4
                row[(action, "ROUGE-L")] = scores.rouge_l
                row[(action, "CIDEr")] = scores.cider
        if row:
            rows[report.method] = row
    frame = pd.DataFrame.from_dict(rows, orient="index")
    if not frame.empty:
        frame.columns = pd.MultiIndex.from_tuples(frame.columns)
    return frame


def render_tables(reports: Sequence[EvalReport]) -> str:
    """Plain-text tables: relationships, then explanation and consequence captions."""
    blocks: List[str] = []
    rel = relationship_table(reports)
    if not rel.empty:
        blocks.append("Relationships\n" + rel.to_string(float_format=lambda v: f"{v:.3f}"))
    for kind in ("explanation", "consequence"):
        table = sentence_table(reports, kind)
        if not table.empty:
            blocks.append(f"{kind.capitalize()}s\n" + table.to_string(float_format=lambda v: f"{v:.3f}"))
    return "\n\n".join(blocks) + "\n"


def report_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([json.loads(r.model_dump_json()) for r in reports], indent=2, sort_keys=True)
