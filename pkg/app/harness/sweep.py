"""T-sweep: one training run per number of propagation steps, same seed, one table row each."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from app.dataset.scenes import Dataset, load_dataset
from app.harness.evaluate import evaluate
from app.harness.trainer import train
from app.models import RunConfig

logger = logging.getLogger("trainer")

DEFAULT_STEPS = (0, 1, 2, 3, 4)


def sweep_T(config: RunConfig, steps: Sequence[int] = DEFAULT_STEPS, dataset: Optional[Dataset] = None) -> pd.DataFrame:
    """
    Rows are indexed by T, columns are (split, action, metric). The table is
    also written to ``<out_dir>/sweep_t.csv``.
    """
    dataset = dataset or load_dataset(config.data_dir)
    base = Path(config.out_dir)
    rows = []
    for t in steps:
        run = RunConfig.model_validate({**config.model_dump(), "steps": int(t), "out_dir": str(base / f"T{t}")})
        result = train(run, dataset)
        row = {("", "", "T"): int(t)}
        for split in ("val", "test"):
            report = evaluate(result.checkpoints, dataset, split)
            for action, scores in report.actions.items():
                row[(split, action, "mAcc")] = scores.macc
                row[(split, action, "mAcc-E")] = scores.macc_e
        logger.info("sweep T=%d: %s", t, {k: round(v, 4) for k, v in row.items() if k[0] == "test"})
        rows.append(row)
    table = pd.DataFrame(rows)
    table.columns = pd.MultiIndex.from_tuples(table.columns)
    table = table.set_index(("", "", "T"))
    table.index.name = "T"
    base.mkdir(parents=True, exist_ok=True)
    table.to_csv(base / "sweep_t.csv")
    return table
