"""Logging setup and the line-delimited JSON event log used by training and evaluation."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

LOG_FORMAT = "[%(asctime)s] [%(name)s] %(levelname)s: %(message)s"

_configured = False


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once; later calls only adjust the level."""
    global _configured
    if not _configured:
        logging.basicConfig(level=level.upper(), format=LOG_FORMAT)
        _configured = True
    else:
        logging.getLogger().setLevel(level.upper())


class EventLog:
    """
    Append-only JSON-lines log of ``{epoch, split, metric, value}`` events.

    Events carry no wall-clock data, so two runs with the same config and
    seed write byte-identical files. Events are also kept in memory so the
    trainer can hand them back to callers.
    """

    def __init__(self, path: Optional[Path] = None, logger_name: str = "trainer") -> None:
        self.path = Path(path) if path is not None else None
        self.events: List[Dict[str, Any]] = []
        self._logger = logging.getLogger(logger_name)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def emit(self, epoch: int, split: str, metric: str, value: float, **extra: Any) -> None:
        event: Dict[str, Any] = {"epoch": int(epoch), "split": split, "metric": metric, "value": float(value)}
        event.update(extra)
        self.events.append(event)
        line = json.dumps(event, sort_keys=True)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
        self._logger.info(line)

    def values(self, split: str, metric: str) -> List[float]:
        return [e["value"] for e in self.events if e["split"] == split and e["metric"] == metric]
