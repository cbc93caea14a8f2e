"""
DATASET STORE
=============
This file knows where everything lives on disk and gives us easy access
to it.

Think of it like:
- Data root = A filing cabinet (AFFORD_DATA_DIR)
- Sub-folder = One drawer (scenes/, maps/, feats/)
- File = One folder in the drawer (scenes/scene_00001.json)
"""

import logging
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

# Load settings from .env file
load_dotenv()

DATA_DIR = os.getenv("AFFORD_DATA_DIR", "data")
RUNS_DIR = os.getenv("AFFORD_RUNS_DIR", "runs")
LOG_LEVEL = os.getenv("AFFORD_LOG_LEVEL", "INFO")
PRECISION = os.getenv("AFFORD_PRECISION", "float32")

logger = logging.getLogger("dataset")

MANIFEST_FILE = "dataset.json"
KB_FILE = "kb.json"
RULES_FILE = "rules.json"
SPLITS_FILE = "splits.json"


class DatasetStore:
    """
    Paths of one dataset directory.

    Layout:
        dataset.json, kb.json, rules.json, splits.json, vocab_<action>.txt
        scenes/<id>.json
        maps/<id>.pgm (+ maps/<id>.classes.json)
        feats/<id>.bin (+ feats/<id>.json)
    """

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_FILE

    @property
    def kb_path(self) -> Path:
        return self.root / KB_FILE

    @property
    def rules_path(self) -> Path:
        return self.root / RULES_FILE

    @property
    def splits_path(self) -> Path:
        return self.root / SPLITS_FILE

    def vocab_path(self, action: str) -> Path:
        return self.root / f"vocab_{action}.txt"

    def scene_path(self, scene_id: str) -> Path:
        return self.root / "scenes" / f"{scene_id}.json"

    def map_relpath(self, scene_id: str) -> str:
        return f"maps/{scene_id}.pgm"

    def features_relpath(self, scene_id: str) -> str:
        return f"feats/{scene_id}.bin"

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath


# One store per directory (we create it once and reuse it)
_stores: Dict[str, DatasetStore] = {}


def get_store(root: Optional[Path | str] = None) -> DatasetStore:
    """Store for ``root`` (default: AFFORD_DATA_DIR)."""
    key = str(Path(root if root is not None else DATA_DIR).resolve())
    if key not in _stores:
        logger.debug("opening dataset store at %s", key)
        _stores[key] = DatasetStore(key)
    return _stores[key]


def runs_dir() -> Path:
    return Path(RUNS_DIR)
