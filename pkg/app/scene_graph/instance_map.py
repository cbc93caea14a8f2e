"""
INSTANCE MAPS - WHICH OBJECT OWNS EACH PIXEL?
=============================================
An instance map is an H x W grid of instance ids (0 = unlabeled) plus a
table saying which object class every instance belongs to.

On disk:
- maps/<id>.pgm           16-bit binary PGM (P5), pixel value = instance id
  (or maps/<id>.json      {"height": H, "width": W, "pixels": [[...], ...]})
- maps/<id>.classes.json  sidecar {instance_id: class_id}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import cv2
import numpy as np

from app.errors import DataValidationError, EmptySceneError, SchemaError, UnknownClassError


@dataclass
class InstanceMap:
    pixel_instance: np.ndarray
    instance_class: Dict[int, int] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return int(self.pixel_instance.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixel_instance.shape[1])

    def instance_ids(self) -> List[int]:
        return sorted(int(i) for i in np.unique(self.pixel_instance) if i != 0)

    def validate(self, num_classes: Optional[int] = None) -> None:
        """Check the map against its class table; raises DataValidationError subclasses."""
        if self.pixel_instance.ndim != 2 or self.pixel_instance.size == 0:
            raise SchemaError(f"instance map must be a non-empty 2-D grid, got shape {self.pixel_instance.shape}")
        if np.any(self.pixel_instance < 0):
            raise SchemaError("instance ids must be non-negative")
        present = set(self.instance_ids())
        if not present:
            raise EmptySceneError("instance map contains no labeled instance")
        missing = sorted(present - set(self.instance_class))
        if missing:
            raise DataValidationError(f"instance ids {missing} appear in pixels but not in the class table")
        absent = sorted(set(self.instance_class) - present)
        if absent:
            raise DataValidationError(f"instance ids {absent} are in the class table but occupy no pixel")
        if num_classes is not None:
            bad = sorted(i for i, c in self.instance_class.items() if not 0 <= c < num_classes)
            if bad:
                raise UnknownClassError(f"instances {bad} have class ids outside [0, {num_classes})")


def sidecar_path(map_path: Path) -> Path:
    return map_path.with_name(map_path.stem + ".classes.json")


def save_instance_map(path: Path | str, imap: InstanceMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".pgm":
        if imap.pixel_instance.max(initial=0) > 65535:
            raise SchemaError("instance ids above 65535 do not fit a 16-bit PGM")
        if not cv2.imwrite(str(path), imap.pixel_instance.astype(np.uint16)):
            raise OSError(f"failed to write {path}")
    elif path.suffix == ".json":
        grid = {"height": imap.height, "width": imap.width, "pixels": imap.pixel_instance.astype(int).tolist()}
        path.write_text(json.dumps(grid))
    else:
        raise SchemaError(f"unsupported instance map extension {path.suffix!r}")
    sidecar = {str(k): int(v) for k, v in sorted(imap.instance_class.items())}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return path


def load_instance_map(path: Path | str, num_classes: Optional[int] = None) -> InstanceMap:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"instance map not found: {path}")
    if path.suffix == ".pgm":
        pixels = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if pixels is None or pixels.ndim != 2:
            raise SchemaError(f"{path}: not a single-channel PGM")
    elif path.suffix == ".json":
        grid = json.loads(path.read_text())
        pixels = np.asarray(grid["pixels"])
        if pixels.shape != (grid["height"], grid["width"]):
            raise SchemaError(f"{path}: pixel grid shape {pixels.shape} != declared {(grid['height'], grid['width'])}")
    else:
        raise SchemaError(f"unsupported instance map extension {path.suffix!r}")

    side = sidecar_path(path)
    if not side.exists():
        raise DataValidationError(f"class sidecar missing for {path}: expected {side}")
    classes = {int(k): int(v) for k, v in json.loads(side.read_text()).items()}
    imap = InstanceMap(pixel_instance=pixels.astype(np.int64), instance_class=classes)
    imap.validate(num_classes)
    return imap
