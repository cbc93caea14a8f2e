"""
DATA MODELS - WHAT IS DATA?
============================
Models are templates that define what information we store and pass
around: scene annotations on disk, run settings, reports.

Think of it like:
- Model = A form with fields to fill
- When we load a scene, we fill the scene form (and pydantic checks it)
- When we start a run, we fill the RunConfig form
"""

from __future__ import annotations

import hashlib
import logging
from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger("config")

FORMAT_VERSION = "v1"

# The three actions of the affordance knowledge base
ACTIONS: List[str] = ["sit", "run", "grasp"]


# ===========================
# RELATIONSHIPS
# ===========================

class Relationship(str, Enum):
    """The seven action-object relationship categories, in index order."""

    POSITIVE = "Positive"
    FIRMLY_NEGATIVE = "FirmlyNegative"
    OBJECT_NON_FUNCTIONAL = "ObjectNonFunctional"
    PHYSICAL_OBSTACLE = "PhysicalObstacle"
    SOCIALLY_AWKWARD = "SociallyAwkward"
    SOCIALLY_FORBIDDEN = "SociallyForbidden"
    DANGEROUS = "Dangerous"

    @property
    def index(self) -> int:
        return RELATIONSHIPS.index(self)

    @property
    def is_exception(self) -> bool:
        return self not in (Relationship.POSITIVE, Relationship.FIRMLY_NEGATIVE)

    @classmethod
    def from_index(cls, idx: int) -> "Relationship":
        return RELATIONSHIPS[int(idx)]


RELATIONSHIPS: List[Relationship] = list(Relationship)
EXCEPTIONS: List[Relationship] = [r for r in RELATIONSHIPS if r.is_exception]
NUM_RELATIONSHIPS = len(RELATIONSHIPS)


# ===========================
# OPTIMIZER
# ===========================

class AdamConfig(BaseModel):
    """
    Adam settings plus the step-decay schedule.

    With decay_repeat the rate is multiplied by decay_factor once per epoch
    after decay_after_epochs; otherwise it is multiplied once.
    """
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    decay_factor: float = Field(0.85, gt=0, le=1)
    decay_after_epochs: int = Field(10, ge=0)
    decay_repeat: bool = True


# ===========================
# SCENE ANNOTATIONS - What one image says about each object
# ===========================

class AnnotatorEntry(BaseModel):
    """One annotator's view of an (action, instance) pair."""
    model_config = ConfigDict(extra="forbid")

    label: Relationship
    explanation: Optional[str] = None
    consequence: Optional[str] = None

    @model_validator(mode="after")
    def _sentences_only_for_exceptions(self) -> "AnnotatorEntry":
        has_text = self.explanation is not None or self.consequence is not None
        if has_text and not self.label.is_exception:
            raise ValueError(f"sentences attached to non-exception label {self.label.value}")
        return self


class InstanceAnnotation(AnnotatorEntry):
    """
    The primary annotation of an instance for one action.

    ``extra`` holds additional annotators (the test protocol scores against
    each of them and averages).
    """
    extra: List[AnnotatorEntry] = []

    def annotator(self, k: int) -> AnnotatorEntry:
        """Annotator k's entry; annotators missing for this instance fall back to the primary."""
        if k == 0 or k > len(self.extra):
            return AnnotatorEntry(label=self.label, explanation=self.explanation, consequence=self.consequence)
        return self.extra[k - 1]

    @property
    def num_annotators(self) -> int:
        return 1 + len(self.extra)


class SceneRecord(BaseModel):
    """
    Per-image annotation file (scenes/<id>.json).

    Fields:
    - scene_id: unique id, also the file stem of map and feature files
    - instance_map: relative path of the PGM (or JSON grid) instance map
    - features: relative path of the feature table (.bin, header next to it)
    - annotations: action -> instance id (as string) -> annotation
    """
    model_config = ConfigDict(extra="forbid")

    version: Literal["v1"] = FORMAT_VERSION
    scene_id: str
    instance_map: str
    features: str
    annotations: Dict[str, Dict[str, InstanceAnnotation]]

    @field_validator("annotations")
    @classmethod
    def _known_actions(cls, value: Dict[str, Dict[str, InstanceAnnotation]]):
        unknown = sorted(set(value) - set(ACTIONS))
        if unknown:
            raise ValueError(f"unknown actions {unknown}")
        return value

    def labeled_instances(self, action: str) -> Dict[int, InstanceAnnotation]:
        return {int(k): v for k, v in self.annotations.get(action, {}).items()}


class DatasetManifest(BaseModel):
    """Top-level dataset.json: the class-name table and dimensions shared by all scenes."""
    model_config = ConfigDict(extra="forbid")

    version: Literal["v1"] = FORMAT_VERSION
    classes: List[str]
    actions: List[str] = ACTIONS
    feature_dim: int = Field(gt=0)
    global_dim: int = Field(gt=0)
    scene_ids: List[str]
    generator: Optional[dict] = None


class SplitSpec(BaseModel):
    """Scene-id lists per split (splits.json)."""
    model_config = ConfigDict(extra="forbid")

    version: Literal["v1"] = FORMAT_VERSION
    train: List[str]
    val: List[str]
    test: List[str]
    unused: List[str] = []
    sizes: Dict[str, int] = {}
    seed: int = 0

    def ids(self, split: str) -> List[str]:
        if split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {split!r}")
        return list(getattr(self, split))


# ===========================
# SYNTHETIC DATA - Rules that decide the labels
# ===========================

class AffordanceRule(BaseModel):
    """
    A single labeling rule of the synthetic world.

    Example rule: "a chair touching a person is a PhysicalObstacle for sit"

    Fields:
    - type: handler name in app/rule_engine/rule.py ("adjacent_to", "two_hops_from")
    - action: which action the rule labels
    - targets: classes the rule can relabel
    - triggers: classes whose presence nearby fires the rule
    - label: exception assigned when the rule fires
    - explanations / consequences: sentence templates with {target} / {trigger} slots
    """
    model_config = ConfigDict(populate_by_name=True)

    type: str
    action: str
    targets: List[str]
    triggers: List[str] = Field(alias="trigger_classes")
    label: Relationship
    explanations: List[str]
    consequences: List[str]

    @field_validator("label")
    @classmethod
    def _exception_only(cls, value: Relationship) -> Relationship:
        if not value.is_exception:
            raise ValueError("rules may only assign exception labels")
        return value


class SynthConfig(BaseModel):
    """
    Settings of the synthetic scene generator.

    Two layouts:
    - room: wall strip on top, floor everywhere else, objects in floor cells
      (the floor touches every object)
    - radius2: objects in cells separated by unlabeled pixels; contains
      cup-table-person triples whose label depends on two-hop context
    """
    layout: Literal["room", "radius2"] = "room"
    num_scenes: int = Field(100, ge=1)
    height: int = Field(32, ge=4)
    width: int = Field(32, ge=4)
    cell_size: int = Field(8, ge=4)
    wall_rows: int = Field(4, ge=1)
    feature_dim: int = Field(32, ge=1)
    global_dim: int = Field(16, ge=1)
    feature_noise: float = Field(0.5, ge=0)
    global_noise: float = Field(0.05, ge=0)
    global_presence: Optional[bool] = None
    p_occupied: float = Field(0.35, ge=0, le=1)
    p_hazard: float = Field(0.3, ge=0, le=1)
    p_held: float = Field(0.35, ge=0, le=1)
    p_two_hop: float = Field(0.5, ge=0, le=1)
    group_weights: Optional[Dict[str, float]] = None
    annotators: int = Field(1, ge=1, le=3)
    seed: int = 0

    @model_validator(mode="after")
    def _layout_defaults(self) -> "SynthConfig":
        if self.global_presence is None:
            self.global_presence = self.layout == "room"
        return self


# ===========================
# RUN CONFIG - Everything a training run needs
# ===========================

Topology = Literal["spatial", "fully_connected", "chain", "unary"]
Task = Literal["relationship", "explanation", "consequence", "multitask"]
Regime = Literal["independent", "SA-MT", "MA-MT"]
SENTENCE_TASKS = ("explanation", "consequence")


class RunConfig(BaseModel):
    """
    One training / evaluation run.

    Defaults: T=3, hidden 128,
    relationship batch 128 with lr 1e-3 decayed by 0.85 after 10 epochs,
    decoder batch 32 with lr 3e-4.
    """
    model_config = ConfigDict(extra="forbid")

    actions: List[str] = ["sit"]
    topology: Topology = "spatial"
    steps: int = Field(3, ge=0)
    hidden_size: int = Field(128, ge=1)
    task: Task = "relationship"
    regime: Regime = "independent"
    connectivity: Literal[4, 8] = 4

    relationship_batch_size: int = Field(128, ge=1)
    relationship_lr: float = Field(1e-3, gt=0)
    relationship_clip: Optional[float] = None
    decoder_batch_size: int = Field(32, ge=1)
    decoder_lr: float = Field(3e-4, gt=0)
    decoder_clip: Optional[float] = 5.0
    decay_factor: float = Field(0.85, gt=0, le=1)
    decay_after_epochs: int = Field(10, ge=0)
    decay_repeat: bool = True

    ablate_class: bool = False
    ablate_object_feature: bool = False
    ablate_global: bool = False

    task_weights: Dict[str, float] = {"relationship": 1.0, "explanation": 1.0, "consequence": 1.0}
    class_weighting: bool = False
    action_embedding_dim: int = Field(16, ge=1)
    max_sentence_len: int = Field(20, ge=1)
    min_token_freq: int = Field(2, ge=1)
    selection_metric: Literal["macc", "macc_e"] = "macc_e"
    gate_on_prediction: bool = True

    seed: int = 0
    epochs: int = Field(30, ge=1)
    precision: Literal["float32", "float64"] = "float32"
    data_dir: str = "data"
    out_dir: str = "runs/default"

    @field_validator("actions")
    @classmethod
    def _known_actions(cls, value: List[str]) -> List[str]:
        unknown = [a for a in value if a not in ACTIONS]
        if unknown or not value:
            raise ValueError(f"actions must be a non-empty subset of {ACTIONS}, got {value}")
        return [a for a in ACTIONS if a in value]

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.topology == "unary" and self.steps != 0:
            logger.info("unary topology: propagation steps forced from %d to 0", self.steps)
            self.steps = 0
        if self.regime == "independent" and self.task == "multitask":
            raise ValueError("task 'multitask' needs regime SA-MT or MA-MT")
        if self.regime != "independent" and self.task != "multitask":
            raise ValueError(f"regime {self.regime} trains all tasks jointly; use task 'multitask'")
        if self.regime == "MA-MT" and len(self.actions) < 2:
            raise ValueError("MA-MT shares one trunk across actions; give at least two actions")
        return self

    def adam_config(self, kind: str) -> AdamConfig:
        """Optimizer settings for 'relationship' (also multitask) or 'decoder' training."""
        if kind == "decoder":
            return AdamConfig(learning_rate=self.decoder_lr, decay_factor=1.0, decay_after_epochs=self.decay_after_epochs)
        return AdamConfig(
            learning_rate=self.relationship_lr,
            decay_factor=self.decay_factor,
            decay_after_epochs=self.decay_after_epochs,
            decay_repeat=self.decay_repeat,
        )

    def config_hash(self) -> str:
        payload = self.model_dump_json(exclude={"data_dir", "out_dir"})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @property
    def method_name(self) -> str:
        """Row label used in result tables."""
        if self.regime != "independent":
            return self.regime
        names = {
            "unary": "Unaries",
            "chain": "Chain RNN",
            "fully_connected": "FC GGNN",
            "spatial": "Spatial GGNN",
        }
        name = names[self.topology]
        ablated = [tag for tag, on in (("OC", self.ablate_class), ("OR", self.ablate_object_feature), ("GR", self.ablate_global)) if on]
        if ablated:
            name += " w/o " + ", ".join(ablated)
        if self.topology != "unary" and self.steps != 3:
            name += f" (T={self.steps})"
        return name


# ===========================
# REPORTS - What evaluation gives back
# ===========================

class ActionScores(BaseModel):
    macc: float
    macc_e: float
    confusion: List[List[int]]
    per_class_recall: Dict[str, Optional[float]]
    num_samples: int
    annotators: int = 1


class SentenceScores(BaseModel):
    bleu4: float
    rouge_l: float
    cider: float
    num_items: int


class EvalReport(BaseModel):
    """
    Full metric suite of one model on one split.

    Fields:
    - method: row label (e.g. "Spatial GGNN", "KB")
    - actions: action -> relationship scores
    - sentences: action -> "explanation"/"consequence" -> caption scores
    - metadata: config hash, seed, data version, checkpoint paths
    """
    method: str
    split: str
    actions: Dict[str, ActionScores]
    sentences: Dict[str, Dict[str, SentenceScores]] = {}
    metadata: Dict[str, str] = {}


class InstancePrediction(BaseModel):
    """The affordance triple predicted for one (action, instance) pair."""
    action: str
    instance_id: int
    class_name: str
    bbox: List[int]
    context_box: List[int]
    relationship: Relationship
    probabilities: Dict[str, float]
    explanation: Optional[str] = None
    consequence: Optional[str] = None
