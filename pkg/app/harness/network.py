"""
NETWORK - ONE CHECKPOINT'S WORTH OF COMPONENTS
==============================================
A trunk (node init + propagation + fusion) feeding task heads, stored in
one ParamStore under names like "sit.trunk.W_p" or "sit.explanation.W_x".

Three ways to wire it:
- independent: one task for one action ("{action}.trunk" + that task's head)
- SA-MT: one action, its trunk shared by all three tasks
- MA-MT: a single "shared.trunk" for every action; an action embedding is
  appended to the fusion input and every action keeps its own heads
"""

from __future__ import annotations

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.decoder.lstm import SentenceDecoder
from app.errors import ConfigurationError
from app.ggnn.head import RelationshipHead
from app.ggnn.params import FUSION_ORDER, GgnnParams, HeadParams, TrunkDims
from app.ggnn.trunk import GatedGraphTrunk, SceneInputs, TrunkPass
from app.models import RunConfig
from app.numeric.checkpoint import get_or_load_checkpoint, load_checkpoint, save_checkpoint
from app.numeric.params import ParamStore

logger = logging.getLogger("trainer")

CHECKPOINT_FORMAT = "v1"


class AffordanceNetwork:
    def __init__(
        self,
        store: ParamStore,
        config: RunConfig,
        dims: TrunkDims,
        actions: Sequence[str],
        tasks: Sequence[str],
        vocab_sizes: Dict[str, int],
    ) -> None:
        self.store = store
        self.config = config
        self.dims = dims
        self.actions = list(actions)
        self.tasks = list(tasks)
        self.vocab_sizes = dict(vocab_sizes)
        self.shared = config.regime == "MA-MT"
        self.trunks: Dict[str, GatedGraphTrunk] = {}
        self.heads: Dict[str, RelationshipHead] = {}
        self.decoders: Dict[Tuple[str, str], SentenceDecoder] = {}
        self._bind()

    # ---- wiring -----------------------------------------------------------

    def trunk_prefix(self, action: str) -> str:
        return "shared.trunk" if self.shared else f"{action}.trunk"

    def _bind(self) -> None:
        for action in self.actions:
            self.trunks[action] = GatedGraphTrunk(GgnnParams(self.store, self.trunk_prefix(action), self.dims), self.config.steps)
            if "relationship" in self.tasks:
                self.heads[action] = RelationshipHead(HeadParams(self.store, f"{action}.relationship"))
            for kind in ("explanation", "consequence"):
                if kind in self.tasks:
                    self.decoders[(action, kind)] = SentenceDecoder(
                        self.store, f"{action}.{kind}", self.vocab_sizes[action], self.dims.hidden
                    )

    @classmethod
    def create(
        cls,
        config: RunConfig,
        dims: TrunkDims,
        actions: Sequence[str],
        tasks: Sequence[str],
        vocab_sizes: Dict[str, int],
        rng: np.random.Generator,
    ) -> "AffordanceNetwork":
        """Allocate parameters in a fixed order: trunk(s), relationship heads, then decoders."""
        store = ParamStore()
        if config.regime == "MA-MT":
            GgnnParams.create(store, "shared.trunk", dims, rng)
        else:
            for action in actions:
                GgnnParams.create(store, f"{action}.trunk", dims, rng)
        if "relationship" in tasks:
            for action in actions:
                HeadParams.create(store, f"{action}.relationship", dims.hidden, rng)
        for kind in ("explanation", "consequence"):
            if kind in tasks:
                for action in actions:
                    if vocab_sizes.get(action, 0) <= 4:
                        raise ConfigurationError(f"vocabulary of action {action} holds no word; cannot train the {kind} decoder")
                    SentenceDecoder.create(store, f"{action}.{kind}", vocab_sizes[action], dims.hidden, rng)
        logger.info("created %s network for %s / %s: %d parameters", config.regime, actions, tasks, store.num_params())
        return cls(store, config, dims, actions, tasks, vocab_sizes)

    # ---- forward helpers --------------------------------------------------

    def action_index(self, action: str) -> Optional[int]:
        return self.actions.index(action) if self.shared else None

    def trunk_forward(self, inputs: SceneInputs, action: str) -> TrunkPass:
        return self.trunks[action].forward(inputs, self.action_index(action))

    def trunk_backward(self, tpass: TrunkPass, action: str, d_output: np.ndarray) -> None:
        self.trunks[action].backward(tpass, d_output)

    # ---- persistence ------------------------------------------------------

    def metadata(self, **extra) -> Dict:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "regime": self.config.regime,
            "actions": self.actions,
            "tasks": self.tasks,
            "dims": asdict(self.dims),
            "vocab_sizes": self.vocab_sizes,
            "fusion_order": FUSION_ORDER if self.shared else FUSION_ORDER[:3],
            "config": self.config.model_dump(mode="json"),
            "method": self.config.method_name,
        }
        meta.update(extra)
        return meta

    def save(self, path: Path | str, **extra) -> Path:
        return save_checkpoint(path, self.store, self.metadata(**extra))

    @classmethod
    def from_store(cls, store: ParamStore, meta: Dict) -> "AffordanceNetwork":
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"unsupported checkpoint format {meta.get('format')!r}")
        config = RunConfig.model_validate(meta["config"])
        dims = TrunkDims(**meta["dims"])
        return cls(store, config, dims, meta["actions"], meta["tasks"], meta["vocab_sizes"])

    @classmethod
    def load(cls, path: Path | str, cached: bool = True) -> Tuple["AffordanceNetwork", Dict]:
        store, meta = get_or_load_checkpoint(path) if cached else load_checkpoint(path)
        return cls.from_store(store, meta), meta

    def trunk_param_count(self) -> int:
        prefixes = sorted({self.trunk_prefix(a) for a in self.actions})
        return sum(self.store.num_params(p + ".") for p in prefixes)


def dims_for(config: RunConfig, num_classes: int, feature_dim: int, global_dim: int, actions: List[str]) -> TrunkDims:
    return TrunkDims(
        num_classes=num_classes,
        feature_dim=feature_dim,
        global_dim=global_dim,
        hidden=config.hidden_size,
        num_actions=len(actions) if config.regime == "MA-MT" else 0,
        action_dim=config.action_embedding_dim,
    )
