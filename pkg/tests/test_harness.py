import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import ConfigurationError, TrainingDivergenceError
from app.ggnn.params import TrunkDims
from app.harness.evaluate import evaluate, evaluate_kb, oracle_predictor, score_predictions
from app.harness.multitask import multitask_units, train_multitask
from app.harness.network import AffordanceNetwork, dims_for
from app.harness.predict import Predictor
from app.harness.samples import load_split_tensors
from app.harness.sweep import sweep_T
from app.harness.trainer import Trainer, train
from app.metrics.report import load_report, render_tables, save_report
from app.models import RunConfig
from app.numeric.checkpoint import load_checkpoint

EXCEPTIONS = ("ObjectNonFunctional", "PhysicalObstacle", "SociallyAwkward", "SociallyForbidden", "Dangerous")


def run_config(dataset, out_dir, **overrides):
    base = dict(
        actions=["sit"],
        steps=1,
        hidden_size=8,
        epochs=2,
        relationship_batch_size=16,
        decoder_batch_size=8,
        relationship_lr=1e-2,
        seed=5,
        data_dir=str(dataset.root),
        out_dir=str(out_dir),
    )
    return RunConfig(**{**base, **overrides})


# ---- config ---------------------------------------------------------------------------

def test_run_config_validation():
    assert RunConfig(topology="unary", steps=3).steps == 0
    with pytest.raises(ValidationError):
        RunConfig(task="multitask")
    with pytest.raises(ValidationError):
        RunConfig(regime="SA-MT", task="relationship")
    with pytest.raises(ValidationError):
        RunConfig(regime="MA-MT", task="multitask", actions=["sit"])
    with pytest.raises(ValidationError):
        RunConfig(actions=["jump"])
    assert RunConfig(actions=["grasp", "sit"]).actions == ["sit", "grasp"]


def test_method_names():
    assert RunConfig().method_name == "Spatial GGNN"
    assert RunConfig(topology="unary").method_name == "Unaries"
    assert RunConfig(topology="chain", steps=1).method_name == "Chain RNN (T=1)"
    assert RunConfig(ablate_global=True).method_name == "Spatial GGNN w/o GR"
    assert RunConfig(regime="MA-MT", task="multitask", actions=["sit", "run"]).method_name == "MA-MT"


def test_config_hash_ignores_paths():
    a = RunConfig(data_dir="x", out_dir="y")
    assert a.config_hash() == RunConfig(data_dir="z", out_dir="w").config_hash()
    assert a.config_hash() != RunConfig(steps=2).config_hash()


# ---- baselines --------------------------------------------------------------------------

def test_kb_baseline_never_recalls_an_exception(tiny_dataset):
    report = evaluate_kb(tiny_dataset, "test")
    assert report.method == "KB"
    for scores in report.actions.values():
        assert scores.macc >= scores.macc_e - 1e-12
        for name in EXCEPTIONS:
            assert scores.per_class_recall[name] in (None, 0.0)


def test_primary_labels_score_perfectly(tiny_dataset):
    scenes = load_split_tensors(tiny_dataset, "test", RunConfig(actions=["sit", "run", "grasp"]))
    for scores in score_predictions(scenes, ["sit", "run", "grasp"], oracle_predictor).values():
        assert scores.macc == pytest.approx(1.0)
        assert scores.macc_e == pytest.approx(1.0)
        assert scores.annotators == 2


# ---- training ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    config = run_config(tiny_dataset, tmp_path_factory.mktemp("run"))
    return train(config, tiny_dataset)


def test_training_writes_checkpoint_config_and_events(trained):
    assert [p.name for p in trained.checkpoints] == ["sit-relationship.npz"]
    assert trained.checkpoints[0].exists()
    assert (trained.out_dir / "config.json").exists()
    lines = (trained.out_dir / "events.jsonl").read_text().splitlines()
    assert len(lines) == len(trained.events) > 0
    assert 1 <= trained.best_epochs["sit-relationship"] <= 2
    assert {e["metric"] for e in trained.events} >= {"loss", "macc", "macc_e", "best_score"}


def test_checkpoint_records_its_provenance(trained, tiny_dataset):
    _, meta = load_checkpoint(trained.checkpoints[0])
    assert meta["actions"] == ["sit"] and meta["tasks"] == ["relationship"]
    assert meta["class_names"] == tiny_dataset.class_names
    assert meta["config"]["hidden_size"] == 8
    assert meta["epoch"] == trained.best_epochs["sit-relationship"]


def test_same_seed_gives_the_same_run(trained, tiny_dataset, tmp_path):
    again = train(trained.config.model_copy(update={"out_dir": str(tmp_path)}), tiny_dataset)
    assert (tmp_path / "events.jsonl").read_text() == (trained.out_dir / "events.jsonl").read_text()
    a, _ = load_checkpoint(trained.checkpoints[0])
    b, _ = load_checkpoint(again.checkpoints[0])
    for name in a.names():
        np.testing.assert_array_equal(a[name], b[name])


def test_evaluation_report(trained, tiny_dataset, tmp_path):
    report = evaluate(trained.checkpoints, tiny_dataset, "test")
    assert report.method == "Spatial GGNN (T=1)"
    assert set(report.actions) == {"sit"}
    scores = report.actions["sit"]
    assert 0.0 <= scores.macc_e <= 1.0 and 0.0 <= scores.macc <= 1.0
    assert scores.num_samples > 0
    assert report.metadata["config_hash"] == trained.config.config_hash()
    assert report.metadata["seed"] == "5"

    loaded = load_report(save_report(report, tmp_path / "report.json"))
    assert loaded == report
    table = render_tables([report, evaluate_kb(tiny_dataset, "test", ["sit"])])
    assert table.index("KB") < table.index("Spatial GGNN")


def test_evaluate_rejects_an_empty_checkpoint_list(tiny_dataset):
    with pytest.raises(ConfigurationError):
        evaluate([], tiny_dataset, "test")


def test_predict_covers_every_instance(trained, tiny_dataset):
    scene = tiny_dataset.scene(tiny_dataset.splits.test[0])
    predictions = Predictor.load(trained.checkpoints).predict(scene)
    assert {p.instance_id for p in predictions} == set(scene.instance_map.instance_ids())
    for p in predictions:
        assert p.action == "sit"
        assert sum(p.probabilities.values()) == pytest.approx(1.0, abs=1e-5)
        assert max(p.probabilities, key=p.probabilities.get) == p.relationship.value
        # no decoder in this checkpoint
        assert p.explanation is None and p.consequence is None


def test_divergence_keeps_the_last_completed_epoch(tiny_dataset, tmp_path, monkeypatch):
    seen = {}
    calls = {"epoch": 0, "batches": 0}
    train_epoch, batch = Trainer.train_epoch, Trainer._batch

    def recording_epoch(self, epoch, rng):
        seen[epoch] = self.network.store.snapshot()
        calls["epoch"], calls["batches"] = epoch, 0
        return train_epoch(self, epoch, rng)

    def poisoned_batch(self, samples):
        calls["batches"] += 1
        if calls["epoch"] == 2 and calls["batches"] == 2:
            self.network.store[self.network.store.names("sit.relationship.")[0]].fill(np.nan)
        return batch(self, samples)

    monkeypatch.setattr(Trainer, "train_epoch", recording_epoch)
    monkeypatch.setattr(Trainer, "_batch", poisoned_batch)
    with pytest.raises(TrainingDivergenceError):
        train(run_config(tiny_dataset, tmp_path, epochs=3, relationship_batch_size=4), tiny_dataset)

    store, meta = load_checkpoint(tmp_path / "checkpoints" / "sit-relationship.last_good.npz")
    assert meta["epoch"] == 1
    kept = seen[2]
    assert set(store.names()) == set(kept.params)
    for name in store.names():
        np.testing.assert_array_equal(store[name], kept.params[name])
        np.testing.assert_array_equal(store.m[name], kept.m[name])
        np.testing.assert_array_equal(store.v[name], kept.v[name])
        assert store.steps[name] == kept.steps[name]


# ---- multi-task -------------------------------------------------------------------------

def test_multitask_units(tiny_dataset):
    sa = RunConfig(actions=["sit", "run"], regime="SA-MT", task="multitask")
    assert [u.name for u in multitask_units(sa)] == ["sit-multitask", "run-multitask"]
    ma = RunConfig(actions=["sit", "run"], regime="MA-MT", task="multitask")
    (unit,) = multitask_units(ma)
    assert unit.name == "all-multitask" and unit.actions == ["sit", "run"]
    with pytest.raises(ConfigurationError):
        multitask_units(RunConfig())


def test_shared_trunk_adds_only_the_action_embedding():
    dims = TrunkDims(num_classes=9, feature_dim=8, global_dim=10, hidden=8)
    sa_config = RunConfig(actions=["sit", "run"], hidden_size=8, action_embedding_dim=4)
    ma_config = RunConfig(actions=["sit", "run"], hidden_size=8, action_embedding_dim=4, regime="MA-MT", task="multitask")
    rng = np.random.default_rng(0)
    independent = AffordanceNetwork.create(sa_config, dims, ["sit", "run"], ["relationship"], {}, rng)
    ma_dims = dims_for(ma_config, 9, 8, 10, ["sit", "run"])
    shared = AffordanceNetwork.create(ma_config, ma_dims, ["sit", "run"], ["relationship"], {}, rng)
    per_trunk = independent.trunk_param_count() // 2
    assert shared.trunk_param_count() == per_trunk + 4 * 8 + 2 * 4
    assert shared.store.names("shared.trunk.") and not shared.store.names("sit.trunk.")


def test_zero_weighted_decoders_leave_the_relationship_model_unchanged(trained, tiny_dataset, tmp_path):
    config = trained.config.model_copy(update={
        "regime": "SA-MT",
        "task": "multitask",
        "task_weights": {"relationship": 1.0, "explanation": 0.0, "consequence": 0.0},
        "out_dir": str(tmp_path),
    })
    multi = train_multitask(config, tiny_dataset)
    a, _ = load_checkpoint(trained.checkpoints[0])
    b, _ = load_checkpoint(multi.checkpoints[0])
    shared = a.names(("sit.trunk.", "sit.relationship."))
    assert shared and set(shared) <= set(b.names())
    for name in shared:
        np.testing.assert_array_equal(a[name], b[name])
    assert b.names("sit.explanation.") and b.names("sit.consequence.")


def test_unknown_task_weight(trained, tiny_dataset, tmp_path):
    config = trained.config.model_copy(update={
        "regime": "SA-MT", "task": "multitask", "task_weights": {"caption": 1.0}, "out_dir": str(tmp_path),
    })
    with pytest.raises(ConfigurationError):
        train_multitask(config, tiny_dataset)


@pytest.fixture(scope="module")
def multitask_run(tiny_dataset, tmp_path_factory):
    config = run_config(
        tiny_dataset, tmp_path_factory.mktemp("samt"), regime="SA-MT", task="multitask", max_sentence_len=6,
    )
    return train_multitask(config, tiny_dataset)


def test_multitask_report_scores_sentences(multitask_run, tiny_dataset):
    assert [p.name for p in multitask_run.checkpoints] == ["sit-multitask.npz"]
    report = evaluate(multitask_run.checkpoints, tiny_dataset, "val")
    assert report.method == "SA-MT"
    for kind, scores in report.sentences.get("sit", {}).items():
        assert kind in ("explanation", "consequence")
        assert 0.0 <= scores.bleu4 <= 1.0 and 0.0 <= scores.rouge_l <= 1.0 and scores.cider >= 0.0


def test_sentences_only_follow_predicted_exceptions(multitask_run, tiny_dataset):
    predictor = Predictor.load(multitask_run.checkpoints)
    for scene_id in tiny_dataset.splits.test:
        for p in predictor.predict(tiny_dataset.scene(scene_id)):
            if p.relationship.is_exception:
                assert p.explanation is not None and p.consequence is not None
                assert len(p.explanation.split()) <= 6
            else:
                assert p.explanation is None and p.consequence is None


# ---- T sweep ------------------------------------------------------------------------------

def test_sweep_over_propagation_steps(tiny_dataset, tmp_path):
    config = run_config(tiny_dataset, tmp_path, epochs=1)
    table = sweep_T(config, steps=(0, 1), dataset=tiny_dataset)
    assert list(table.index) == [0, 1]
    assert ("test", "sit", "mAcc-E") in table.columns
    assert (tmp_path / "sweep_t.csv").exists()
    assert (tmp_path / "T0" / "checkpoints" / "sit-relationship.npz").exists()


def test_zero_steps_reproduce_the_unary_model(tiny_dataset, tmp_path):
    table = sweep_T(run_config(tiny_dataset, tmp_path / "sweep", epochs=1), steps=(0,), dataset=tiny_dataset)
    unary = train(run_config(tiny_dataset, tmp_path / "unary", epochs=1, topology="unary"), tiny_dataset)
    for split in ("val", "test"):
        scores = evaluate(unary.checkpoints, tiny_dataset, split).actions["sit"]
        assert table.loc[0, (split, "sit", "mAcc")] == scores.macc
        assert table.loc[0, (split, "sit", "mAcc-E")] == scores.macc_e
