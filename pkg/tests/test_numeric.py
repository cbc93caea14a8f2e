import numpy as np
import pytest

from app.errors import ContractError, DataValidationError, DimensionError, TrainingDivergenceError
from app.models import AdamConfig
from app.numeric import ops
from app.numeric.checkpoint import get_or_load_checkpoint, load_checkpoint, save_checkpoint
from app.numeric.gradcheck import elementwise_error, gradient_check, relative_error
from app.numeric.optim import adam_step, clip_global_norm, learning_rate
from app.numeric.params import ParamStore
from app.numeric.tensor import as_tensor, get_dtype, set_precision


def numeric_grad(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


# ---- ops ------------------------------------------------------------------

def test_linear_backward_matches_finite_differences(rng):
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    dy = rng.normal(size=(5, 3))
    dW, db, dx = ops.linear_backward(dy, W, x)
    f = lambda: float(np.sum(ops.linear(W, b, x) * dy))
    np.testing.assert_allclose(dW, numeric_grad(f, W), atol=1e-6)
    np.testing.assert_allclose(db, numeric_grad(f, b), atol=1e-6)
    np.testing.assert_allclose(dx, numeric_grad(f, x), atol=1e-6)


def test_linear_rejects_mismatched_shapes(rng):
    with pytest.raises(DimensionError):
        ops.linear(rng.normal(size=(3, 4)), None, rng.normal(size=5))
    with pytest.raises(DimensionError):
        ops.linear(rng.normal(size=(3, 4)), np.zeros(4), rng.normal(size=4))


@pytest.mark.parametrize("name", ["sigmoid", "tanh"])
def test_elementwise_backward(rng, name):
    forward = getattr(ops, name)
    backward = getattr(ops, f"{name}_backward")
    x = rng.normal(size=(4, 3))
    dy = rng.normal(size=(4, 3))
    y = forward(x)
    np.testing.assert_allclose(backward(dy, y), numeric_grad(lambda: float(np.sum(forward(x) * dy)), x), atol=1e-6)


def test_sigmoid_is_stable_for_large_inputs():
    y = ops.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_hadamard_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        ops.hadamard(np.ones(3), np.ones(4))


def test_softmax_rows_sum_to_one_and_survive_large_logits():
    p = ops.softmax(np.array([[1000.0, 1000.0], [0.0, np.log(3.0)]]))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(p[1], [0.25, 0.75])


def test_cross_entropy_gradient(rng):
    logits = rng.normal(size=7)
    loss, grad = ops.cross_entropy(logits, 2)
    assert loss == pytest.approx(-np.log(ops.softmax(logits)[2]))
    np.testing.assert_allclose(grad, numeric_grad(lambda: ops.cross_entropy(logits, 2)[0], logits), atol=1e-6)
    with pytest.raises(IndexError):
        ops.cross_entropy(logits, 7)


def test_batch_cross_entropy_weights_scale_loss_and_gradient(rng):
    logits = rng.normal(size=(3, 7))
    targets = np.array([0, 4, 6])
    losses, grads = ops.batch_cross_entropy(logits, targets)
    w_losses, w_grads = ops.batch_cross_entropy(logits, targets, np.array([2.0, 0.0, 1.0]))
    np.testing.assert_allclose(w_losses, losses * [2.0, 0.0, 1.0])
    np.testing.assert_allclose(w_grads[1], 0.0)
    np.testing.assert_allclose(w_grads[0], 2 * grads[0])


# ---- tensors and params -----------------------------------------------------

def test_as_tensor_rejects_non_finite_and_bad_shapes():
    with pytest.raises(DataValidationError):
        as_tensor([1.0, np.nan])
    with pytest.raises(DimensionError):
        as_tensor([1.0, 2.0, 3.0], shape=(2, 2))
    assert as_tensor([1, 2, 3, 4], shape=(2, 2)).shape == (2, 2)


def test_precision_switch_controls_new_parameters(rng):
    set_precision("float64")
    store = ParamStore()
    assert store.add("a", (2, 2), rng).dtype == np.float64
    set_precision("float32")
    assert store.add("b", (2, 2), rng).dtype == np.float32
    assert get_dtype() is np.float32
    with pytest.raises(ValueError):
        set_precision("float16")


def test_param_store_names_by_prefix_and_accumulate(rng):
    store = ParamStore()
    store.add("sit.trunk.W", (2, 3), rng)
    store.add("sit.relationship.W1", (3, 3), rng)
    store.add("sit.explanation.W_x", (4, 3), rng)
    assert store.names("sit.trunk.") == ["sit.trunk.W"]
    assert store.names(("sit.trunk.", "sit.relationship.")) == ["sit.trunk.W", "sit.relationship.W1"]
    assert store.num_params("sit.explanation.") == 12
    with pytest.raises(DimensionError):
        store.accumulate("sit.trunk.W", np.ones((3, 2)))
    with pytest.raises(KeyError):
        store.add("sit.trunk.W", (2, 3), rng)


def test_snapshot_restore(rng):
    store = ParamStore()
    store.add("w", (3,), rng)
    store.grads["w"] += 1.0
    adam_step(store, AdamConfig(), epoch=1)
    snap = store.snapshot()
    store.grads["w"] += 2.0
    adam_step(store, AdamConfig(), epoch=1)
    store.grads["w"] += 5.0
    store.restore(snap)
    np.testing.assert_array_equal(store["w"], snap["w"])
    np.testing.assert_array_equal(store.m["w"], snap.m["w"])
    np.testing.assert_array_equal(store.v["w"], snap.v["w"])
    assert store.steps["w"] == snap.steps["w"] == 1
    assert not store.grads["w"].any()
    assert store.m["w"] is not snap.m["w"]


# ---- optimizer ----------------------------------------------------------------

def test_learning_rate_schedule():
    config = AdamConfig(learning_rate=1e-3, decay_factor=0.85, decay_after_epochs=10)
    assert learning_rate(config, 10) == pytest.approx(1e-3)
    assert learning_rate(config, 11) == pytest.approx(0.85e-3)
    assert learning_rate(config, 13) == pytest.approx(1e-3 * 0.85 ** 3)
    once = config.model_copy(update={"decay_repeat": False})
    assert learning_rate(once, 13) == pytest.approx(0.85e-3)


def test_clip_global_norm_scales_only_above_threshold(float64):
    store = ParamStore()
    store.add("a", (2,))
    store.add("b", (1,))
    store.grads["a"][...] = [3.0, 0.0]
    store.grads["b"][...] = [4.0]
    assert clip_global_norm(store, 10.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store.grads["a"], [3.0, 0.0])
    assert clip_global_norm(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store.grad_norm(), 1.0)


def test_clip_by_prefix_leaves_other_gradients_alone(float64):
    store = ParamStore()
    store.add("x.a", (1,))
    store.add("y.a", (1,))
    store.grads["x.a"][...] = 10.0
    store.grads["y.a"][...] = 10.0
    clip_global_norm(store, 1.0, "x.")
    assert store.grads["x.a"][0] == pytest.approx(1.0)
    assert store.grads["y.a"][0] == pytest.approx(10.0)


def test_adam_matches_torch(float64, rng):
    torch = pytest.importorskip("torch")
    init = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    config = AdamConfig(learning_rate=0.01, decay_factor=1.0)

    store = ParamStore()
    store.set("w", init.copy())
    for g in grads:
        store.grads["w"][...] = g
        adam_step(store, config, epoch=1)

    w = torch.tensor(init.copy(), requires_grad=True)
    opt = torch.optim.Adam([w], lr=0.01, betas=(0.9, 0.999), eps=1e-8)
    for g in grads:
        opt.zero_grad()
        w.grad = torch.tensor(g)
        opt.step()
    np.testing.assert_allclose(store["w"], w.detach().numpy(), rtol=1e-10, atol=1e-12)


def test_adam_zeroes_gradients_and_refuses_nan(float64):
    store = ParamStore()
    store.add("w", (2,))
    store.grads["w"][...] = [1.0, -1.0]
    adam_step(store, AdamConfig(), epoch=1)
    np.testing.assert_array_equal(store.grads["w"], 0.0)
    assert store.steps["w"] == 1
    store.grads["w"][0] = np.nan
    with pytest.raises(TrainingDivergenceError) as info:
        adam_step(store, AdamConfig(), epoch=1)
    assert info.value.parameter == "w"


def test_adam_step_by_prefix(float64):
    store = ParamStore()
    store.add("a.w", (1,))
    store.add("b.w", (1,))
    store.grads["a.w"][...] = 1.0
    store.grads["b.w"][...] = 1.0
    adam_step(store, AdamConfig(), epoch=1, prefix="a.")
    assert store["a.w"][0] != 0.0
    assert store["b.w"][0] == 0.0
    assert store.grads["b.w"][0] == 1.0


# ---- gradcheck -------------------------------------------------------------------

def test_gradient_check_catches_a_wrong_gradient(float64, rng):
    store = ParamStore()
    store.add("w", (3,), rng)

    def good(compute_grad):
        if compute_grad:
            store.grads["w"] += 2 * store["w"]
        return float(np.sum(store["w"] ** 2))

    def bad(compute_grad):
        if compute_grad:
            store.grads["w"] += store["w"]
        return float(np.sum(store["w"] ** 2))

    assert max(gradient_check(good, store).values()) < 1e-8
    assert max(gradient_check(bad, store).values()) > 0.1


def test_gradient_check_contracts(rng):
    set_precision("float32")
    store = ParamStore()
    store.add("w", (2,), rng)
    with pytest.raises(ContractError):
        gradient_check(lambda g: 0.0, store)
    set_precision("float64")
    store64 = ParamStore()
    store64.add("w", (2,), rng)
    counter = iter(range(100))
    with pytest.raises(ContractError):
        gradient_check(lambda g: float(next(counter)), store64)


def test_relative_error_of_zero_gradients_is_zero():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert elementwise_error(np.zeros(3), np.zeros(3)) == 0.0
    assert elementwise_error(np.array([1.0, 2.0]), np.array([1.0, -2.0])) == 1.0


def test_one_wrong_small_entry_shows_per_entry(float64):
    store = ParamStore()
    store.add("w", (2,), np.random.default_rng(0))
    store["w"][...] = [1000.0, 1e-3]

    def loss(compute_grad):
        if compute_grad:
            store.grads["w"] += store["w"] * [1.0, -1.0]
        return float(0.5 * np.sum(store["w"] ** 2))

    assert gradient_check(loss, store)["w"] < 1e-4
    assert gradient_check(loss, store, per_entry=True)["w"] > 0.5


# ---- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_is_bitwise(tmp_path, rng):
    store = ParamStore()
    store.add("sit.trunk.W_c", (4, 3), rng)
    store.add("sit.trunk.b_p", (4,), init="zeros")
    store.grads["sit.trunk.W_c"] += 1.0
    adam_step(store, AdamConfig(), epoch=1)
    path = save_checkpoint(tmp_path / "c.npz", store, {"epoch": 7, "config": {"steps": 3}})
    loaded, meta = load_checkpoint(path)
    assert meta == {"epoch": 7, "config": {"steps": 3}}
    for name in store.names():
        assert loaded[name].dtype == store[name].dtype
        np.testing.assert_array_equal(loaded[name], store[name])
        np.testing.assert_array_equal(loaded.m[name], store.m[name])
        assert loaded.steps[name] == store.steps[name]


def test_checkpoint_cache_and_missing_file(tmp_path, rng):
    store = ParamStore()
    store.add("w", (2,), rng)
    path = save_checkpoint(tmp_path / "c.npz", store, {})
    first, _ = get_or_load_checkpoint(path)
    second, _ = get_or_load_checkpoint(path)
    assert first is second
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")
