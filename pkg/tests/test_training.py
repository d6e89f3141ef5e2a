import csv

import numpy as np
import pytest

from spikefuse.autodiff import GradientSet
from spikefuse.errors import ConfigError, DataError, DivergenceError
from spikefuse.events import PairedInstance
from spikefuse.topology import ArchitectureSpec, ParameterStore, build
from spikefuse.training import Adam, Checkpoint, TrainConfig, evaluate, train, write_metrics_csv

SMALL = ArchitectureSpec("fusion-late", [16, 8], [16, 8], [8])


def test_adam_two_step_trace():
    lr, eps = 1e-3, 1e-8
    p = {"w": np.array([0.5])}
    opt = Adam(lr, 0.9, 0.999, eps)
    g = {"w": np.array([1.0])}
    opt.step(p, g)
    # m = 0.1, v = 0.001, bias-corrected both to 1
    m_hat = 0.1 / (1 - 0.9)
    v_hat = 0.001 / (1 - 0.999)
    step1 = lr * m_hat / (np.sqrt(v_hat) + eps)
    assert p["w"][0] == 0.5 - step1
    assert step1 == pytest.approx(lr / (1 + eps), rel=1e-12)
    opt.step(p, g)
    m2, v2 = 0.9 * 0.1 + 0.1, 0.999 * 0.001 + 0.001
    step2 = lr * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999**2)) + eps)
    assert p["w"][0] == pytest.approx(0.5 - step1 - step2, abs=1e-15)
    assert step2 == pytest.approx(lr, rel=1e-7)


def test_adam_keeps_dtype():
    p = {"w": np.ones(3, dtype=np.float32)}
    Adam(0.1).step(p, {"w": np.ones(3)})
    assert p["w"].dtype == np.float32


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(precision="half")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochz": 3})
    assert TrainConfig.from_dict(TrainConfig(seed=4).to_dict()).seed == 4


def _fast(**kw):
    base = dict(epochs=2, batch_size=8, patience=None, workers=1, calibration_size=8)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_leaves_parameters(tiny_synthetic):
    train_set, test_set = tiny_synthetic
    ckpt, _ = train(SMALL, train_set, test_set, _fast(learning_rate=0.0, epochs=0))
    ckpt2, _ = train(SMALL, train_set, test_set, _fast(learning_rate=0.0, epochs=3))
    assert ckpt.store.bitwise_equal(ckpt2.store)


def test_training_is_deterministic(tiny_synthetic):
    train_set, test_set = tiny_synthetic
    a, ma = train(SMALL, train_set, test_set, _fast(seed=3))
    b, mb = train(SMALL, train_set, test_set, _fast(seed=3, workers=3))
    assert ma == mb
    assert a.store.bitwise_equal(b.store)
    c, mc = train(SMALL, train_set, test_set, _fast(seed=4))
    assert not a.store.bitwise_equal(c.store)


def test_metrics_shape_and_csv(tiny_synthetic, tmp_path):
    train_set, test_set = tiny_synthetic
    ckpt, metrics = train(SMALL, train_set, test_set, _fast(epochs=3))
    assert [m["epoch"] for m in metrics] == [1, 2, 3]
    best = max(m["test_acc"] for m in metrics)
    assert metrics[ckpt.epoch - 1]["test_acc"] == best
    write_metrics_csv(metrics, tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert list(rows[0]) == ["epoch", "train_loss", "train_acc", "test_acc"]


def test_early_stopping(tiny_synthetic):
    train_set, test_set = tiny_synthetic
    _, metrics = train(SMALL, train_set, test_set, _fast(epochs=30, patience=1, learning_rate=0.0))
    assert len(metrics) == 2


def test_checkpoint_round_trip(tiny_synthetic, tmp_path):
    train_set, test_set = tiny_synthetic
    ckpt, _ = train(SMALL, train_set, test_set, _fast())
    ckpt.save(tmp_path / "ck")
    loaded = Checkpoint.load(tmp_path / "ck")
    assert loaded.store.bitwise_equal(ckpt.store)
    assert loaded.spec == ckpt.spec
    size = (tmp_path / "ck" / "params.bin").stat().st_size
    assert size == 4 * ckpt.store.num_parameters
    acc1, c1 = evaluate(ckpt, test_set)
    acc2, c2 = evaluate(loaded, test_set)
    assert acc1 == acc2 and np.array_equal(c1, c2)


def test_checkpoint_rejects_truncated_blob(tiny_synthetic, tmp_path):
    spec = ArchitectureSpec("unimodal-auditory", [], [4], [], 10, {"auditory": 700})
    _, store = build(spec, 0)
    Checkpoint(spec, store, {}).save(tmp_path / "ck")
    blob = tmp_path / "ck" / "params.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(DataError):
        Checkpoint.load(tmp_path / "ck")


def test_evaluate_constant_predictor():
    spec = ArchitectureSpec("unimodal-auditory", [], [], [], 10, {"auditory": 3})
    _, store = build(spec, 0)
    for k in store:
        store[k][...] = 0
    store["readout.bias"][0] = 5.0  # class 0 always wins
    data = [PairedInstance(None, np.ones((10, 3), np.float32), k % 10) for k in range(50)]
    acc, correct = evaluate(Checkpoint(spec, store, {}), data)
    assert acc == pytest.approx(0.1)
    assert len(correct) == 50
    acc2, correct2 = evaluate(Checkpoint(spec, store, {}), data)
    assert np.array_equal(correct, correct2)


def test_evaluate_modality_mismatch(tiny_synthetic):
    _, store = build(SMALL, 0)
    data = [PairedInstance(p.visual, None, p.label) for p in tiny_synthetic[1]]
    with pytest.raises(DataError):
        evaluate(Checkpoint(SMALL, store, {}), data)


def test_empty_data():
    with pytest.raises(DataError):
        train(SMALL, [], [], _fast())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_with_context(tiny_synthetic):
    train_set, test_set = tiny_synthetic
    broken = [PairedInstance(p.visual * np.float32(np.inf), p.auditory, p.label) for p in train_set]
    with pytest.raises(DivergenceError) as info:
        train(SMALL, broken, test_set, _fast(init_calibration=None))
    assert info.value.epoch == 1 and info.value.batch == 0


def test_clip_norm(tiny_synthetic):
    train_set, test_set = tiny_synthetic
    _, m1 = train(SMALL, train_set, test_set, _fast(clip_norm=1e-6, learning_rate=0.01))
    _, m2 = train(SMALL, train_set, test_set, _fast(learning_rate=0.01))
    assert m1 != m2


def test_gradient_set_arithmetic():
    g = GradientSet({"a": np.array([3.0, 4.0])})
    assert g.global_norm() == 5.0
    assert (g + g)["a"].tolist() == [6.0, 8.0]
    assert g.scaled(0.5)["a"].tolist() == [1.5, 2.0]


def test_parameter_store_copy_is_independent():
    s = ParameterStore({"a": np.zeros(2)})
    c = s.copy()
    c["a"][0] = 1
    assert s["a"][0] == 0
