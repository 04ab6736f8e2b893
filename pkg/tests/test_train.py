import json

import numpy as np
import pytest

from mtlg2p import train as tr
from mtlg2p.lexicon import batch_examples, build_vocabs, encode_example
from mtlg2p.metrics import classifier_metrics
from mtlg2p.model import ModelConfig, forward_batch, init_params, load_checkpoint
from mtlg2p.seeding import stream
from mtlg2p.toydata import synthetic_lexicon
from mtlg2p.train import LRSchedule, TrainConfig, TrainingAborted, TrainState, fit, lr_schedule_update, train_epoch, validate


def small_setup(n=12, hidden=6, alpha=None, seed=0):
    entries = synthetic_lexicon(n, 0.5, seed)
    vocab = build_vocabs(entries)
    cfg = ModelConfig(len(vocab.graphemes), len(vocab.phonemes), embed_dim=5, hidden_dim=hidden, cls_hidden1=4,
                      cls_hidden2=4, alpha=alpha)
    return entries, vocab, cfg, [encode_example(e, vocab) for e in entries]


def snapshot(params):
    return {n: params[n].data.copy() for n in params.names()}


# schedule ------------------------------------------------------------------------------


def test_constant_improvement_never_halves():
    s = LRSchedule(0.007, 5)
    for loss in np.linspace(1.0, 0.1, 40):
        assert s.update(loss)
    assert s.lr == 0.007 and s.halvings == 0


def test_five_stalls_halve_once():
    s = LRSchedule(0.007, 5)
    s.update(1.0)
    for _ in range(4):
        s.update(1.0)
    assert s.lr == 0.007
    s.update(1.5)
    assert s.lr == 0.0035 and s.since_best == 0 and s.best == 1.0


def test_fifty_stalls_halve_ten_times():
    s = LRSchedule(0.007, 5)
    s.update(0.5)
    lrs = []
    for _ in range(50):
        s.update(0.9)
        lrs.append(s.lr)
    assert s.halvings == 10
    assert s.lr == 0.007 * 2.0**-10
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_halving_is_exact():
    s = LRSchedule(0.007, 1)
    s.update(0.0)
    for k in range(1, 30):
        s.update(1.0)
        assert s.lr == 0.007 * 2.0**-k


def test_state_update_wrapper():
    state = TrainState(lr=0.007)
    for loss in [1.0, 0.9, 0.8, 0.95, 0.95, 0.95, 0.95]:
        assert not lr_schedule_update(state, loss)
    assert lr_schedule_update(state, 0.81)
    assert state.lr == 0.0035 and state.best_valid_loss == 0.8


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_floor=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


# fit driven by a scripted validation trace -----------------------------------------------------


def scripted_trace(n=200):
    # best at check 3, strictly worse afterwards
    return [3.0, 2.0, 1.0] + [1.5] * (n - 3)


@pytest.fixture
def scripted(monkeypatch):
    trace = iter(scripted_trace())
    seen_lrs = []

    def fake_epoch(params, examples, model_cfg, cfg, epoch, lr, optimizer=None):
        seen_lrs.append(lr)
        return 0.0

    def fake_validate(params, examples, model_cfg, cfg, threshold=0.5):
        loss = next(trace)
        return tr.Validation(loss, 0.0, loss, classifier_metrics([0.1], [0]), np.zeros(1))

    monkeypatch.setattr(tr, "train_epoch", fake_epoch)
    monkeypatch.setattr(tr, "validate", fake_validate)
    return seen_lrs


def test_scripted_trace_halving_points_and_stop(scripted):
    _, _, cfg, ex = small_setup(4)
    result = fit(init_params(cfg, 0), ex, ex, cfg, TrainConfig(max_epochs=1000))
    hist = result.state.history
    halved_at = [r.epoch for r in hist if r.next_lr < r.lr]
    assert halved_at == list(range(8, 54, 5))
    assert len(hist) == 53 == result.state.epoch
    assert result.state.lr == 0.007 * 2.0**-10 < 1e-5
    assert min(scripted) >= 1e-5  # no update ever ran below the floor
    assert [r.epoch for r in hist if r.improved] == [1, 2, 3]


def test_lr_below_floor_runs_no_epochs(scripted):
    _, _, cfg, ex = small_setup(4)
    result = fit(init_params(cfg, 0), ex, ex, cfg, TrainConfig(lr_initial=1e-6))
    assert result.state.epoch == 0 and scripted == []


def test_max_epochs_cap(scripted):
    _, _, cfg, ex = small_setup(4)
    assert fit(init_params(cfg, 0), ex, ex, cfg, TrainConfig(max_epochs=7)).state.epoch == 7


# real training ---------------------------------------------------------------------------------


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_lr_leaves_params_unchanged(optimizer):
    _, _, cfg, ex = small_setup()
    params = init_params(cfg, 0)
    before = snapshot(params)
    loss = train_epoch(params, ex, cfg, TrainConfig(optimizer=optimizer), 1, 0.0)
    assert np.isfinite(loss) and loss > 0
    assert all(np.array_equal(before[n], params[n].data) for n in before)


def test_single_batch_mean_is_batch_loss():
    _, _, cfg, ex = small_setup(6)
    params = init_params(cfg, 0)
    tcfg = TrainConfig(batch_size=len(ex))
    loss = train_epoch(params, ex, cfg, tcfg, 1, 0.0)
    (batch,) = batch_examples(ex, len(ex), tcfg.seed, 1)
    direct = forward_batch(params, batch, cfg, "train", stream(tcfg.seed, "dropout", 1, 0)).total.item()
    assert loss == direct


def test_non_finite_loss_aborts_with_batch_index():
    _, _, cfg, ex = small_setup()
    params = init_params(cfg, 0)
    params["out.b"].data[:] = np.nan
    with pytest.raises(TrainingAborted, match="batch 0"):
        train_epoch(params, ex, cfg, TrainConfig(), 1, 0.01)


def test_validate_examples():
    _, _, cfg, ex = small_setup(10)
    params = init_params(cfg, 0)
    params["cls.out.b"].data[:] = -100.0  # never predicts positive
    v1, v2 = validate(params, ex, cfg, TrainConfig()), validate(params, ex, cfg, TrainConfig())
    assert (v1.total_loss, v1.decoder_loss, v1.classifier_loss) == (v2.total_loss, v2.decoder_loss, v2.classifier_loss)
    neg = sum(1 for e in ex if not e.label) / len(ex)
    assert v1.metrics.accuracy == pytest.approx(100 * neg)
    assert (v1.metrics.precision, v1.metrics.recall, v1.metrics.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        validate(params, [], cfg, TrainConfig())


def test_alpha_one_step_keeps_classifier_bits():
    for optimizer in ("sgd", "adam"):
        _, _, cfg, ex = small_setup(alpha=1.0)
        params = init_params(cfg, 0)
        before = snapshot(params)
        train_epoch(params, ex, cfg, TrainConfig(optimizer=optimizer, batch_size=4), 1, 0.007)
        for n in before:
            same = np.array_equal(before[n], params[n].data)
            assert same == n.startswith("cls."), n


def test_fit_outputs_and_determinism(tmp_path):
    entries, vocab, cfg, ex = small_setup(16)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = fit(init_params(cfg, 1), ex[:12], ex[12:], cfg, TrainConfig(max_epochs=4, batch_size=5), out, vocab)
        runs.append((out, result))
    (a, ra), (b, _) = runs
    for f in ("history.jsonl", "best.ckpt", "final.ckpt"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    lines = [json.loads(l) for l in (a / "history.jsonl").read_text().splitlines()]
    assert len(lines) == ra.state.epoch == 4
    assert {"epoch", "lr", "train_loss", "valid_decoder_loss", "valid_classifier_loss", "valid_total_loss"} <= set(lines[0])
    best = load_checkpoint(a / "best.ckpt")
    v = validate(best.params, ex[12:], cfg, TrainConfig(batch_size=5))
    assert v.total_loss == min(l["valid_total_loss"] for l in lines)
    assert "epochs" in tr.summary(ra.state)


def test_fit_requires_vocab_for_output(tmp_path):
    _, _, cfg, ex = small_setup(4)
    with pytest.raises(ValueError):
        fit(init_params(cfg, 0), ex, ex, cfg, TrainConfig(max_epochs=1), tmp_path)
