"""Trainer contracts: ledger state machine, reductions, determinism."""

import numpy as np
import pytest

from advlab import losses
from advlab.data import blob_centers, gen_gaussian_blobs, gen_linear_margin
from advlab.errors import ConfigurationError
from advlab.net import Network, accuracy, init_network
from advlab.train import (
    EpsilonLedger,
    TrainConfig,
    ledger_update,
    train,
    train_adv,
    train_cat,
    train_natural,
    train_trades,
)


def nets_equal(a, b):
    return all(np.array_equal(wa, wb) for wa, wb in zip(a.weights, b.weights)) and \
        all(np.array_equal(ba, bb) for ba, bb in zip(a.biases, b.biases))


# ---------------------------------------------------------------- ledger


def test_ledger_fail_from_zero_earns_eta():
    led = EpsilonLedger(np.array([0]), eta=0.005, eps_max=0.1)
    ledger_update(led, 0, attack_succeeded=False)
    assert led.get(0) == pytest.approx(0.005)


def test_ledger_success_keeps_value():
    led = EpsilonLedger(np.array([0]), eta=0.005, eps_max=0.1)
    led.update(0, False)
    led.update(0, True)
    assert led.get(0) == pytest.approx(0.005)


def test_ledger_clamps_at_eps_max():
    led = EpsilonLedger(np.array([7]), eta=0.03, eps_max=0.05)
    for _ in range(5):
        led.update(7, False)
    assert led.get(7) == 0.05


def test_ledger_ten_fails_arithmetic():
    led = EpsilonLedger(np.array([1]), eta=0.005, eps_max=1.0)
    for _ in range(10):
        led.update(1, False)
    assert led.get(1) == pytest.approx(0.05)


def test_ledger_state_machine_10k_transitions():
    # invariants: always in [0, eps_max]; each commit moves by 0 or +eta
    # before the clamp
    rng = np.random.default_rng(0)
    ids = np.arange(50)
    eta, eps_max = 0.005, 0.031
    led = EpsilonLedger(ids, eta=eta, eps_max=eps_max)
    for _ in range(10_000):
        sid = int(rng.integers(50))
        before = led.get(sid)
        ok = bool(rng.random() < 0.5)
        led.update(sid, ok)
        after = led.get(sid)
        assert 0.0 <= after <= eps_max + 1e-15
        raw = before if ok else before + eta
        assert after == pytest.approx(min(raw, eps_max), abs=1e-15)
        step = abs(after - before)
        assert step < 1e-15 or abs(step - eta) < 1e-12 or after == eps_max


def test_ledger_tentative_and_mean():
    led = EpsilonLedger(np.array([0, 1, 2]), eta=0.01, eps_max=1.0)
    led.update(0, False)
    assert np.allclose(led.tentative(np.array([0, 1])), [0.02, 0.01])
    assert led.mean() == pytest.approx(0.01 / 3)


# ---------------------------------------------------------------- natural


def small_linear_dataset():
    return gen_linear_margin(50, margin=1.75, seed=0)


def test_natural_reaches_full_train_accuracy():
    ds = small_linear_dataset()
    net = init_network([2, 2], seed=1)
    cfg = TrainConfig(trainer="natural", epochs=200, batch_size=ds.n, lr=0.5,
                      momentum=0.0, weight_decay=0.0, seed=3)
    rep = train_natural(net, ds, cfg)
    assert rep.clean_train_acc[-1] == 1.0


def test_natural_zero_epochs_returns_net_unchanged():
    ds = small_linear_dataset()
    net = init_network([2, 4, 2], seed=2)
    rep = train_natural(net, ds, TrainConfig(trainer="natural", epochs=0))
    assert rep.net is net
    assert rep.epochs == []


def test_natural_fullbatch_linear_loss_nonincreasing():
    # full-batch CE on a linear model is convex: small-step plain SGD descends
    ds = small_linear_dataset()
    net = Network([np.zeros((2, 2))], [np.zeros(2)], ["identity"])
    cfg = TrainConfig(trainer="natural", epochs=50, batch_size=ds.n, lr=0.05,
                      momentum=0.0, weight_decay=0.0, seed=0)
    rep = train_natural(net, ds, cfg)
    assert np.all(np.diff(rep.mean_loss) <= 1e-12)


def test_natural_deterministic():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="natural", epochs=3, batch_size=16, seed=11)
    a = train_natural(init_network([2, 4, 2], seed=5), ds, cfg)
    b = train_natural(init_network([2, 4, 2], seed=5), ds, cfg)
    assert nets_equal(a.net, b.net)
    assert a.mean_loss == b.mean_loss


# ---------------------------------------------------------------- adversarial


def test_adv_eps_zero_matches_natural_bitwise():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="adv", epochs=3, batch_size=16, seed=7)
    nat = train_natural(init_network([2, 6, 2], seed=8), ds, cfg)
    adv = train_adv(init_network([2, 6, 2], seed=8), ds, cfg, eps_fixed=0.0)
    assert nets_equal(nat.net, adv.net)
    assert nat.mean_loss == adv.mean_loss


def test_adv_requires_eps():
    ds = small_linear_dataset()
    with pytest.raises(ConfigurationError):
        train_adv(init_network([2, 2], seed=0), ds, TrainConfig(trainer="adv", epochs=1))


def test_adv_mean_eps_column_is_fixed_budget():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="adv", epochs=2, batch_size=50, attack_steps=3, seed=1)
    rep = train_adv(init_network([2, 4, 2], seed=1), ds, cfg, eps_fixed=0.25)
    assert rep.mean_eps == [0.25, 0.25]


def test_adv_trains_robustly_on_separable_data():
    ds = gen_linear_margin(60, margin=1.75, seed=4)
    cfg = TrainConfig(trainer="adv", epochs=30, batch_size=30, lr=0.2,
                      attack_steps=5, seed=2)
    rep = train_adv(init_network([2, 2], seed=3), ds, cfg, eps_fixed=1.0)
    assert rep.clean_train_acc[-1] >= 0.99


# ---------------------------------------------------------------- trades


def test_trades_beta_zero_matches_natural_bitwise():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="trades", epochs=3, batch_size=16, seed=9,
                      trades_beta=0.0, eps_fixed=0.5)
    nat = train_natural(init_network([2, 6, 2], seed=10), ds,
                        TrainConfig(trainer="natural", epochs=3, batch_size=16, seed=9))
    tra = train_trades(init_network([2, 6, 2], seed=10), ds, cfg)
    assert nets_equal(nat.net, tra.net)


def test_trades_eps_zero_matches_natural_bitwise():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="trades", epochs=3, batch_size=16, seed=9,
                      trades_beta=6.0, eps_fixed=0.0)
    nat = train_natural(init_network([2, 6, 2], seed=10), ds,
                        TrainConfig(trainer="natural", epochs=3, batch_size=16, seed=9))
    tra = train_trades(init_network([2, 6, 2], seed=10), ds, cfg)
    assert nets_equal(nat.net, tra.net)


def test_trades_loss_nonnegative_and_deterministic():
    ds = small_linear_dataset()
    cfg = TrainConfig(trainer="trades", epochs=3, batch_size=25, seed=12,
                      trades_beta=2.0, eps_fixed=0.3, attack_steps=5)
    a = train_trades(init_network([2, 6, 2], seed=13), ds, cfg)
    b = train_trades(init_network([2, 6, 2], seed=13), ds, cfg)
    assert all(v >= 0 for v in a.mean_loss)  # CE >= 0 and beta*KL >= 0
    assert nets_equal(a.net, b.net)


def test_trades_improves_robustness_over_natural():
    from advlab.attacks import AttackSpec, attack_dataset
    ds = gen_linear_margin(60, margin=1.75, seed=6)
    cfg = TrainConfig(trainer="trades", epochs=40, batch_size=30, lr=0.2, seed=3,
                      trades_beta=6.0, eps_fixed=1.0, attack_steps=5)
    nat = train_natural(init_network([2, 2], seed=4), ds,
                        TrainConfig(trainer="natural", epochs=40, batch_size=30,
                                    lr=0.2, seed=3))
    tra = train_trades(init_network([2, 2], seed=4), ds, cfg)
    spec = AttackSpec.for_eval(1.0, steps=10)
    rob_nat = 1.0 - attack_dataset(nat.net, ds, spec, seed=0).success.mean()
    rob_tra = 1.0 - attack_dataset(tra.net, ds, spec, seed=0).success.mean()
    assert rob_tra >= rob_nat


# ---------------------------------------------------------------- cat


def frozen_cfg(**kw):
    base = dict(trainer="cat", lr=0.0, momentum=0.0, weight_decay=0.0,
                batch_size=32, attack_steps=5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_cat_ledger_climbs_to_eps_max_when_model_always_robust():
    # a frozen (lr=0) max-margin linear model resists every small attack, so
    # every sample's budget climbs eta per epoch and clamps at eps_max
    ds = gen_linear_margin(20, margin=1.75, seed=0)
    w = np.stack([-np.array(ds.meta["normal"]), np.array(ds.meta["normal"])])
    net = Network([10.0 * w], [np.zeros(2)], ["identity"])
    eta, eps_max = 0.005, 0.02
    cfg = frozen_cfg(epochs=6, eta=eta, eps_max=eps_max, c=10.0)
    rep = train_cat(net, ds, cfg)
    # ceil(eps_max/eta) = 4 epochs to reach the cap
    assert rep.mean_eps[3] == pytest.approx(eps_max)
    assert rep.mean_eps[-1] == pytest.approx(eps_max)
    assert rep.mean_eps[2] == pytest.approx(3 * eta)


def test_cat_ledger_stays_zero_for_hopeless_sample():
    # frozen model misclassifies one mislabeled point: its attack always
    # "succeeds" immediately, so its budget never leaves 0
    ds = gen_linear_margin(20, margin=1.75, seed=1)
    labels = ds.labels.copy()
    labels[0] = 1 - labels[0]  # poison one label
    from advlab.data import Dataset
    poisoned = Dataset(ds.x, labels, ds.ids, 2)
    w = np.stack([-np.array(ds.meta["normal"]), np.array(ds.meta["normal"])])
    net = Network([10.0 * w], [np.zeros(2)], ["identity"])
    cfg = frozen_cfg(epochs=5, eta=0.005, eps_max=0.05)
    rep = train_cat(net, poisoned, cfg)
    assert rep.ledger.get(0) == 0.0
    assert rep.ledger.get(1) == pytest.approx(5 * 0.005)


def test_cat_c_zero_smoothed_labels_are_onehot(monkeypatch):
    # IAAT reduction: with c=0 every smoothing call must emit exact one-hot rows
    seen = []
    original = losses.smooth_dist

    def spy(ys, k, alphas, us):
        out = original(ys, k, alphas, us)
        seen.append((np.asarray(ys).copy(), out.copy()))
        return out

    monkeypatch.setattr(losses, "smooth_dist", spy)
    ds = gen_linear_margin(16, margin=1.0, seed=2)
    cfg = TrainConfig(trainer="cat", epochs=2, batch_size=8, c=0.0, eta=0.01,
                      eps_max=0.05, attack_steps=3, seed=5)
    train_cat(init_network([2, 4, 2], seed=6), ds, cfg)
    assert seen
    for ys, rows in seen:
        assert np.array_equal(rows, np.eye(2)[ys])


def test_cat_deterministic_bitwise():
    ds = gen_gaussian_blobs(20, 2, 4, blob_centers(2, 4, 1.0), 0.2, seed=3)
    cfg = TrainConfig(trainer="cat", epochs=3, batch_size=16, eta=0.01,
                      eps_max=0.05, attack_steps=4, seed=21)
    a = train_cat(init_network([4, 8, 2], seed=20), ds, cfg)
    b = train_cat(init_network([4, 8, 2], seed=20), ds, cfg)
    assert nets_equal(a.net, b.net)
    assert a.mean_eps == b.mean_eps
    assert a.ledger.snapshot() == b.ledger.snapshot()


def test_cat_mix_variant_runs_and_differs_from_ce():
    ds = gen_linear_margin(20, margin=1.0, seed=4)
    common = dict(epochs=3, batch_size=20, eta=0.01, eps_max=0.05,
                  attack_steps=3, seed=8)
    ce = train_cat(init_network([2, 5, 2], seed=9), ds,
                   TrainConfig(trainer="cat", loss_variant="ce", **common))
    mix = train_cat(init_network([2, 5, 2], seed=9), ds,
                    TrainConfig(trainer="cat", loss_variant="mix", kappa=10.0, **common))
    assert not nets_equal(ce.net, mix.net)


def test_cat_ledger_bounds_invariant_during_training():
    ds = gen_linear_margin(30, margin=1.75, seed=5)
    cfg = TrainConfig(trainer="cat", epochs=8, batch_size=15, eta=0.01,
                      eps_max=0.03, attack_steps=3, seed=30, lr=0.1)
    rep = train_cat(init_network([2, 6, 2], seed=31), ds, cfg)
    vals = np.array(list(rep.ledger.snapshot().values()))
    assert np.all(vals >= 0.0) and np.all(vals <= 0.03 + 1e-15)
    assert all(0.0 <= m <= 0.03 + 1e-15 for m in rep.mean_eps)


# ---------------------------------------------------------------- dispatch


def test_train_dispatch():
    ds = small_linear_dataset()
    net = init_network([2, 3, 2], seed=0)
    for kind in ("natural", "trades"):
        rep = train(net, ds, TrainConfig(trainer=kind, epochs=1, batch_size=50,
                                         eps_fixed=0.1, attack_steps=2))
        assert len(rep.epochs) == 1
    rep = train(net, ds, TrainConfig(trainer="adv", epochs=1, batch_size=50,
                                     eps_fixed=0.1, attack_steps=2))
    assert rep.mean_eps == [0.1]
    rep = train(net, ds, TrainConfig(trainer="cat", epochs=1, batch_size=50,
                                     attack_steps=2))
    assert rep.ledger is not None


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigurationError):
        TrainConfig(loss_variant="huber")
    with pytest.raises(ConfigurationError):
        TrainConfig(trainer="dqn")
    with pytest.raises(ConfigurationError):
        TrainConfig(eta=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(momentum=1.0)


def test_lr_schedule_steps_down():
    cfg = TrainConfig(lr=1.0, lr_decay_epochs=(3, 5), lr_decay_factor=0.1)
    assert cfg.lr_at(1) == 1.0
    assert cfg.lr_at(3) == pytest.approx(0.1)
    assert cfg.lr_at(5) == pytest.approx(0.01)
    assert cfg.lr_at(9) == pytest.approx(0.01)
