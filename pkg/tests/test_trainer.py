import json
import math

import numpy as np
import pytest

from qpinn.geometry import MixerSpec, Region, generate_mixer
from qpinn.network import ModelParams, forward, init_params, load_checkpoint, mlp_forward, save_checkpoint
from qpinn.physics import LossBreakdown, loss_and_grad, total_loss
from qpinn.quantum import encode_features, run_circuit
from qpinn.trainer import (
    DivergenceError,
    RunReport,
    TrainConfig,
    compare,
    load_run,
    train_classical,
    train_hybrid,
    transfer_learn,
)

from _oracles import fd_gradient

SPEC = MixerSpec(grid_step=0.25)


@pytest.fixture(scope="module")
def cloud():
    return generate_mixer(SPEC)


def cfg(**kw):
    base = dict(adam_epochs=2, lbfgs_epochs=2, geometry=SPEC, deterministic=True)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_initialization(tmp_path, cloud):
    r = train_classical(cfg(adam_epochs=0, lbfgs_epochs=0, seed=4), tmp_path, cloud=cloud)
    assert r.history == [] and r.epochs == 0
    np.testing.assert_array_equal(r.params.flat(), init_params(4).flat())
    np.testing.assert_array_equal(load_checkpoint(r.checkpoint_path).flat(), init_params(4).flat())
    assert (tmp_path / "loss.csv").read_text().count("\n") == 1


def test_run_directory_layout(tmp_path, cloud):
    r = train_classical(cfg(checkpoint_every=2), tmp_path, cloud=cloud)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"config.yaml", "loss.csv", "report.json", "checkpoint_2.json", "checkpoint_4.json"} <= names
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["epochs"] == 4 and summary["phases"] == ["adam", "adam", "lbfgs", "lbfgs"]
    assert r.checkpoint_path.endswith("checkpoint_4.json")


def test_one_step_per_epoch_and_history_invariant(cloud):
    r = train_classical(cfg(adam_epochs=3, lbfgs_epochs=3), cloud=cloud)
    assert r.epochs == 6
    for b in r.history:
        assert abs(b.total - sum(b.terms())) <= 1e-15 * b.total
    assert r.history[0] == loss_and_grad(init_params(0), cloud)[0]


def test_deterministic_runs_are_bit_identical(cloud):
    a = train_classical(cfg(seed=2), cloud=cloud)
    b = train_classical(cfg(seed=2), cloud=cloud)
    assert a.history == b.history
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())


def test_checkpoint_round_trip_then_one_epoch(tmp_path, cloud):
    c = cfg(adam_epochs=1, lbfgs_epochs=0)
    start = train_classical(cfg(adam_epochs=3, lbfgs_epochs=0), cloud=cloud).params
    save_checkpoint(start, tmp_path / "s.json")
    direct = train_classical(c, init=start, cloud=cloud)
    resumed = train_classical(c, init=load_checkpoint(tmp_path / "s.json"), cloud=cloud)
    np.testing.assert_array_equal(direct.params.flat(), resumed.params.flat())
    assert direct.history == resumed.history


def test_divergence_aborts_with_last_finite_checkpoint(tmp_path, cloud):
    p = init_params(0)
    flat = p.flat()
    flat[0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train_classical(cfg(), tmp_path, init=p.with_flat(flat), cloud=cloud)
    report = info.value.report
    assert report.diverged and report.epochs == 0
    assert (tmp_path / "checkpoint_0.json").exists()


def test_transfer_zero_epochs_returns_base(tmp_path):
    base = init_params(3)
    [r] = transfer_learn(base, [30.0], 0, cfg(), tmp_path)
    np.testing.assert_array_equal(r.params.flat(), base.flat())
    assert (tmp_path / "alpha_30" / "checkpoint_0.json").exists()


def test_transfer_chains_checkpoints(tmp_path):
    base = init_params(3)
    reports = transfer_learn(base, [31.0, 32.0], 2, cfg(geometry=MixerSpec(grid_step=0.3)), tmp_path)
    first_ckpt = load_checkpoint(reports[0].checkpoint_path)
    # the 32 degree step starts from the 31 degree result
    second_start = reports[1].history[0]
    expected, _ = loss_and_grad(first_ckpt, generate_mixer(MixerSpec(alpha=32.0, grid_step=0.3)))
    assert second_start == expected
    assert reports[1].config["initialized_from"] == reports[0].checkpoint_path
    assert reports[0].config["geometry"]["alpha"] == 31.0


def test_transfer_rejects_architecture_mismatch():
    with pytest.raises(ValueError):
        transfer_learn(init_params(0, "hybrid"), [31.0], 1, cfg())


def test_hybrid_identity_head_baseline(cloud):
    p = init_params(0, "hybrid")
    arrays = dict(p.arrays)
    arrays["vqc.theta"] = np.zeros(16)
    arrays["head.weight"] = np.eye(4)
    arrays["head.bias"] = np.zeros(4)
    p = ModelParams(p.arch, arrays)
    spec = p.arch.circuit

    def trunk_plus_fixed(params, x):
        return run_circuit(spec, encode_features(mlp_forward(params, x)), np.zeros(16))

    a = total_loss(cloud, forward, p)
    b = total_loss(cloud, trunk_plus_fixed, p)
    assert a == b


def _ten_points(seed=0):
    c = generate_mixer(MixerSpec(grid_step=0.15))
    rng = np.random.default_rng(seed)
    idx = []
    for region, k in zip(Region, (4, 2, 2, 2)):
        idx += list(rng.choice(np.flatnonzero(c.mask(region)), k, replace=False))
    return c.subset(np.sort(idx))


def test_hybrid_gradient_matches_fd_on_sample():
    cl = _ten_points()
    p = init_params(1, "hybrid")
    _, g = loss_and_grad(p, cl)
    names = list(p.arch.param_shapes())
    offsets = np.cumsum([0] + [int(np.prod(s)) for s in p.arch.param_shapes().values()])
    theta = np.arange(offsets[names.index("vqc.theta")], offsets[names.index("vqc.theta") + 1])
    trunk = np.random.default_rng(0).choice(offsets[names.index("vqc.theta")], 200, replace=False)
    idx = np.concatenate([theta, trunk])
    fd = fd_gradient(p.arch, p.flat(), cl, idx)
    assert np.all(np.abs(g[idx] - fd) <= 1e-5 * np.maximum(np.abs(fd), 1e-4))


def test_hybrid_minibatch_determinism(cloud):
    trunk = init_params(0)
    c = cfg(variant="hybrid", adam_epochs=2, lbfgs_epochs=0, batch_size=16, seed=5)
    a = train_hybrid(c, trunk, cloud=cloud)
    b = train_hybrid(c, trunk, cloud=cloud)
    assert a.history == b.history and a.phases == ["adam-minibatch"] * 2
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())
    np.testing.assert_array_equal(a.params["mlp.0.weight"].shape, (64, 3))
    assert a.params.arch.variant == "hybrid"


def test_hybrid_starts_from_trunk(cloud):
    trunk = init_params(2)
    r = train_hybrid(cfg(variant="hybrid", adam_epochs=0, lbfgs_epochs=0), trunk, cloud=cloud)
    for i in range(6):
        np.testing.assert_array_equal(r.params[f"mlp.{i}.weight"], trunk[f"mlp.{i}.weight"])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(adam_epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(variant="quantum")
    with pytest.raises(ValueError):
        TrainConfig(loss_weights=(1.0, 1.0))
    with pytest.raises(ValueError):
        train_classical(TrainConfig(variant="hybrid"))


def _report(totals):
    hist = [LossBreakdown.from_terms([t, 0, 0, 0, 0, 0, 0]) for t in totals]
    finite = [h for h in hist if math.isfinite(h.total)]
    diverged = len(finite) < len(hist)
    return RunReport(history=hist, final=None if diverged else hist[-1], diverged=diverged)


def test_compare_examples():
    r = compare(_report([2.0, 1.0]), _report([2.0, 0.79]))
    assert r.relative_difference == pytest.approx(0.21, abs=1e-15)
    same = compare(_report([3.0, 1.5]), _report([3.0, 1.5]))
    assert same.relative_difference == 0.0
    assert same.loss_a == same.loss_b == [3.0, 1.5]


def test_compare_flags_nan_tail():
    r = compare(_report([2.0, 0.5, float("nan")]), _report([2.0, 1.0, 0.25]))
    assert r.truncated_a and not r.truncated_b
    assert r.final_a == 0.5
    assert r.relative_difference == pytest.approx((0.5 - 0.25) / 0.5)


def test_load_run_round_trip(tmp_path, cloud):
    r = train_classical(cfg(), tmp_path, cloud=cloud)
    back = load_run(tmp_path)
    assert back.history == r.history and back.final == r.final
    assert compare(r, back).relative_difference == 0.0
