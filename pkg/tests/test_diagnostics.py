import numpy as np
import pytest

from gnireg import data
from gnireg import diagnostics as dg
from gnireg import network as nw
from gnireg import objective
from gnireg.errors import ArgumentError, UnsupportedError
from gnireg.linalg import RandomSource
from gnireg.noise import NoiseSpec


def test_remainder_zero_noise_all_exact():
    rs = RandomSource(1)
    net = nw.mlp([2, 4, 2], "sigmoid", rs)
    x, y = rs.normal((8, 2)), rs.normal((8, 2))
    est = dg.estimate_remainder(net, x, y, NoiseSpec.uniform(2, 0.0), "mse",
                                100, RandomSource(2))
    assert est.reg_value == 0.0
    assert est.remainder == 0.0
    assert est.stderr == 0.0
    assert est.mc_mean == pytest.approx(est.clean_loss, rel=1e-15)


def test_remainder_deep_linear_within_three_stderr():
    rs = RandomSource(3)
    net = nw.mlp([3, 4, 4, 2], "identity", rs)
    x, y = rs.normal((16, 3)), rs.normal((16, 2))
    est = dg.estimate_remainder(net, x, y, NoiseSpec.uniform(3, 0.3), "mse",
                                10**4, RandomSource(4))
    assert abs(est.remainder) <= 3 * est.stderr
    assert est.ratio < 1


def test_remainder_stderr_shrinks_like_sqrt_draws():
    rs = RandomSource(5)
    net = nw.mlp([2, 8, 1], "sigmoid", rs)
    x, y = rs.normal((8, 2)), rs.normal((8, 1))
    spec = NoiseSpec.uniform(2, 0.5)
    errs = [dg.estimate_remainder(net, x, y, spec, "mse", n, RandomSource(6, (i,))).stderr
            for i, n in enumerate((100, 400, 1600))]
    for a, b in zip(errs, errs[1:]):
        assert abs((a / b) - 2.0) < 0.4  # 2x per quadrupling, within 20%


def test_hutchinson_quadratic_hook_is_exact():
    # grad of 0.5 ||theta||^2 is theta; FD of it is exact, every probe gives M
    theta = np.zeros(37)
    est, stderr = dg.hutchinson_trace(lambda t: t, theta, probes=8, rs=RandomSource(7))
    assert est == pytest.approx(37.0, abs=1e-6)
    assert stderr == pytest.approx(0.0, abs=1e-9)


def test_hessian_trace_one_layer_closed_form():
    # linear + MSE: trace = d_out * (mean ||x||^2 + 1), biases included
    rs = RandomSource(8)
    net = nw.mlp([3, 2], "identity", rs)
    x, y = rs.normal((10, 3)), rs.normal((10, 2))
    want = 2 * (np.mean(np.sum(x * x, axis=1)) + 1.0)
    # the brute-force trace is deterministic and must hit the formula
    assert dg.fd_hessian_trace(net, x, y, "mse") == pytest.approx(want, rel=1e-7)
    # the probe estimate carries off-diagonal sampling noise
    est, stderr = dg.hessian_trace(net, x, y, "mse", probes=64, rs=RandomSource(9))
    assert abs(est - want) <= 3 * stderr


def test_hessian_trace_matches_bruteforce_fd():
    rs = RandomSource(10)
    net = nw.mlp([2, 2, 2], "sigmoid", rs)  # 2*2+2 + 2*2+2 = 12 params
    x, y = rs.normal((6, 2)), rs.normal((6, 2))
    exact = dg.fd_hessian_trace(net, x, y, "mse")
    est, stderr = dg.hessian_trace(net, x, y, "mse", probes=128, rs=RandomSource(11))
    assert abs(est - exact) <= 3 * max(stderr, 1e-9)


def test_hessian_trace_step_invariant_for_quadratic_loss():
    rs = RandomSource(12)
    net = nw.mlp([3, 2], "identity", rs)
    x, y = rs.normal((10, 3)), rs.normal((10, 2))
    vals = [dg.hessian_trace(net, x, y, "mse", probes=16, rs=RandomSource(13),
                             fd_step=h)[0] for h in (1e-3, 1e-4, 1e-5)]
    for v in vals[1:]:
        assert v == pytest.approx(vals[0], rel=1e-6)


def test_spectrum_pure_tone():
    series = dg.spectrum([lambda z: np.sin(2 * np.pi * 5 * z)], n=1024)
    amps = series.amplitudes[0]
    assert amps[5] == pytest.approx(1.0, abs=1e-10)
    rest = np.delete(amps, 5)
    assert rest.max() < 1e-10


def test_spectrum_constant_only_mean_bin():
    series = dg.spectrum([lambda z: np.full_like(z, 3.5)], n=256)
    amps = series.amplitudes[0]
    assert amps[0] == pytest.approx(3.5, abs=1e-12)
    assert amps[1:].max() < 1e-12


def test_spectrum_two_tone_linearity():
    f = lambda z: np.sin(2 * np.pi * 5 * z) + 0.5 * np.sin(2 * np.pi * 10 * z)
    amps = dg.spectrum([f], n=1024).amplitudes[0]
    assert amps[5] == pytest.approx(1.0, abs=1e-10)
    assert amps[10] == pytest.approx(0.5, abs=1e-10)


def test_spectrum_grid_phase_invariance_for_integer_tones():
    f = lambda z: np.sin(2 * np.pi * 7 * z)
    n = 512
    a = dg.spectrum([f], z_min=0.0, z_max=1.0, n=n).amplitudes[0]
    b = dg.spectrum([f], z_min=1.0 / n, z_max=1.0 + 1.0 / n, n=n).amplitudes[0]
    assert np.abs(a - b).max() < 1e-9


def test_spectrum_requires_power_of_two_and_1d_net():
    with pytest.raises(ArgumentError):
        dg.spectrum([lambda z: z], n=1000)
    net = nw.mlp([2, 3, 1], "relu", RandomSource(14))
    with pytest.raises(UnsupportedError):
        dg.spectrum([net], n=64)


def test_spectrum_of_network_checkpoint():
    # a 1-in 1-out identity-ish net: f(z) = 2 z has known bin-0 leakage only after
    # mean removal; just sanity-check wiring and shape here
    net = nw.Network([nw.Layer(np.array([[2.0]]), np.zeros(1), "identity")])
    series = dg.spectrum([net], n=64)
    assert series.amplitudes.shape == (1, 33)
    assert series.band_sum(20).shape == (1,)


def test_parseval_pure_tone_analytic():
    lhs, rhs, gap = dg.parseval_check([5.0], n=1024)
    assert lhs == pytest.approx(0.5 * (10 * np.pi) ** 2, rel=1e-12)
    assert gap < 1e-6


def test_parseval_constant_both_zero():
    lhs, rhs, gap = dg.parseval_check([5.0], amps=[0.0], n=256)
    assert lhs == 0.0 and rhs == pytest.approx(0.0, abs=1e-20)


def test_parseval_two_tone_termwise():
    lhs, rhs, gap = dg.parseval_check([5.0, 10.0], amps=[1.0, 0.5], n=1024)
    want = 0.5 * ((10 * np.pi) ** 2 + 0.25 * (20 * np.pi) ** 2)
    assert lhs == pytest.approx(want, rel=1e-12)
    assert rhs == pytest.approx(want, rel=1e-6)
    assert gap < 1e-6


def test_parseval_fd_derivative_within_loose_tolerance():
    lhs, rhs, gap = dg.parseval_check([5.0, 10.0], amps=[1.0, 0.5], n=1024,
                                      use_fd=True)
    assert gap < 1e-3


def test_layer_stats_zeroed_and_all_active():
    w_sq = np.zeros((3, 3))
    net = nw.Network([
        nw.Layer(np.ones((3, 2)), np.zeros(3), "relu"),
        nw.Layer(w_sq, np.zeros(3), "relu"),
        nw.Layer(np.ones((1, 3)), np.zeros(1), "identity"),
    ])
    rows = dg.layer_stats(net, np.array([[1.0, 1.0]]))
    assert len(rows) == 1 and rows[0]["layer"] == 1
    assert rows[0]["masked_fro_sq"] == 0.0 and rows[0]["trace_w"] == 0.0

    net.layers[1].w = np.eye(3) * 2.0
    net.layers[1].b += 1.0  # all units active
    rows = dg.layer_stats(net, np.array([[1.0, 1.0]]))
    assert rows[0]["masked_fro_sq"] == pytest.approx(rows[0]["fro_sq"]) == 12.0
    assert rows[0]["active_fraction"] == 1.0


def test_layer_stats_batch_average():
    # one element activates the unit, one does not: masked norm is the mean
    net = nw.Network([
        nw.Layer(np.array([[1.0]]), np.zeros(1), "relu"),
        nw.Layer(np.array([[3.0]]), np.zeros(1), "relu"),
        nw.Layer(np.array([[1.0]]), np.zeros(1), "identity"),
    ])
    rows = dg.layer_stats(net, np.array([[1.0], [-1.0]]))
    row = next(r for r in rows if r["layer"] == 1)
    assert row["masked_fro_sq"] == pytest.approx(0.5 * 9.0)


def test_layer_stats_warns_when_no_square_layers():
    net = nw.mlp([2, 5, 1], "relu", RandomSource(15))
    with pytest.warns(UserWarning):
        rows = dg.layer_stats(net, np.zeros((1, 2)))
    assert rows == []


def test_layer_stats_column_convention_differs():
    rs = RandomSource(16)
    net = nw.mlp([2, 4, 4, 1], "relu", rs)
    x = rs.normal((32, 2))
    row_stats = dg.layer_stats(net, x, "row")
    col_stats = dg.layer_stats(net, x, "col")
    assert len(row_stats) == len(col_stats) == 1
    assert row_stats[0]["fro_sq"] == col_stats[0]["fro_sq"]


def test_margin_linear_hand_example():
    net = nw.Network([nw.Layer(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2),
                               "identity")])
    rep = dg.margin_bounds(net, np.array([[2.0, 1.0]]))
    assert rep.gap[0] == pytest.approx(1.0)
    assert rep.j0_fro[0] == pytest.approx(np.sqrt(2.0))
    assert rep.bound[0] == pytest.approx(0.5)
    exact = dg.linear_flip_distance(net.layers[0].w, net.layers[0].b,
                                    np.array([2.0, 1.0]))
    assert exact == pytest.approx(1.0 / np.sqrt(2.0))
    assert rep.bound[0] <= exact


def test_margin_tied_logits_zero_bound():
    net = nw.Network([nw.Layer(np.eye(2), np.zeros(2), "identity")])
    rep = dg.margin_bounds(net, np.array([[1.0, 1.0]]))
    assert rep.bound[0] == pytest.approx(0.0)


def test_margin_ordering_invariant_to_logit_scaling():
    rs = RandomSource(17)
    w = rs.normal((3, 4))
    x = rs.normal((20, 4))
    net1 = nw.Network([nw.Layer(w, np.zeros(3), "identity")])
    net2 = nw.Network([nw.Layer(5.0 * w, np.zeros(3), "identity")])
    b1 = dg.margin_bounds(net1, x).bound
    b2 = dg.margin_bounds(net2, x).bound
    assert np.array_equal(np.argsort(b1), np.argsort(b2))
    assert np.allclose(b1, b2)  # gap and J_0 both scale by c


def test_margin_requires_two_outputs():
    net = nw.mlp([2, 3, 1], "relu", RandomSource(18))
    with pytest.raises(UnsupportedError):
        dg.margin_bounds(net, np.zeros((1, 2)))


def test_flip_distance_respects_linear_oracle():
    rs = RandomSource(19)
    w = rs.normal((3, 2))
    net = nw.Network([nw.Layer(w, np.zeros(3), "identity")])
    x = rs.normal(2) * 2.0
    exact = dg.linear_flip_distance(w, np.zeros(3), x)
    found = dg.flip_distance(net, x, n_directions=200, rs=RandomSource(20))
    assert found >= exact - 1e-6
    assert found <= 3.0 * exact  # random directions get close in 2-D


def test_sensitivity_alpha_zero_is_clean_accuracy():
    ds = data.gen_blobs(2, 50, dim=2, separation=5.0, seed=21)
    rs = RandomSource(22)
    net = nw.mlp([2, 8, 2], "relu", rs)
    accs = dg.sensitivity_sweep(net, ds.inputs, ds.targets, [0.0], draws=4,
                                rs=RandomSource(23))
    out = nw.forward_batch(net, ds.inputs).output
    assert accs[0] == pytest.approx(float(np.mean(out.argmax(1) == ds.targets)))


def test_sensitivity_huge_noise_reaches_chance():
    ds = data.gen_blobs(2, 200, dim=2, separation=3.0, seed=24)
    # a trained-ish linear classifier: least squares
    x1 = np.hstack([ds.inputs, np.ones((ds.n, 1))])
    y = np.eye(2)[ds.targets]
    sol, *_ = np.linalg.lstsq(x1, y, rcond=None)
    net = nw.Network([nw.Layer(sol[:2].T, sol[2], "identity")])
    accs = dg.sensitivity_sweep(net, ds.inputs, ds.targets, [0.0, 1000.0],
                                draws=32, rs=RandomSource(25))
    assert accs[0] > 0.9
    assert abs(accs[1] - 0.5) < 0.1


def test_gni_training_slows_sensitivity_decay():
    # gni-trained nets keep accuracy at the largest alpha at least as well as
    # baseline (majority over 5 seeds), riding on input-Jacobian shrinkage
    from gnireg import trainer
    from gnireg.noise import NoiseSpec

    wins = 0
    j0_shrunk = 0
    for seed in range(5):
        train_ds = data.gen_blobs(3, 80, dim=2, separation=2.5, seed=seed)
        test_ds = data.gen_blobs(3, 200, dim=2, separation=2.5, seed=seed + 500)
        accs, j0 = {}, {}
        for mode in ("baseline", "gni"):
            net = nw.mlp([2, 32, 32, 3], "relu", RandomSource(seed, (3,)))
            cfg = trainer.TrainConfig(mode=mode, loss_kind="cross_entropy",
                                      noise=NoiseSpec.uniform(3, 0.1),
                                      learning_rate=0.05, batch_size=32,
                                      steps=4000, seed=seed, eval_every=4000)
            out, _ = trainer.train(net, train_ds, cfg)
            accs[mode] = dg.sensitivity_sweep(out, test_ds.inputs, test_ds.targets,
                                              [0.0, 2.0], draws=8,
                                              rs=RandomSource(seed, (9,)))
            j0[mode] = float(dg.margin_bounds(out, test_ds.inputs).j0_fro.mean())
        wins += accs["gni"][-1] >= accs["baseline"][-1]
        j0_shrunk += j0["gni"] < j0["baseline"]
    assert wins >= 3
    assert j0_shrunk >= 3


def test_spearman_basic():
    assert dg.spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert dg.spearman([1, 2, 3, 4], [8, 6, 4, 2]) == pytest.approx(-1.0)
    assert abs(dg.spearman([1, 2, 3, 4], [3, 1, 4, 2])) < 1.0


def test_dominance_scan_deterministic_and_flags_degenerate():
    ds = data.gen_sinusoid(64, freqs=[3], seed=26)
    rows_a = dg.dominance_scan([1, 8, 8, 1], ds, [0.0, 0.1], inits=2, draws=50,
                               batch_size=8, seed=27)
    rows_b = dg.dominance_scan([1, 8, 8, 1], ds, [0.0, 0.1], inits=2, draws=50,
                               batch_size=8, seed=27)
    assert repr(rows_a) == repr(rows_b)  # nan-safe comparison
    assert len(rows_a) == 4
    degenerate = [r for r in rows_a if r["sigma2"] == 0.0]
    assert all(r["degenerate"] and np.isnan(r["ratio"]) for r in degenerate)
    live = [r for r in rows_a if not r["degenerate"]]
    assert all(r["R"] > 0 for r in live)
