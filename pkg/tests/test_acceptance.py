"""Acceptance gate: every criterion at its stated tolerance, one line each.

The sinusoid training runs (criteria 5-7) and the blobs calibration runs
(criterion 10) are shared via session fixtures; expect the full module to
take roughly 15-25 minutes. Run with `pytest -s tests/test_acceptance.py`
to see the per-criterion pass/fail lines as they complete.
"""

import time

import numpy as np
import pytest

from gnireg import data
from gnireg import diagnostics as dg
from gnireg import network as nw
from gnireg import objective
from gnireg import trainer
from gnireg.calibration import calibrate, calibrate_network
from gnireg.linalg import RandomSource
from gnireg.noise import NoiseSpec

from helpers import fd_param_gradient, rel_err


def _report(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] criterion {num}: {name} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# shared experiment fixtures


SINUSOID_WIDTHS = [1, 256, 256, 256, 256, 256, 1]
SINUSOID_STEPS = 3000
SINUSOID_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def sinusoid_runs():
    """Baseline / gni / explicit runs on the 10-tone task, 5 seeds each."""
    train_ds = data.gen_sinusoid(1024, seed=0)
    test_ds = data.gen_sinusoid(512, phases=0, seed=100)
    spec = NoiseSpec.uniform(6, 0.1)
    out = {}
    for seed in SINUSOID_SEEDS:
        for mode in ("baseline", "gni", "explicit"):
            net = nw.mlp(SINUSOID_WIDTHS, "relu", RandomSource(seed, (0,)),
                         init_scale=1.7)
            cfg = trainer.TrainConfig(
                mode=mode, loss_kind="mse", noise=spec, learning_rate=0.03,
                batch_size=128, steps=SINUSOID_STEPS, seed=seed,
                eval_every=SINUSOID_STEPS)
            t0 = time.time()
            trained, log = trainer.train(net, train_ds, cfg, test_ds)
            amps = dg.spectrum([trained], n=1024).amplitudes[0]
            stats = dg.layer_stats(trained, train_ds.inputs[:256])
            out[(mode, seed)] = {
                "test_loss": log.rows[-1]["test_loss"],
                "high_band": float(amps[25:].sum()),
                "spearman": dg.spearman([r["layer"] for r in stats],
                                        [r["masked_fro_sq"] for r in stats]),
                "seconds": time.time() - t0,
            }
    return out


@pytest.fixture(scope="session")
def calibration_runs():
    """Baseline vs gni classifiers on overlapping blobs, 5 seeds each."""
    out = {}
    for seed in range(5):
        train_ds = data.gen_blobs(3, 50, dim=2, separation=2.0, seed=seed)
        test_ds = data.gen_blobs(3, 400, dim=2, separation=2.0, seed=seed + 1000)
        for mode in ("baseline", "gni"):
            net = nw.mlp([2, 32, 32, 3], "relu", RandomSource(seed, (7,)))
            cfg = trainer.TrainConfig(
                mode=mode, loss_kind="cross_entropy",
                noise=NoiseSpec.uniform(3, 0.1), learning_rate=0.05,
                batch_size=32, steps=8000, seed=seed, eval_every=8000)
            trained, _ = trainer.train(net, train_ds, cfg)
            rep = calibrate_network(trained, test_ds, bins=10)
            out[(mode, seed)] = {"ece": rep.ece, "entropy": rep.mean_entropy}
    return out


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_gradient_correctness():
    t0 = time.time()
    rs = RandomSource(11)
    net = nw.mlp([2, 2, 2], "sigmoid", rs)
    x, y = rs.normal((8, 2)), rs.normal((8, 2))
    spec = NoiseSpec.uniform(2, 0.25)

    got = nw.flatten_grads(nw.param_gradient(net, x, y, "mse"))
    want = fd_param_gradient(net, lambda m: objective.batch_loss(m, x, y, "mse"))
    idx = RandomSource(12).permutation(got.size)[:100]
    loss_err = rel_err(got[idx], want[idx]).max()

    cfg = trainer.TrainConfig(mode="explicit", loss_kind="mse", noise=spec, steps=1)
    _, grads = trainer._explicit_step(net, x, y, cfg)
    got_r = nw.flatten_grads(grads)
    want_r = fd_param_gradient(
        net, lambda m: objective.batch_loss(m, x, y, "mse")
        + objective.reg(m, x, spec, "mse").total)
    reg_err = rel_err(got_r[idx], want_r[idx]).max()

    elapsed = time.time() - t0
    ok = loss_err <= 1e-5 and reg_err <= 1e-4 and elapsed < 10
    _report(1, "gradient correctness", ok,
            f"(loss grad rel err {loss_err:.2e} <= 1e-5, "
            f"explicit grad rel err {reg_err:.2e} <= 1e-4, {elapsed:.1f}s < 10s)")


def test_criterion_02_exact_remainder_linear_net():
    t0 = time.time()
    rs = RandomSource(21)
    net = nw.mlp([3, 5, 5, 2], "identity", rs)  # 3 layers, purely linear
    x, y = rs.normal((16, 3)), rs.normal((16, 2))
    est = dg.estimate_remainder(net, x, y, NoiseSpec.uniform(3, 0.3), "mse",
                                10**4, RandomSource(22))
    elapsed = time.time() - t0
    ok = abs(est.remainder) <= 3 * est.stderr and elapsed < 30
    _report(2, "exact remainder on deep linear net", ok,
            f"(|remainder| {abs(est.remainder):.2e} <= 3 stderr "
            f"{3 * est.stderr:.2e}, {elapsed:.1f}s < 30s)")


def test_criterion_03_ce_hessian():
    rs = RandomSource(31)
    # finite-difference Hessian of the CE loss at random logits
    h = rs.normal(4)
    y = np.eye(4)[2]
    fd = np.empty((4, 4))
    eps = 1e-5
    for j in range(4):
        e = np.zeros(4)
        e[j] = eps
        gp = fd_param_gradient_vec(lambda t: objective.softmax_ce(t, y), h + e)
        gm = fd_param_gradient_vec(lambda t: objective.softmax_ce(t, y), h - e)
        fd[:, j] = (gp - gm) / (2 * eps)
    analytic = objective.ce_hessian(objective.softmax(h))
    h_err = np.abs(fd - analytic).max()

    min_eig = np.inf
    max_rowsum = 0.0
    for _ in range(1000):
        raw = rs.uniform(6, 0.0, 1.0) + 1e-9
        p = raw / raw.sum()
        mat = objective.ce_hessian(p)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(mat).min()))
        max_rowsum = max(max_rowsum, float(np.abs(mat.sum(axis=1)).max()))
    ok = h_err <= 1e-5 and min_eig >= -1e-10 and max_rowsum <= 1e-12
    _report(3, "cross-entropy Hessian", ok,
            f"(FD gap {h_err:.2e} <= 1e-5, min eig {min_eig:.1e} >= -1e-10, "
            f"row sums {max_rowsum:.1e} <= 1e-12)")


def fd_param_gradient_vec(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_criterion_04_dominance_scan():
    t0 = time.time()
    ds = data.gen_sinusoid(1024, seed=0)
    rows = dg.dominance_scan(SINUSOID_WIDTHS, ds, [0.1, 0.25, 1.0], inits=25,
                             draws=1000, batch_size=32, activation="sigmoid",
                             seed=41)
    frac = np.mean([r["R"] > abs(r["remainder"]) for r in rows])
    elapsed = time.time() - t0
    ok = frac >= 0.95 and elapsed < 600
    _report(4, "penalty dominates remainder at init", ok,
            f"(fraction {frac:.3f} >= 0.95 over {len(rows)} rows, "
            f"{elapsed:.0f}s < 600s)")


def test_criterion_05_spectral_bias(sinusoid_runs):
    gni_wins = sum(sinusoid_runs[("gni", s)]["high_band"]
                   < sinusoid_runs[("baseline", s)]["high_band"]
                   for s in SINUSOID_SEEDS)
    exp_wins = sum(sinusoid_runs[("explicit", s)]["high_band"]
                   < sinusoid_runs[("baseline", s)]["high_band"]
                   for s in SINUSOID_SEEDS)
    total_time = sum(r["seconds"] for r in sinusoid_runs.values())
    bands = {m: [round(sinusoid_runs[(m, s)]["high_band"], 3) for s in SINUSOID_SEEDS]
             for m in ("baseline", "gni", "explicit")}
    ok = gni_wins >= 4 and exp_wins >= 4 and total_time < 1800
    _report(5, "high-frequency amplitude suppressed", ok,
            f"(gni below baseline in {gni_wins}/5, explicit in {exp_wins}/5, "
            f"bands {bands}, {total_time:.0f}s < 1800s)")


def test_criterion_06_training_profile_match(sinusoid_runs):
    wins = 0
    gaps = []
    for s in SINUSOID_SEEDS:
        e = sinusoid_runs[("explicit", s)]["test_loss"]
        g = sinusoid_runs[("gni", s)]["test_loss"]
        b = sinusoid_runs[("baseline", s)]["test_loss"]
        wins += abs(e - g) < abs(e - b)
        gaps.append((round(abs(e - g), 4), round(abs(e - b), 4)))
    ok = wins >= 4
    _report(6, "explicit-mode tracks gni test loss", ok,
            f"({wins}/5 seeds, |e-g| vs |e-b| pairs {gaps})")


def test_criterion_07_layer_striation(sinusoid_runs):
    neg = sum(sinusoid_runs[("gni", s)]["spearman"] < 0 for s in SINUSOID_SEEDS)
    gni_rhos = [round(sinusoid_runs[("gni", s)]["spearman"], 2)
                for s in SINUSOID_SEEDS]
    base_rhos = [round(sinusoid_runs[("baseline", s)]["spearman"], 2)
                 for s in SINUSOID_SEEDS]
    ok = neg >= 4
    _report(7, "masked norms fall with layer index under gni", ok,
            f"({neg}/5 seeds negative, gni rho {gni_rhos}; "
            f"baseline rho {base_rhos} reported, not asserted)")


def test_criterion_08_parseval_proxy():
    lhs1, rhs1, gap1 = dg.parseval_check([5.0], n=1024)
    lhs2, rhs2, gap2 = dg.parseval_check([5.0, 10.0], amps=[1.0, 0.5], n=1024)
    _, _, gap_fd1 = dg.parseval_check([5.0], n=1024, use_fd=True)
    _, _, gap_fd2 = dg.parseval_check([5.0, 10.0], amps=[1.0, 0.5], n=1024,
                                      use_fd=True)
    tone_ok = abs(lhs1 - 0.5 * (10 * np.pi) ** 2) < 1e-9
    ok = (gap1 < 1e-6 and gap2 < 1e-6 and gap_fd1 < 1e-3 and gap_fd2 < 1e-3
          and tone_ok)
    _report(8, "derivative energy equals weighted spectrum", ok,
            f"(analytic gaps {gap1:.1e}, {gap2:.1e} < 1e-6; "
            f"FD gaps {gap_fd1:.1e}, {gap_fd2:.1e} < 1e-3)")


def test_criterion_09_margin_bound():
    # linear classifiers: the bound never exceeds the exact flip distance
    rs = RandomSource(91)
    w, b = rs.normal((4, 3)), rs.normal(4)
    lin = nw.Network([nw.Layer(w, b, "identity")])
    x = rs.normal((500, 3), 2.0)
    rep = dg.margin_bounds(lin, x)
    lin_viol = sum(rep.bound[i] > dg.linear_flip_distance(w, b, x[i]) + 1e-12
                   for i in range(500))

    # 2-layer relu net on blobs: searched flip distances respect the bound
    train_ds = data.gen_blobs(3, 100, dim=8, separation=3.0, seed=92)
    net = nw.mlp([8, 64, 3], "relu", RandomSource(93))
    cfg = trainer.TrainConfig(mode="gni", loss_kind="cross_entropy",
                              noise=NoiseSpec.uniform(2, 0.1), learning_rate=0.05,
                              batch_size=32, steps=2000, seed=94, eval_every=2000)
    trained, _ = trainer.train(net, train_ds, cfg)
    test_ds = data.gen_blobs(3, 40, dim=8, separation=3.0, seed=95)
    rep = dg.margin_bounds(trained, test_ds.inputs)
    frs = RandomSource(96)
    respected = sum(
        dg.flip_distance(trained, test_ds.inputs[i], 100, frs.split(i))
        >= rep.bound[i] - 1e-9
        for i in range(test_ds.n))
    frac = respected / test_ds.n
    ok = lin_viol == 0 and frac >= 0.95
    _report(9, "margin lower bound", ok,
            f"(linear violations {lin_viol}/500 == 0, relu respected "
            f"{respected}/{test_ds.n} = {frac:.1%} >= 95%)")


def test_criterion_10_calibration(calibration_runs):
    ece_wins = sum(calibration_runs[("gni", s)]["ece"]
                   <= calibration_runs[("baseline", s)]["ece"] for s in range(5))
    ent_wins = sum(calibration_runs[("gni", s)]["entropy"]
                   > calibration_runs[("baseline", s)]["entropy"] for s in range(5))

    # unit ECE check: the two-populated-bin hand example is exact
    conf = np.concatenate([np.full(50, 0.9), np.full(50, 0.6)])
    true = np.concatenate([np.r_[np.zeros(35), np.ones(15)],
                           np.r_[np.zeros(30), np.ones(20)]])
    hand = calibrate(conf, np.zeros(100), true, bins=10).ece
    ok = ece_wins >= 4 and ent_wins >= 4 and hand == pytest.approx(0.1, abs=1e-12)
    _report(10, "gni improves calibration and entropy", ok,
            f"(ECE wins {ece_wins}/5, entropy wins {ent_wins}/5, "
            f"hand ECE {hand:.3f} == 0.1)")


def test_criterion_11_hessian_trace():
    rs = RandomSource(111)
    net = nw.mlp([3, 3, 2], "sigmoid", rs)  # 9+3+6+2 = 20 parameters
    assert net.n_params == 20
    x, y = rs.normal((12, 3)), rs.normal((12, 2))
    exact = dg.fd_hessian_trace(net, x, y, "mse")
    est, stderr = dg.hessian_trace(net, x, y, "mse", probes=128,
                                   rs=RandomSource(112))
    hook_est, hook_se = dg.hutchinson_trace(lambda t: t, np.zeros(37), 8,
                                            RandomSource(113))
    ok = abs(est - exact) <= 3 * stderr and abs(hook_est - 37.0) <= 1e-6
    _report(11, "Hutchinson Hessian trace", ok,
            f"(|{est:.4f} - {exact:.4f}| <= 3x{stderr:.4f}, "
            f"quadratic hook {hook_est:.8f} == 37 +/- 1e-6)")


def test_criterion_12_determinism(tmp_path):
    from gnireg import cli

    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""
[experiment]
seed = 5
[network]
widths = [1, 16, 16, 1]
activation = "relu"
[train]
mode = "gni"
steps = 60
batch_size = 32
learning_rate = 0.01
eval_every = 20
[noise]
mode = "additive"
sigma2 = 0.1
[data]
kind = "sinusoid"
points = 128
freqs = [3, 7]
""")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    d1 = tmp_path / "d1"
    d2 = tmp_path / "d2"
    for d in (d1, d2):
        assert cli.main(["dominance", "--sigmas", "0.1", "--inits", "2",
                         "--draws", "50", "--widths", "1,8,1", "--batch-size", "8",
                         "--data", "sinusoid", "--points", "64", "--seed", "7",
                         "--out", str(d)]) == 0
    dom_same = (d1 / "dominance.csv").read_bytes() == (d2 / "dominance.csv").read_bytes()
    ok = outs[0] == outs[1] and dom_same
    _report(12, "seeded reruns are byte-identical", ok,
            f"(train CSVs identical: {outs[0] == outs[1]}, "
            f"dominance CSVs identical: {dom_same})")
