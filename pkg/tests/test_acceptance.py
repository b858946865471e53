"""Acceptance suite: one test per criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS/FAIL lines
as they complete. Every criterion is evaluated at its stated tolerance
with fixed master seeds; total runtime is a few minutes on a desktop.
"""

import json
import math
import time

import numpy as np
from scipy.stats import kstest

import hdcp
from hdcp import (
    BoundaryDesign,
    DependenceWindow,
    ElbowDesign,
    F_matrix,
    InferenceConfig,
    LinearProcessSpec,
    MultiCpDesign,
    SizePowerDesign,
    as_series,
    b_matrix,
    build_coefficients,
    build_trace_table,
    compute_gram,
    f_vector,
    generate_series,
    l_trace,
    oracle_variance,
    run_boundary_curve,
    run_elbow_curve,
    run_multi_cp,
    run_size_power,
)
from hdcp import test_at as split_test
from hdcp import test_global as global_test
from hdcp.cli import main as cli_main
from oracles import assert_instance_matches, random_instance


def _report(tag: str, ok: bool, detail: str) -> None:
    print(f"[{tag}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{tag}: {detail}"


def test_ac01_exact_unit_suite():
    start = time.time()
    w0 = DependenceWindow(0)
    checks = [
        np.allclose(f_vector(10, 5, 1).values, [1.0, 1.4], atol=1e-10),
        np.allclose(F_matrix(10, 0).matrix, [[0.9]], atol=1e-10),
        abs(F_matrix(10, 1).matrix[0, 1] + 0.18) < 1e-10,
        abs(b_matrix(4, 2, w0).values[0, 0]) < 1e-10,
        abs(b_matrix(4, 2, w0).values[0, 2] + 5.0 / 3.0) < 1e-10,
        np.allclose(
            l_trace(compute_gram(as_series([[0.0], [0.0], [2.0], [2.0]])), w0),
            [0.0, 2.0 / 3.0, 0.0],
            atol=1e-10,
        ),
    ]
    elapsed = time.time() - start
    _report(
        "AC01",
        all(checks) and elapsed < 1.0,
        f"exact unit values to 1e-10 in {elapsed:.2f}s (< 1s)",
    )


def test_ac02_oracle_equivalence():
    start = time.time()
    rng = np.random.default_rng(20240802)
    for _ in range(50):
        x, m = random_instance(rng)
        assert_instance_matches(x, m, rtol=1e-8)
    elapsed = time.time() - start
    _report(
        "AC02",
        elapsed < 30.0,
        f"50 randomized instances match naive oracles at rtol 1e-8 in {elapsed:.1f}s (< 30s)",
    )


def test_ac03_size_under_independence():
    start = time.time()
    result = run_size_power(
        SizePowerDesign(n=100, p=200, m_true=0, m_used=0, reps=500, alpha=0.05,
                        seed=20240803)
    )
    elapsed = time.time() - start
    rate = result.rejection_rate
    _report(
        "AC03",
        0.02 <= rate <= 0.08 and elapsed < 300.0,
        f"size {rate:.4f} in [0.02, 0.08] at n=100 p=200 M=0, 500 reps, {elapsed:.0f}s",
    )


def test_ac04_size_under_dependence_and_misuse():
    matched = run_size_power(
        SizePowerDesign(n=100, p=200, m_true=2, m_used=2, reps=500, alpha=0.05,
                        seed=20240804)
    )
    misused = run_size_power(
        SizePowerDesign(n=100, p=200, m_true=2, m_used=0, reps=300, alpha=0.05,
                        seed=20240814)
    )
    ok = 0.02 <= matched.rejection_rate <= 0.09 and misused.rejection_rate >= 0.5
    _report(
        "AC04",
        ok,
        f"size {matched.rejection_rate:.4f} in [0.02, 0.09] with matched M=2; "
        f"misused M=0 rate {misused.rejection_rate:.3f} >= 0.5",
    )


def test_ac05_power():
    result = run_size_power(
        SizePowerDesign(n=200, p=600, m_true=0, m_used=0, reps=300, alpha=0.05,
                        delta=0.3, tau=80, seed=20240805)
    )
    _report(
        "AC05",
        result.rejection_rate >= 0.42,
        f"power {result.rejection_rate:.3f} >= 0.42 at n=200 p=600 delta=0.3 tau=80",
    )


def test_ac06_null_normality():
    spec = LinearProcessSpec(n=150, p=600, m_true=0, seed=20240806)
    model = build_coefficients(spec)
    w = DependenceWindow(0)
    cfg = InferenceConfig()
    z_global = np.empty(500)
    z_first = np.empty(500)
    for rep in range(500):
        x = generate_series(spec, model=model, seed=[20240806, rep])
        z_global[rep] = global_test(x, w, cfg).zscore
        z_first[rep] = split_test(x, 1, w, cfg).zscore
    ks_g = kstest(z_global, "norm").statistic
    ks_1 = kstest(z_first, "norm").statistic
    _report(
        "AC06",
        ks_g < 0.08 and ks_1 < 0.08,
        f"KS distances vs N(0,1): aggregated {ks_g:.4f}, first-split {ks_1:.4f} (< 0.08)",
    )


def test_ac07_elbow_recovery():
    # alternative mean heterogeneity must stay moderate for the lag-energy
    # probes, so the weak Table-2 profile is used for the alternative arm
    fractions = {}
    for label, cps, deltas in (
        ("null", (), (0.0,)),
        ("alt", (15, 75, 105), (0.0, 0.5, 0.0, 0.5)),
    ):
        result = run_elbow_curve(
            ElbowDesign(n=150, p=600, m_true_values=(0, 2), reps=50, h_max=5,
                        change_points=cps, deltas=deltas, seed=20240807)
        )
        fractions[(label, 0)] = result.recovery_fractions[0]
        fractions[(label, 2)] = result.recovery_fractions[1]
    ok = (
        fractions[("null", 0)] >= 0.9
        and fractions[("alt", 0)] >= 0.9
        and fractions[("null", 2)] >= 0.8
        and fractions[("alt", 2)] >= 0.8
    )
    detail = ", ".join(
        f"{lab}/M={m}: {frac:.2f}" for (lab, m), frac in sorted(fractions.items())
    )
    _report("AC07", ok, f"elbow recovery ({detail}); bounds 0.9 for M=0, 0.8 for M=2")


def test_ac08_multiple_change_points():
    result = run_multi_cp(
        MultiCpDesign(n=150, p=200, m_true=0, m_used=0, reps=200,
                      change_points=(15, 75, 105), deltas=(0.0, 1.5, 0.0, 1.5),
                      fwer_mode=True, seed=20240808)
    )
    ok = result.tp_mean >= 2.6 and result.fp_mean <= 0.45 and result.fn_mean <= 0.45
    _report(
        "AC08",
        ok,
        f"strong-signal segmentation: TP {result.tp_mean:.3f} >= 2.6, "
        f"FP {result.fp_mean:.3f} <= 0.45, FN {result.fn_mean:.3f} <= 0.45",
    )


def _non_decreasing_within_noise(probs, ses):
    for k in range(len(probs) - 1):
        slack = 2.0 * math.hypot(ses[k], ses[k + 1])
        if probs[k + 1] < probs[k] - slack:
            return False
    return True


def test_ac09_boundary_behavior():
    # grid starts in the signal regime: at noise-level delta the argmax
    # concentrates near the boundaries (largest per-split variance), which
    # lifts the tau=2 baseline above tau=40's
    deltas = (0.5, 1.0, 1.5, 2.0)
    ps = (100, 300, 600)
    curves = {}
    for tau in (2, 40):
        for p in ps:
            res = run_boundary_curve(
                BoundaryDesign(n=100, p=p, m_true=0, m_used=0, tau=tau,
                               deltas=deltas, reps=200, seed=20240809)
            )
            curves[(tau, p)] = (res.probabilities, res.std_errors)

    ok_delta = all(
        _non_decreasing_within_noise(*curves[(tau, p)]) for tau in (2, 40) for p in ps
    )
    ok_p = True
    for tau in (2, 40):
        for di in range(len(deltas)):
            probs = [curves[(tau, p)][0][di] for p in ps]
            ses = [curves[(tau, p)][1][di] for p in ps]
            ok_p &= _non_decreasing_within_noise(probs, ses)
    ok_tau = True
    for p in ps:
        for di in range(len(deltas)):
            p2, se2 = curves[(2, p)][0][di], curves[(2, p)][1][di]
            p40, se40 = curves[(40, p)][0][di], curves[(40, p)][1][di]
            ok_tau &= p40 >= p2 - 2.0 * math.hypot(se2, se40)
    mid = curves[(40, 600)][0]
    _report(
        "AC09",
        ok_delta and ok_p and ok_tau,
        f"detection monotone in delta ({ok_delta}) and p ({ok_p}), "
        f"boundary tau=2 below tau=40 ({ok_tau}); e.g. tau=40 p=600 curve {mid}",
    )


def test_ac10_variance_oracle_agreement():
    # small-case exactness: empirical variance over 20000 replications
    spec = LinearProcessSpec(n=10, p=2, m_true=0, seed=20240810)
    model = build_coefficients(spec)
    w = DependenceWindow(0)
    target = oracle_variance(5, model, w)
    vals = np.empty(20000)
    for rep in range(20000):
        x = generate_series(spec, model=model, seed=[20240810, rep])
        vals[rep] = l_trace(compute_gram(x), w)[4]
    emp = float(vals.var(ddof=1))
    ok_small = abs(emp - target) <= 0.05 * target

    # estimator targeting: mean trace table within 15% of the true products
    spec2 = LinearProcessSpec(n=150, p=100, m_true=2, seed=20240820)
    model2 = build_coefficients(spec2)
    w2 = DependenceWindow(2)
    acc = np.zeros((5, 5))
    for rep in range(200):
        x = generate_series(spec2, model=model2, seed=[20240820, rep])
        acc += build_trace_table(compute_gram(x), w2).values
    acc /= 200
    truth = np.array(
        [[model2.trace_product(h1, h2) for h2 in range(-2, 3)] for h1 in range(-2, 3)]
    )
    rel = np.abs(acc / truth - 1.0).max()
    _report(
        "AC10",
        ok_small and rel <= 0.15,
        f"empirical/oracle variance ratio {emp / target:.4f} (within 5%); "
        f"max trace-table relative bias {rel:.3f} (within 15%)",
    )


def test_ac11_determinism(tmp_path, monkeypatch):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(
        "design = size_power\nn = 60\np = 40\nm_true = 0\nm_used = 0\n"
        "reps = 20\nseed = 11\n"
    )
    outs = []
    for tag, workers in (("a", None), ("b", None), ("c", "2"), ("d", "5")):
        if workers is None:
            monkeypatch.delenv("HDCP_WORKERS", raising=False)
        else:
            monkeypatch.setenv("HDCP_WORKERS", workers)
        out = tmp_path / f"sim_{tag}.json"
        assert cli_main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
        outs.append(out.read_bytes())
    sim_ok = len(set(outs)) == 1

    spec = LinearProcessSpec(n=60, p=30, m_true=0, seed=12)
    x = generate_series(spec, hdcp.single_change_profile(30, 1.5, sign_seed=12)).values
    data = tmp_path / "series.csv"
    np.savetxt(data, x, delimiter=",")
    reps = []
    for tag, workers in (("a", None), ("b", "3")):
        if workers is None:
            monkeypatch.delenv("HDCP_WORKERS", raising=False)
        else:
            monkeypatch.setenv("HDCP_WORKERS", workers)
        out = tmp_path / f"det_{tag}.json"
        assert cli_main(
            ["detect", "--input", str(data), "--m", "auto", "--h-max", "3",
             "--output", str(out)]
        ) == 0
        reps.append(out.read_bytes())
    det_ok = len(set(reps)) == 1
    _report(
        "AC11",
        sim_ok and det_ok,
        "byte-identical outputs across reruns and worker counts "
        f"(simulate {sim_ok}, detect {det_ok})",
    )
