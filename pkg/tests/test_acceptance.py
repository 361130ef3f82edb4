"""Acceptance suite: one test per release criterion, each at its stated
tolerance, each printing a [PASS]/[FAIL] line (run pytest -s to see them).
"""

import contextlib
import filecmp
import io
import os
import time

import numpy as np
import pytest

from repshare import toygen
from repshare.adapt import plan_adapt
from repshare.executor import InjectionPoint, WeightLoader, forward, forward_merged
from repshare.experiment import DEFAULT_SIGMAS, run_noise_sweep
from repshare.graph import valid_cut
from repshare.metrics import AccuracyEstimator, fit_estimator, pearson
from repshare.planner import select_plan
from repshare.similarity import cka
from repshare.tensor import read_tensor, write_tensor

from test_graph import cut_oracle, random_dag
from test_planner import make_plan, select_oracle
from test_similarity import HAND_EXAMPLE_CKA, X_HAND, Y_HAND, cka_oracle


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def test_cka_identity():
    with criterion("CKA identity: cka(x,x)=1 within 1e-9, 100 random inputs, < 5 s"):
        rng = np.random.default_rng(0)
        start = time.perf_counter()
        for _ in range(100):
            p = int(rng.integers(1, 257))
            x = rng.standard_normal((16, p)).astype(np.float32)
            assert abs(cka(x, x) - 1.0) <= 1e-9
        assert time.perf_counter() - start < 5.0


def test_cka_orthogonal_and_scaling_invariance():
    with criterion("CKA invariance: orthogonal within 1e-6, isotropic scaling within 1e-9"):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((16, 24)).astype(np.float32)
        y = rng.standard_normal((16, 12)).astype(np.float32)
        base = cka(x, y)
        for _ in range(50):
            q, _ = np.linalg.qr(rng.standard_normal((24, 24)))
            assert abs(cka((x.astype(np.float64) @ q), y) - base) <= 1e-6
        # scale in float64 so the inputs stay exactly proportional
        for a, b in ((3.0, 0.5), (1e3, 1e-3), (7.25, 42.0)):
            assert abs(cka(a * x.astype(np.float64), b * y.astype(np.float64)) - base) <= 1e-9


def test_cka_cross_shape():
    with criterion("CKA cross-shape: defined and in [0,1] for 50 random p != q"):
        rng = np.random.default_rng(2)
        for _ in range(50):
            p, q = rng.integers(1, 129, size=2)
            while q == p:
                q = int(rng.integers(1, 129))
            s = cka(
                rng.standard_normal((12, int(p))).astype(np.float32),
                rng.standard_normal((12, int(q))).astype(np.float32),
            )
            assert 0.0 <= s <= 1.0


def test_cka_oracle_value():
    with criterion("CKA oracle: hand example matches brute force within 1e-9"):
        oracle = cka_oracle(X_HAND.tolist(), Y_HAND.tolist())
        assert abs(oracle - HAND_EXAMPLE_CKA) <= 1e-12
        assert abs(cka(X_HAND, Y_HAND) - oracle) <= 1e-9


def test_pearson_closed_forms():
    with criterion("Pearson closed forms: r = +/-1 and 4-point 0.8 within 1e-12"):
        assert abs(pearson([1, 2, 3], [2, 4, 6]) - 1.0) <= 1e-12
        assert abs(pearson([1, 2, 3], [6, 4, 2]) + 1.0) <= 1e-12
        assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12


def test_identity_merge_bit_equality(tmp_path):
    with criterion("Identity merge: bit-equal outputs, prefix weights untouched, seeds 0-4"):
        for seed in range(5):
            ga, gb, inputs = toygen.gen_toy_pair(seed, str(tmp_path / f"pair{seed}"), n=16)
            for g in (ga, gb):
                preds, dumps = forward(g, inputs)
                for t in range(len(g.stages)):
                    if not valid_cut(g, t)[0]:
                        continue
                    shape = tuple(g.stage(t).out_shape)
                    loader = WeightLoader(g)
                    merged = forward_merged(
                        g, InjectionPoint(t, dumps[t], plan_adapt(shape, shape)), loader
                    )
                    assert merged.tobytes() == preds.tobytes()
                    prefix = {g.weight_path(s, r) for s in g.stages[: t + 1] for r in s.weights}
                    assert not (loader.touched & prefix)


def test_valid_cut_oracle_equivalence():
    with criterion("valid_cut equals brute-force edge scan on 200 random DAGs"):
        rng = np.random.default_rng(3)
        for _ in range(200):
            g = random_dag(rng, max_stages=10)
            for t in range(len(g.stages)):
                assert valid_cut(g, t) == cut_oracle(g, t)


def test_noise_sweep_correlation(tmp_path):
    with criterion("Noise sweep: seed 0, 10 sigmas -> pearson >= 0.8, row0 = (1,1), < 60 s"):
        start = time.perf_counter()
        _, gb, inputs = toygen.gen_toy_pair(0, str(tmp_path / "noise_pair"))
        assert len(DEFAULT_SIGMAS) == 10
        rows = run_noise_sweep(gb, inputs, sigmas=DEFAULT_SIGMAS, seed=0)
        assert abs(rows[0].similarity - 1.0) <= 1e-9
        assert rows[0].fidelity == 1.0
        r = pearson([x.similarity for x in rows], [x.fidelity for x in rows])
        assert r >= 0.8, f"pearson(S, fidelity) = {r}"
        assert time.perf_counter() - start < 60.0


def test_planner_oracle_and_monotonicity():
    with criterion("Planner: matches exhaustive oracle on 1000 random tables; monotone in S_min"):
        rng = np.random.default_rng(4)
        for i in range(1000):
            plans = [
                make_plan(
                    s, t,
                    round(float(rng.uniform()), 2),
                    int(rng.integers(0, 8)) * 64,
                    valid=bool(rng.random() < 0.7),
                )
                for s in range(int(rng.integers(1, 5)))
                for t in range(int(rng.integers(1, 5)))
            ]
            if i % 2:
                mode, kwargs = "max-savings", {"min_similarity": round(float(rng.uniform()), 2)}
            else:
                mode, kwargs = "max-accuracy", {"budget_bytes": int(rng.integers(0, 8)) * 64}
            assert select_plan(plans, mode, **kwargs) is select_oracle(plans, mode, **kwargs)
            savings = []
            for smin in (0.0, 0.25, 0.5, 0.75, 1.0):
                sel = select_plan(plans, "max-savings", min_similarity=smin)
                savings.append(-1 if sel is None else sel.savings_bytes)
            assert all(a >= b for a, b in zip(savings, savings[1:]))


def test_estimator_recovery():
    with criterion("Estimator: noiseless piecewise data -> exact line, threshold in gap"):
        lows = [0.05, 0.1, 0.2, 0.3]
        highs = [0.55, 0.7, 0.85, 1.0]
        pairs = [(x, 0.02) for x in lows] + [(x, 0.9 * x + 0.05) for x in highs]
        est = fit_estimator(pairs)
        assert 0.3 < est.threshold <= 0.55
        assert abs(est.slope - 0.9) <= 1e-9
        assert abs(est.intercept - 0.05) <= 1e-9


def test_format_round_trip_and_gen_determinism(tmp_path):
    with criterion("Format: 100 random NPY round trips bit-exact; gen-toy trees byte-identical"):
        rng = np.random.default_rng(5)
        for i in range(100):
            rank = int(rng.integers(1, 5))
            shape = tuple(int(d) for d in rng.integers(1, 7, size=rank))
            t = rng.standard_normal(shape).astype(np.float32)
            path = str(tmp_path / f"t{i}.npy")
            write_tensor(t, path)
            back = read_tensor(path)
            assert back.shape == t.shape and back.tobytes() == t.tobytes()
        d1, d2 = str(tmp_path / "g1"), str(tmp_path / "g2")
        toygen.gen_toy_pair(7, d1, n=8)
        toygen.gen_toy_pair(7, d2, n=8)
        for dirpath, _, files in os.walk(d1):
            for f in files:
                p1 = os.path.join(dirpath, f)
                p2 = p1.replace(d1, d2, 1)
                assert filecmp.cmp(p1, p2, shallow=False), p1
