import numpy as np
import pytest

from repshare import errors
from repshare.experiment import (
    DEFAULT_SIGMAS,
    metric_table,
    metric_table_csv,
    noise_csv,
    run_noise_sweep,
    run_sweep,
    sweep_csv,
)
from repshare.graph import ModelGraph, valid_cut
from repshare.metrics import pearson
from repshare.similarity import cka_reps
from repshare.tensor import read_dumps, write_dumps
from repshare.executor import forward


def test_same_stage_self_sharing_is_perfect(toy_pair):
    ga, _, inputs, _ = toy_pair
    rows = run_sweep(ga, ga, inputs, mode="same")
    assert len(rows) == len(ga.stages)
    for r in rows:
        assert r.fidelity == 1.0
        assert r.similarity == pytest.approx(1.0, abs=1e-9)


def test_cross_row_count_is_valid_pairs(toy_pair):
    ga, gb, inputs, _ = toy_pair
    rows = run_sweep(ga, gb, inputs, mode="cross")
    n_valid = sum(valid_cut(gb, t)[0] for t in range(len(gb.stages)))
    assert len(rows) == len(ga.stages) * n_valid
    assert all(valid_cut(gb, r.t)[0] for r in rows)


def test_sweep_determinism_and_threads(toy_pair):
    ga, gb, inputs, _ = toy_pair
    csv1 = sweep_csv(run_sweep(ga, gb, inputs, mode="same"))
    csv2 = sweep_csv(run_sweep(ga, gb, inputs, mode="same"))
    csv4 = sweep_csv(run_sweep(ga, gb, inputs, mode="same", threads=4))
    assert csv1 == csv2 == csv4


def test_sweep_similarity_matches_stored_dumps(toy_pair, tmp_path):
    ga, gb, inputs, _ = toy_pair
    rows = run_sweep(ga, gb, inputs, mode="same")
    _, dumps_a = forward(ga, inputs)
    _, dumps_b = forward(gb, inputs)
    back_a = read_dumps(write_dumps(dumps_a, str(tmp_path / "a")))
    back_b = read_dumps(write_dumps(dumps_b, str(tmp_path / "b")))
    for r in rows:
        assert cka_reps(back_a[r.s], back_b[r.t]) == r.similarity


def test_sweep_csv_layout(toy_pair):
    ga, _, inputs, _ = toy_pair
    text = sweep_csv(run_sweep(ga, ga, inputs, mode="same"))
    lines = text.splitlines()
    assert lines[0] == "s,t,S,fidelity,savings_bytes"
    assert len(lines) == len(ga.stages) + 1


def test_metric_table_layout(toy_pair):
    ga, gb, inputs, _ = toy_pair
    rows = run_sweep(ga, gb, inputs, mode="same")
    table = metric_table(rows, gb)
    assert list(table[0]) == ["Acc", "S", "FLOPs", "Size", "Params"]
    text = metric_table_csv(table)
    assert text.splitlines()[0] == "Acc,S,FLOPs,Size,Params"
    assert len(text.splitlines()) == len(rows) + 1


def test_noise_sweep_zero_row_and_correlation(toy_pair):
    _, gb, inputs, _ = toy_pair
    rows = run_noise_sweep(gb, inputs, target_stage=2, sigmas=DEFAULT_SIGMAS, seed=0)
    assert rows[0].sigma == 0.0
    assert rows[0].similarity == pytest.approx(1.0, abs=1e-9)
    assert rows[0].fidelity == 1.0
    r = pearson([x.similarity for x in rows], [x.fidelity for x in rows])
    assert r >= 0.8


def test_noise_sweep_similarity_nonincreasing(toy_pair):
    _, gb, inputs, _ = toy_pair
    rows = run_noise_sweep(gb, inputs, target_stage=2, sigmas=DEFAULT_SIGMAS, seed=0)
    sims = [r.similarity for r in rows]
    for a, b in zip(sims, sims[1:]):
        assert b <= a + 0.02  # single-step inversions above tolerance forbidden


def test_noise_sweep_determinism(toy_pair):
    _, gb, inputs, _ = toy_pair
    c1 = noise_csv(run_noise_sweep(gb, inputs, seed=7))
    c2 = noise_csv(run_noise_sweep(gb, inputs, seed=7))
    assert c1 == c2
    assert c1.splitlines()[0] == "sigma,S,fidelity"


def test_noise_sweep_bad_sigmas(toy_pair):
    _, gb, inputs, _ = toy_pair
    with pytest.raises(ValueError):
        run_noise_sweep(gb, inputs, sigmas=(0.5, 0.0, 1.0))
    with pytest.raises(ValueError):
        run_noise_sweep(gb, inputs, sigmas=(0.5, 1.0))


def test_noise_sweep_invalid_stage(toy_pair):
    _, gb, inputs, _ = toy_pair
    with pytest.raises(errors.GraphError):
        run_noise_sweep(gb, inputs, target_stage=3)


def test_same_mode_needs_equal_counts(toy_pair):
    ga, _, inputs, _ = toy_pair
    truncated = ModelGraph(ga.name, ga.input_shape, ga.stages[:3], 2, ga.base_dir)
    with pytest.raises(errors.GraphError):
        run_sweep(truncated, ga, inputs, mode="same")
