"""Acceptance criteria 1-8.

Each test carries a ``criterion_N`` marker; the summary at the end of the
pytest run prints one PASS/FAIL line per criterion.

Criterion 7's reduced PTB comparison needs the Penn Treebank files
(``ptb.train.txt`` and ``ptb.valid.txt``) in the directory named by the
``FSMN_PTB_DIR`` environment variable.
"""

import dataclasses
import math
import os
from pathlib import Path

import numpy as np
import pytest

from fsmn import checkpoint
from fsmn.cli import evaluate, main
from fsmn.config import load_run_config, run_config_from_dict
from fsmn.data import make_batch, read_encoded, write_encoded
from fsmn.memory import (
    apply_per_sentence,
    build_block_diagonal,
    build_memory_matrix,
    fir_forward_matrix,
    fir_forward_naive,
)
from fsmn.model import (
    ModelConfig,
    forward,
    grad_check,
    init_parameters,
    param_group,
    perplexity,
    randomize_for_check,
)
from fsmn.optim import CONTINUE, CONTINUE_HALVED, STOP, ScheduleState, schedule_update
from fsmn.synthetic import LagCopyGenerator
from fsmn.trainer import train

from .conftest import ROOT, random_sentences


def report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


@pytest.mark.criterion_1
def test_matrix_path_equivalence():
    rng = np.random.default_rng(2015)
    worst_single = worst_batched = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 17))
        t = int(rng.integers(1, 51))
        order = int(rng.integers(0, 11))
        taps = rng.normal(size=order + 1)
        h = rng.normal(size=(d, t))
        act = "relu" if rng.random() < 0.5 else "identity"
        diff = np.abs(fir_forward_matrix(h, build_memory_matrix(taps, t), act) - fir_forward_naive(h, taps, act))
        worst_single = max(worst_single, diff.max())

        lengths = [int(n) for n in rng.integers(1, 51, size=int(rng.integers(1, 6)))]
        hb = rng.normal(size=(d, sum(lengths)))
        batched = fir_forward_matrix(hb, build_block_diagonal(taps, lengths), act)
        worst_batched = max(worst_batched, np.abs(batched - apply_per_sentence(hb, taps, lengths, act)).max())
    report(
        1,
        worst_single <= 1e-10 and worst_batched <= 1e-12,
        f"matrix-vs-naive max={worst_single:.2e} (tol 1e-10), batched-vs-per-sentence max={worst_batched:.2e} (tol 1e-12)",
    )


@pytest.mark.criterion_2
def test_gradient_correctness_tiny_model():
    config = ModelConfig(vocab_size=7, context_window=2, embed_dim=3, hidden_dims=(4, 4), memory_at=(1,), memory_order=2)
    rng = np.random.default_rng(17)
    batch = make_batch(random_sentences(rng, 7, 2, 4, 7), 2)
    params = randomize_for_check(init_parameters(config, 17), config, 18)
    result = grad_check(params, config, batch, step=1e-5)
    expected = {"embedding", "W", "b", "taps", "Wmem", "output"}
    detail = " ".join(f"{g}={e:.1e}" for g, e in result.errors.items())
    report(2, set(result.errors) == expected and result.passed(1e-4), f"max relative errors (tol 1e-4): {detail}")


@pytest.mark.criterion_3
def test_fnn_reduction():
    rng = np.random.default_rng(3)
    worst = 0.0
    for memory_at in [(1,), (2,), (1, 2), (3,)]:
        config = ModelConfig(13, 2, 5, (8, 7, 6), memory_at, 6)
        params = init_parameters(config, int(rng.integers(1 << 30)))
        for name in params:
            if param_group(name) == "b":
                params[name] = rng.normal(size=params[name].shape)
            if param_group(name) == "Wmem":
                params[name][:] = 0.0
        plain = {k: v for k, v in params.items() if param_group(k) not in ("taps", "Wmem")}
        batch = make_batch(random_sentences(rng, 13, 6, 1, 15), 2)
        with_memory, _ = forward(params, config, batch)
        without, _ = forward(plain, config.without_memory(), batch)
        worst = max(worst, np.abs(with_memory - without).max())
    report(3, worst <= 1e-12, f"max |log p(identity taps, zero Wmem) - log p(FNN)| = {worst:.2e} (tol 1e-12)")


def _write_splits(out: Path, gen: LagCopyGenerator):
    out.mkdir(parents=True, exist_ok=True)
    for name, tokens, stream in (("train", 50_000, 0), ("valid", 5_000, 1), ("test", 5_000, 2)):
        write_encoded(out / f"{name}.ids", gen.sentences(tokens, stream), gen.vocab_size)


def _lag_run(tmp_path, data, memory_at, tag):
    values = {
        "train": str(data / "train.ids"),
        "valid": str(data / "valid.ids"),
        "test": str(data / "test.ids"),
        "checkpoint_dir": str(tmp_path / tag),
        "context_window": "2",
        "embed_dim": "32",
        "hidden_dims": "128,128",
        "memory_at": memory_at,
        "memory_order": "20",
        "lr_weights": "0.1",
        "lr_taps": "0.01",
        "momentum": "0.9",
        "batch_size": "20",
        "max_epochs": "12",
        "seed": "1",
    }
    run = run_config_from_dict(values)
    result = train(run, echo=False)
    sentences, _ = read_encoded(data / "test.ids")
    return perplexity(result.params, result.config, sentences)


@pytest.mark.criterion_4
@pytest.mark.slow
def test_long_dependency_needs_memory(tmp_path):
    gen = LagCopyGenerator(num_symbols=8, lag=10, length=20, seed=0)
    data = tmp_path / "lag"
    _write_splits(data, gen)
    bound = gen.perplexity_bound()
    fsmn_ppl = _lag_run(tmp_path, data, "1", "fsmn")
    fnn_ppl = _lag_run(tmp_path, data, "none", "fnn")
    report(
        4,
        fsmn_ppl <= 1.10 * bound and fnn_ppl >= 2.0 * bound,
        f"bound={bound:.4f} fsmn={fsmn_ppl:.4f} (<= {1.1 * bound:.4f}) fnn={fnn_ppl:.4f} (>= {2 * bound:.4f})",
    )


@pytest.mark.criterion_5
@pytest.mark.slow
def test_toy_overfit(tmp_path):
    prep = tmp_path / "prep"
    toy = ROOT / "data" / "toy" / "train.txt"
    assert len(toy.read_text().split()) == 500
    assert main(["prep", str(toy), str(prep), "--max-vocab", "100", "--valid", str(toy), "--test", str(toy)]) == 0
    shipped = load_run_config(ROOT / "configs" / "toy.conf")
    run = dataclasses.replace(
        shipped, train=prep / "train.ids", valid=prep / "valid.ids", checkpoint_dir=tmp_path / "ck"
    )
    result = train(run, echo=False)
    losses = [r.train_loss for r in result.history]
    train_ppl = evaluate(result.final_checkpoint, prep / "train.ids")
    windows_ok = all(losses[i + 10] < losses[i] for i in range(len(losses) - 10))
    monotone = all(b < a for a, b in zip(losses, losses[1:]))
    report(
        5,
        len(losses) <= 50 and train_ppl < 5 and windows_ok,
        f"epochs={len(losses)} final train ppl={train_ppl:.3f} (< 5), 10-epoch windows decreasing={windows_ok}, "
        f"strictly decreasing every epoch={monotone}",
    )


@pytest.mark.criterion_6
def test_schedule_replay():
    sequence = [130, 128, 126, 125.5] + [125.0 - 0.1 * k for k in range(20)]

    def replay():
        state, trace = ScheduleState(), []
        for ppl in sequence:
            state, decision = schedule_update(state, ppl)
            trace.append((state.phase, decision, state.current_scale))
            if decision == STOP:
                break
        return trace

    trace = replay()
    decisions = [d for _, d, _ in trace]
    expected = [CONTINUE] * 3 + [CONTINUE_HALVED] * 6 + [STOP]
    scales = [s for _, d, s in trace if d == CONTINUE_HALVED]
    ok = (
        decisions == expected
        and [p for p, _, _ in trace[:3]] == ["stable"] * 3
        and trace[3][0] == "halving"
        and scales == [2.0**-k for k in range(1, 7)]
        and replay() == trace
    )
    report(6, ok, f"decisions={decisions}")


@pytest.mark.criterion_7
def test_ptb_preset_ships():
    cfg = load_run_config(ROOT / "configs" / "ptb.conf")
    model = cfg.model_config(10003)
    ok = model.describe() == "[2*200]-400(M)-400-10003" and model.memory_order == 20
    report(7, ok, f"PTB preset {model.describe()} order {model.memory_order}")


@pytest.mark.criterion_7
@pytest.mark.slow
def test_reduced_ptb_fsmn_beats_ablation(tmp_path):
    ptb_dir = os.environ.get("FSMN_PTB_DIR")
    if not ptb_dir or not (Path(ptb_dir) / "ptb.train.txt").is_file():
        pytest.fail(
            "criterion 7 reduced PTB run cannot execute: set FSMN_PTB_DIR to a directory holding "
            "ptb.train.txt and ptb.valid.txt (the corpus is not bundled and could not be downloaded here)"
        )
    ptb_dir = Path(ptb_dir)
    lines = [line for line in (ptb_dir / "ptb.train.txt").read_text().splitlines() if line.split()]
    reduced = tmp_path / "ptb.train.10pct.txt"
    reduced.write_text("\n".join(lines[: len(lines) // 10]) + "\n")
    prep = tmp_path / "prep"
    valid = ptb_dir / "ptb.valid.txt"
    assert main(["prep", str(reduced), str(prep), "--max-vocab", "10003", "--valid", str(valid), "--test", str(valid)]) == 0
    results = {}
    for name in ("ptb", "ptb_nomem"):
        shipped = load_run_config(ROOT / "configs" / f"{name}.conf")
        run = dataclasses.replace(
            shipped,
            train=prep / "train.ids",
            valid=prep / "valid.ids",
            test=None,
            checkpoint_dir=tmp_path / name,
            max_epochs=5,
            log_interval=0,
        )
        results[name] = train(run, echo=False).history[-1].valid_ppl
    gap = results["ptb_nomem"] - results["ptb"]
    report(7, gap >= 5.0, f"valid ppl fsmn={results['ptb']:.2f} ablated={results['ptb_nomem']:.2f} gap={gap:.2f} (>= 5)")


@pytest.mark.criterion_8
def test_checkpoint_round_trip(tmp_path):
    config = ModelConfig(50, 2, 6, (10, 8), (1, 2), 5)
    params = randomize_for_check(init_parameters(config, 8), config, 9)
    velocity = {k: np.full_like(v, 0.25) for k, v in params.items()}
    extra = {"run.epoch": 4, "schedule.phase": "halving", "schedule.current_scale": 0.125}
    first = tmp_path / "first.ckpt"
    checkpoint.save(first, params, config, extra, velocity)
    loaded, cfg, record, vel = checkpoint.load(first)
    second = tmp_path / "second.ckpt"
    checkpoint.save(second, loaded, cfg, {k: v for k, v in record.items() if not k.startswith("model.")}, vel)
    identical_bytes = first.read_bytes() == second.read_bytes()

    rng = np.random.default_rng(10)
    data = tmp_path / "eval.ids"
    write_encoded(data, random_sentences(rng, 50, 30, 2, 12), 50)
    ppl_before = evaluate(first, data)
    ppl_after = evaluate(second, data)
    direct = perplexity(params, config, random_sentences(np.random.default_rng(10), 50, 30, 2, 12))
    ok = identical_bytes and ppl_before == ppl_after == direct and math.isfinite(direct)
    report(8, ok, f"byte-identical={identical_bytes} eval before={ppl_before!r} after={ppl_after!r}")
