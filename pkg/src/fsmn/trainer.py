"""Epoch loop: shuffled mini-batches, SGD, validation and checkpoints.

Each epoch's shuffle is seeded from ``(seed, epoch)``, so a run is fully
determined by its config, and resuming from ``last.ckpt`` continues exactly
where the uninterrupted run would have been.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RunConfig
from .data import make_batches, read_encoded
from .model import ModelConfig, init_parameters, loss_and_grad, perplexity
from .optim import (
    STOP,
    NonFiniteGradientError,
    ScheduleState,
    init_velocity,
    schedule_update,
    sgd_step,
)


class TrainingError(FloatingPointError):
    """Numeric failure during training, with epoch/batch coordinates."""


def _kv(**items) -> str:
    parts = []
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_ppl: float
    lr_scale: float
    decision: str


@dataclass
class TrainResult:
    params: dict
    config: ModelConfig
    history: list = field(default_factory=list)
    best_valid_ppl: float = math.inf
    final_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _state_record(schedule: ScheduleState, epoch: int, best_ckpt_ppl: float, run: RunConfig) -> dict:
    return {
        "run.epoch": epoch,
        "run.seed": run.seed,
        "run.best_checkpoint_ppl": float(best_ckpt_ppl),
        "schedule.phase": schedule.phase,
        "schedule.best_val_ppl": float(schedule.best_val_ppl),
        "schedule.halving_epochs_done": schedule.halving_epochs_done,
        "schedule.current_scale": float(schedule.current_scale),
        "schedule.stopped": schedule.stopped,
        "optim.lr_weights": run.lr_weights,
        "optim.lr_taps": run.lr_taps,
        "optim.momentum": run.momentum,
        "optim.weight_decay": run.weight_decay,
        "optim.exempt_taps": run.exempt_taps,
    }


def _schedule_from_record(record: dict) -> ScheduleState:
    return ScheduleState(
        phase=record["schedule.phase"],
        best_val_ppl=float(record["schedule.best_val_ppl"]),
        halving_epochs_done=int(record["schedule.halving_epochs_done"]),
        current_scale=float(record["schedule.current_scale"]),
        stopped=record["schedule.stopped"] == "true",
    )


class _Log:
    def __init__(self, path: Path | None, echo: bool):
        self.path = path
        self.echo = echo

    def __call__(self, line: str):
        if self.echo:
            print(line, flush=True)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def train(
    run: RunConfig,
    resume: str | Path | None = None,
    echo: bool = True,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Train until the schedule stops or ``max_epochs`` is reached.

    ``stop_after_epoch`` ends the run early (used to simulate interruption);
    the checkpoints written up to that point are identical to those of a
    full run.
    """
    run.validate()
    ckpt_dir = Path(run.checkpoint_dir)
    log = _Log(ckpt_dir / "train.log", echo)

    train_sents, vocab_size = read_encoded(run.train)
    valid_sents, valid_vocab = read_encoded(run.valid)
    if valid_vocab != vocab_size:
        raise ValueError(f"train and valid files disagree on vocab_size ({vocab_size} vs {valid_vocab})")
    config = run.model_config(vocab_size)
    optim_cfg = run.optim_config()

    if resume is not None:
        params, ck_config, record, velocity = checkpoint.load(resume)
        if ck_config != config:
            raise ValueError(f"checkpoint architecture {ck_config.describe()} does not match config {config.describe()}")
        schedule = _schedule_from_record(record)
        start_epoch = int(record["run.epoch"]) + 1
        best_ckpt_ppl = float(record["run.best_checkpoint_ppl"])
        velocity = velocity if velocity is not None else init_velocity(params)
        log(_kv(event="resume", checkpoint=resume, epoch=start_epoch))
    else:
        params = init_parameters(config, run.seed)
        velocity = init_velocity(params)
        schedule = ScheduleState()
        start_epoch = 1
        best_ckpt_ppl = math.inf
        log(_kv(event="start", arch=config.describe(), params=config.num_parameters(), seed=run.seed))

    result = TrainResult(params, config, best_valid_ppl=best_ckpt_ppl)
    best_path, last_path = ckpt_dir / "best.ckpt", ckpt_dir / "last.ckpt"
    epoch = start_epoch - 1
    for epoch in range(start_epoch, run.max_epochs + 1):
        if schedule.stopped:
            break
        lr_scale = schedule.current_scale
        batches = make_batches(train_sents, run.batch_size, epoch_seed(run.seed, epoch), config.context_window)
        total, count = 0.0, 0
        for b, batch in enumerate(batches, start=1):
            loss, grads = loss_and_grad(params, config, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch={epoch} batch={b}")
            try:
                sgd_step(params, grads, velocity, optim_cfg, schedule)
            except NonFiniteGradientError as exc:
                raise TrainingError(f"{exc} at epoch={epoch} batch={b}") from None
            total += loss * batch.num_positions
            count += batch.num_positions
            if run.log_interval and b % run.log_interval == 0:
                log(_kv(event="batch", epoch=epoch, batch=b, loss=loss))
        train_loss = total / count
        valid_ppl = perplexity(params, config, valid_sents)
        schedule, decision = schedule_update(schedule, valid_ppl)
        log(
            _kv(
                event="epoch",
                epoch=epoch,
                train_loss=train_loss,
                train_ppl=math.exp(train_loss),
                valid_ppl=valid_ppl,
                lr_scale=lr_scale,
                decision=decision,
            )
        )
        result.history.append(EpochRecord(epoch, train_loss, valid_ppl, lr_scale, decision))
        if valid_ppl < best_ckpt_ppl:
            best_ckpt_ppl = valid_ppl
            checkpoint.save(best_path, params, config, _state_record(schedule, epoch, best_ckpt_ppl, run))
            result.best_checkpoint = best_path
        extra = _state_record(schedule, epoch, best_ckpt_ppl, run)
        checkpoint.save(last_path, params, config, extra, velocity)
        if decision == STOP or (stop_after_epoch is not None and epoch >= stop_after_epoch):
            break

    result.best_valid_ppl = best_ckpt_ppl
    result.final_checkpoint = last_path
    if best_path.exists():
        result.best_checkpoint = best_path
    if run.test is not None and stop_after_epoch is None:
        test_sents, _ = read_encoded(run.test)
        log(_kv(event="test", epoch=epoch, test_ppl=perplexity(params, config, test_sents)))
    return result
