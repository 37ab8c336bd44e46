"""End-to-end training.

One Trainer class drives three recipes:

* baseline: plain cross-entropy on the reference network;
* retrain: attach a dropout-variant replica chain to a trained baseline and
  optimize the masked, return-weighted surrogate loss;
* depth search: the same with the depth-variant chain and a step-decayed
  learning rate.

The surrogate loss for one stream of m units with step lengths tau is

    L = -(1/m) sum_i (1/tau_i) sum_t w_t * mask_t_i * log p_t(target_i)

with w_0 = 1 and w_t the configured return weights. Masks and step lengths
enter as constants (no gradient flows through them). With zero replicas the
expression collapses to plain mean cross-entropy, and the implementation is
arranged so the collapse is bit-exact: coefficients reduce to -1/m through
multiplications by exactly 1.0, and the taped operation sequence is
identical to the cross-entropy path.

Cold start runs the first configured epochs at learning rate zero so the
adaptive optimizer's moment vectors warm up against live gradients without
moving a single parameter; plain SGD has no moments and skips the phase.

Determinism: a run is a pure function of (config, seed). All randomness
flows through named counter-based streams ("init/network", "init/replica",
"shuffle", "dropout") whose counters are checkpointed, so an interrupted
run resumes bit-identically. Wall-clock timings go to a separate file so
metrics and checkpoints are byte-identical across reruns.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chain import (VARIANT_DEPTH, VARIANT_DROPOUT, ChainedModel,
                    attach_chain, strip_chain)
from .checkpoint import (VARIANT_TAG_BASE, VARIANT_TAG_DEPTH,
                         VARIANT_TAG_DROPOUT, CheckpointData, CheckpointError,
                         OptimizerSnapshot, TrainPosition, load_checkpoint,
                         save_checkpoint)
from .config import SCHEDULE_STEP, TrainConfig, parse_config, render_config
from .nets import Network
from .optim import AdamW, make_optimizer
from .rng import RngStream
from .tasks import Dataset, build_network, load_or_generate
from .trajectory import (TASK_LANGUAGE_MODELING, TASK_SEGMENTATION,
                         EpisodeBatch, MaskSeries, ReturnWeights,
                         grouped_scale)

METRICS_SCHEMA = 1

#: Recipe used when a retrain run has no baseline checkpoint to start from.
INTERNAL_BASELINE_EPOCHS = 12
INTERNAL_BASELINE_LR = 1e-3

LOSS_CROSS_ENTROPY = "ce"
LOSS_SURROGATE = "surrogate"

RNG_LABELS = ("init/network", "init/replica", "shuffle", "dropout")


class RunError(RuntimeError):
    """Raised when a training run fails (divergence, bad inputs)."""


# --- losses ----------------------------------------------------------------


def cross_entropy_loss(logits: Tensor, targets: np.ndarray, m_total: int) -> Tensor:
    """Mean cross-entropy over m_total units, written as a coefficient-
    weighted sum (coefficient -1/m per unit)."""
    picked = ad.gather(ad.log_softmax(logits), np.asarray(targets, dtype=np.int64))
    coeff = np.full(picked.shape, -1.0 / m_total)
    return ad.reduce_sum(ad.mul(picked, ad.constant(coeff)))


def surrogate_loss(logits_per_depth: List[Tensor], targets: np.ndarray,
                   masks: MaskSeries, weights: ReturnWeights, m_total: int,
                   step_lengths: np.ndarray) -> Tensor:
    """Masked, return-weighted, step-length-normalized log-likelihood for
    one stream. Masks and step lengths are constants."""
    horizon = len(logits_per_depth) - 1
    if masks.horizon != horizon:
        raise ValueError(
            f"mask series covers horizon {masks.horizon}, logits cover {horizon}")
    targets = np.asarray(targets, dtype=np.int64)
    scale = grouped_scale(m_total, step_lengths)
    total: Optional[Tensor] = None
    for t, logits in enumerate(logits_per_depth):
        if logits.shape[:-1] != targets.shape:
            raise ValueError(
                f"depth-{t} logits unit shape {logits.shape[:-1]} does not "
                f"match targets {targets.shape}")
        mask = masks.masks[t]
        if mask.shape != targets.shape:
            raise ValueError(
                f"depth-{t} mask shape {mask.shape} does not match targets "
                f"{targets.shape}")
        coeff = (-weights.weight(t)) * mask * scale
        picked = ad.gather(ad.log_softmax(logits), targets)
        term = ad.reduce_sum(ad.mul(picked, ad.constant(coeff)))
        total = term if total is None else ad.add(total, term)
    assert total is not None
    return total


# --- metrics ---------------------------------------------------------------


class RunMetrics:
    """Per-epoch records, one per (epoch, split), JSON-lines on disk.
    Wall-clock timings live in a separate companion file so the metrics
    bytes are reproducible."""

    def __init__(self):
        self.records: List[dict] = []
        self.timings: List[dict] = []

    def append(self, record: dict) -> None:
        key = (record["epoch"], record["split"])
        if any((r["epoch"], r["split"]) == key for r in self.records):
            raise ValueError(f"duplicate metrics record for {key}")
        survival = record.get("survival")
        if survival is not None and any(
                survival[i + 1] > survival[i] + 1e-12 for i in range(len(survival) - 1)):
            raise ValueError("survival fractions must be non-increasing in depth")
        self.records.append(dict(record, schema=METRICS_SCHEMA))

    def add_timing(self, epoch: int, seconds: float) -> None:
        self.timings.append({"epoch": epoch, "seconds": seconds})

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, out_dir: str) -> None:
        with open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())
        with open(os.path.join(out_dir, "timing.jsonl"), "w", encoding="utf-8") as fh:
            for t in self.timings:
                fh.write(json.dumps(t, sort_keys=True) + "\n")


def read_metrics(path: str) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# --- trainer ---------------------------------------------------------------


class Trainer:
    """Deterministic single-threaded training loop over one config."""

    def __init__(self, cfg: TrainConfig, loss_kind: str = LOSS_CROSS_ENTROPY,
                 attach_replicas: bool = False,
                 base_params: Optional[Dict[str, np.ndarray]] = None,
                 cache_dir: Optional[str] = None):
        if loss_kind not in (LOSS_CROSS_ENTROPY, LOSS_SURROGATE):
            raise ValueError(f"unknown loss kind '{loss_kind}'")
        self.cfg = cfg
        self.loss_kind = loss_kind
        self.cache_dir = cache_dir
        self.rngs = {label: RngStream(cfg.seed, label) for label in RNG_LABELS}
        self.datasets: Dict[str, Dataset] = {
            split: load_or_generate(cfg.task, split, cache_dir)
            for split in ("train", "val", "test")
        }
        self.network: Network = _build_network(cfg, self.rngs["init/network"])
        if base_params is not None:
            _load_params(self.network, base_params)
        self.chained: Optional[ChainedModel] = None
        if attach_replicas:
            self.chained = attach_chain(self.network, cfg.chain_config(),
                                        self.rngs["init/replica"])
        self.named = (self.chained.named_params() if self.chained
                      else self.network.named_params())
        self._name_by_id = {id(p): name for name, p in self.named}
        self.params = [p for _, p in self.named]
        self.optimizers = self._build_optimizers()
        self.epoch = 0
        self.step_in_epoch = 0
        self._order: Optional[np.ndarray] = None
        self._shuffle_counter_epoch_start = self.rngs["shuffle"].counter
        self.metrics = RunMetrics()

    # -- construction helpers

    def _build_optimizers(self):
        cfg = self.cfg
        if self.chained is not None and cfg.replica_lr is not None:
            base = [p for _, p in self.network.named_params()]
            extra = [p for _, p in self.chained.chain.named_params()]
            return [
                make_optimizer(cfg.optimizer, base, cfg.lr, cfg.weight_decay),
                make_optimizer(cfg.optimizer, extra, cfg.replica_lr, cfg.weight_decay),
            ]
        return [make_optimizer(cfg.optimizer, self.params, cfg.lr, cfg.weight_decay)]

    @property
    def cold_epochs(self) -> int:
        """Cold start applies to the adaptive optimizer only; plain SGD has
        no moment vectors to warm."""
        return self.cfg.cold_start_epochs if self.cfg.optimizer == "adamw" else 0

    def lr_scale_for_epoch(self, epoch: int) -> float:
        if epoch < self.cold_epochs:
            return 0.0
        scheduled = epoch - self.cold_epochs
        if self.cfg.schedule == SCHEDULE_STEP:
            return self.cfg.schedule_factor ** (scheduled // self.cfg.schedule_interval)
        return 1.0

    # -- forward/backward

    def _forward(self, features: np.ndarray, targets: np.ndarray,
                 training: bool) -> Tuple[Tensor, dict]:
        if self.chained is not None:
            return self._forward_surrogate(features, targets, training)
        return self._forward_ce(features, targets)

    def _forward_ce(self, features: np.ndarray, targets: np.ndarray) -> Tuple[Tensor, dict]:
        streams = self.network.streams(features, targets)
        m_total = int(sum(s.targets.shape[0] for s in streams))
        loss: Optional[Tensor] = None
        correct = 0
        for stream in streams:
            logits = self.network.head_logits(stream.hidden)
            term = cross_entropy_loss(logits, stream.targets, m_total)
            loss = term if loss is None else ad.add(loss, term)
            correct += int((np.argmax(logits.data, axis=-1) == stream.targets).sum())
        stats = {"m": m_total, "correct0": correct,
                 "survival_sums": [float(m_total)],
                 "step_length_sum": float(m_total)}
        return loss, stats

    def _forward_surrogate(self, features: np.ndarray, targets: np.ndarray,
                           training: bool) -> Tuple[Tensor, dict]:
        episodes = self.chained.forward_streams(
            features, targets, self.rngs["dropout"], training)
        m_total = int(sum(ep.targets.shape[0] for ep in episodes))
        weights = self.cfg.weights()
        horizon = self.cfg.replicas
        loss: Optional[Tensor] = None
        correct = 0
        survival_sums = [0.0] * (horizon + 1)
        sl_sum = 0.0
        for ep in episodes:
            batch = EpisodeBatch.build([t.data for t in ep.logits], ep.targets, weights)
            term = surrogate_loss(ep.logits, ep.targets, batch.masks, weights,
                                  m_total, batch.step_lengths)
            loss = term if loss is None else ad.add(loss, term)
            correct += int((np.argmax(ep.logits[0].data, axis=-1) == ep.targets).sum())
            for t in range(horizon + 1):
                survival_sums[t] += float(batch.masks.masks[t].sum())
            sl_sum += float(batch.step_lengths.sum())
        stats = {"m": m_total, "correct0": correct,
                 "survival_sums": survival_sums, "step_length_sum": sl_sum}
        return loss, stats

    def _step(self, idx: np.ndarray, lr_scale: float) -> dict:
        train = self.datasets["train"]
        ad.zero_grads(self.params)
        with ad.Tape() as tape:
            loss, stats = self._forward(train.features[idx], train.targets[idx],
                                        training=True)
            tape.backward(loss)
        for opt in self.optimizers:
            opt.step(lr_scale)
        stats["loss"] = float(loss.data)
        return stats

    def _batches(self, n: int) -> List[np.ndarray]:
        bs = self.cfg.batch_size
        assert self._order is not None
        return [self._order[i:i + bs] for i in range(0, n, bs)]

    def _begin_epoch(self) -> None:
        n = len(self.datasets["train"])
        self._shuffle_counter_epoch_start = self.rngs["shuffle"].counter
        self._order = self.rngs["shuffle"].permutation(n)

    # -- drivers

    def train_epochs(self, count: int) -> List[dict]:
        """Run `count` full training epochs (no evaluation); returns one
        aggregate stats dict per epoch."""
        out = []
        for _ in range(count):
            if self.epoch >= self.cfg.epochs:
                break
            out.append(self._run_one_epoch())
        return out

    def train_steps(self, budget: int) -> int:
        """Run up to `budget` optimizer steps, crossing epoch boundaries as
        needed; returns the number of steps taken."""
        taken = 0
        n = len(self.datasets["train"])
        while taken < budget and self.epoch < self.cfg.epochs:
            if self.step_in_epoch == 0:
                self._begin_epoch()
            lr_scale = self.lr_scale_for_epoch(self.epoch)
            batches = self._batches(n)
            while self.step_in_epoch < len(batches) and taken < budget:
                self._step(batches[self.step_in_epoch], lr_scale)
                self.step_in_epoch += 1
                taken += 1
            if self.step_in_epoch >= len(batches):
                self.epoch += 1
                self.step_in_epoch = 0
                self._order = None
        return taken

    def _run_one_epoch(self) -> dict:
        n = len(self.datasets["train"])
        if self.step_in_epoch == 0:
            self._begin_epoch()
        lr_scale = self.lr_scale_for_epoch(self.epoch)
        batches = self._batches(n)
        loss_sum = 0.0
        m_sum = 0
        correct_sum = 0
        horizon = self.cfg.replicas if self.chained is not None else 0
        survival_sums = [0.0] * (horizon + 1)
        sl_sum = 0.0
        while self.step_in_epoch < len(batches):
            stats = self._step(batches[self.step_in_epoch], lr_scale)
            self.step_in_epoch += 1
            loss_sum += stats["loss"] * stats["m"]
            m_sum += stats["m"]
            correct_sum += stats["correct0"]
            for t, s in enumerate(stats["survival_sums"]):
                survival_sums[t] += s
            sl_sum += stats["step_length_sum"]
        epoch_stats = {
            "epoch": self.epoch,
            "phase": "cold" if lr_scale == 0.0 and self.epoch < self.cold_epochs else "train",
            "loss": loss_sum / m_sum,
            "accuracy": correct_sum / m_sum,
            "survival": [s / m_sum for s in survival_sums],
            "mean_step_length": sl_sum / m_sum,
            "lr": self.cfg.lr * lr_scale,
        }
        if not np.isfinite(epoch_stats["loss"]):
            raise RunError(f"training diverged: non-finite loss at epoch {self.epoch}")
        self.epoch += 1
        self.step_in_epoch = 0
        self._order = None
        return epoch_stats

    # -- evaluation

    def evaluate(self, split: str, unstripped: bool = False) -> dict:
        """Deterministic metrics on one split using the base network path
        (the stripped model). With unstripped=True, also reports eval-mode
        accuracy at every replica depth."""
        if split not in self.datasets:
            raise ValueError(f"unknown split '{split}'")
        ds = self.datasets[split]
        cfg = self.cfg
        bs = cfg.batch_size
        n = len(ds)
        loss_sum = 0.0
        m_sum = 0
        correct = 0
        depth_correct: Optional[List[int]] = None
        preds_main: List[np.ndarray] = []
        targs_main: List[np.ndarray] = []
        for i in range(0, n, bs):
            feats = ds.features[i:i + bs]
            targs = ds.targets[i:i + bs]
            streams = self.network.streams(feats, targs)
            m_batch = int(sum(s.targets.shape[0] for s in streams))
            for stream in streams:
                logits = self.network.head_logits(stream.hidden)
                term = cross_entropy_loss(logits, stream.targets, m_batch)
                loss_sum += float(term.data) * m_batch
                pred = np.argmax(logits.data, axis=-1)
                correct += int((pred == stream.targets).sum())
                if stream.tag == "main":
                    preds_main.append(pred)
                    targs_main.append(stream.targets)
            m_sum += m_batch
            if unstripped and self.chained is not None:
                episodes = self.chained.forward_streams(feats, targs, None, False)
                if depth_correct is None:
                    depth_correct = [0] * (cfg.replicas + 1)
                for ep in episodes:
                    for t, lg in enumerate(ep.logits):
                        depth_correct[t] += int(
                            (np.argmax(lg.data, axis=-1) == ep.targets).sum())
        result = {"loss": loss_sum / m_sum, "accuracy": correct / m_sum}
        if depth_correct is not None:
            result["depth_accuracy"] = [c / m_sum for c in depth_correct]
        self._task_metrics(result, ds, np.concatenate(preds_main),
                           np.concatenate(targs_main))
        return result

    def _task_metrics(self, result: dict, ds: Dataset, preds: np.ndarray,
                      targets: np.ndarray) -> None:
        kind = self.cfg.task.kind
        if kind == TASK_SEGMENTATION:
            ious = []
            for c in range(self.cfg.task.classes):
                inter = int(((preds == c) & (targets == c)).sum())
                union = int(((preds == c) | (targets == c)).sum())
                ious.append(inter / union if union else 1.0)
            result["iou"] = ious
            result["main_pixel_accuracy"] = float((preds == targets).mean())
        elif kind == TASK_LANGUAGE_MODELING and ds.clean is not None:
            clean = ds.clean.reshape(-1).astype(bool)
            if clean.any():
                result["clean_accuracy"] = float((preds == targets)[clean].mean())

    # -- checkpointing

    def _variant_tag(self) -> int:
        if self.chained is None:
            return VARIANT_TAG_BASE
        return (VARIANT_TAG_DROPOUT if self.cfg.variant == VARIANT_DROPOUT
                else VARIANT_TAG_DEPTH)

    def snapshot(self, stripped: bool = False,
                 with_position: bool = True) -> CheckpointData:
        model = self.network if (stripped or self.chained is None) else self.chained
        params = {name: p.data.copy() for name, p in model.named_params()}
        slots: Dict[str, Dict[str, np.ndarray]] = {}
        step = 0
        for opt in self.optimizers:
            step = max(step, opt.state.step)
            if isinstance(opt, AdamW):
                for p in opt.params:
                    slot = opt.state.slots.get(id(p))
                    name = self._name_by_id.get(id(p))
                    if slot is not None and name is not None and name in params:
                        slots[name] = {k: v.copy() for k, v in slot.items()}
        position = None
        if with_position:
            position = TrainPosition(self.epoch, self.step_in_epoch,
                                     self._shuffle_counter_epoch_start)
        return CheckpointData(
            variant=VARIANT_TAG_BASE if stripped else self._variant_tag(),
            replicas=0 if stripped else (self.cfg.replicas if self.chained else 0),
            hidden=self.cfg.hidden,
            classes=self.cfg.task.head_classes,
            params=params,
            optimizer=OptimizerSnapshot(self.cfg.optimizer, step, slots),
            rng_states={label: (s.seed, s.counter) for label, s in self.rngs.items()},
            position=position,
            config_text=render_config(self.cfg),
        )

    def save_state(self, path: str, stripped: bool = False) -> None:
        save_checkpoint(path, self.snapshot(stripped=stripped))

    @classmethod
    def restore(cls, path: str, cache_dir: Optional[str] = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint so that continuing the run
        is bit-identical to never having stopped."""
        data = load_checkpoint(path)
        cfg = parse_config(data.config_text, source=path)
        attach = data.variant != VARIANT_TAG_BASE
        loss_kind = LOSS_SURROGATE if attach else LOSS_CROSS_ENTROPY
        tr = cls(cfg, loss_kind=loss_kind, attach_replicas=attach,
                 cache_dir=cache_dir)
        _load_params(tr.chained if attach else tr.network, data.params)
        if data.optimizer is not None:
            by_name = dict(tr.named)
            for opt in tr.optimizers:
                opt.state.step = data.optimizer.step
                if isinstance(opt, AdamW):
                    mine = {id(p) for p in opt.params}
                    for name, slot in data.optimizer.slots.items():
                        p = by_name.get(name)
                        if p is not None and id(p) in mine:
                            opt.state.slots[id(p)] = {k: v.copy() for k, v
                                                      in slot.items()}
        for label, (seed, counter) in data.rng_states.items():
            if label in tr.rngs:
                if tr.rngs[label].seed != seed:
                    raise CheckpointError(
                        f"rng stream '{label}' was saved under a different seed")
                tr.rngs[label].counter = counter
        if data.position is not None:
            tr.epoch = data.position.epoch
            tr.step_in_epoch = data.position.step_in_epoch
            tr._shuffle_counter_epoch_start = data.position.shuffle_counter_epoch_start
            if tr.step_in_epoch > 0:
                saved = tr.rngs["shuffle"].counter
                tr.rngs["shuffle"].counter = data.position.shuffle_counter_epoch_start
                tr._order = tr.rngs["shuffle"].permutation(len(tr.datasets["train"]))
                if tr.rngs["shuffle"].counter != saved:
                    raise CheckpointError(
                        "shuffle stream counter mismatch while re-drawing the "
                        "epoch permutation")
        return tr


def _build_network(cfg: TrainConfig, rng: RngStream) -> Network:
    return build_network(cfg.task, cfg.hidden, rng)


def _load_params(model, params: Dict[str, np.ndarray]) -> None:
    own = dict(model.named_params())
    for name, arr in params.items():
        if name not in own:
            raise CheckpointError(f"checkpoint parameter '{name}' has no home "
                                  f"in this model")
        if own[name].data.shape != arr.shape:
            raise CheckpointError(
                f"parameter '{name}': checkpoint shape {arr.shape} does not "
                f"match model shape {own[name].data.shape}")
        own[name].data = arr.copy()


# --- run drivers -----------------------------------------------------------


def _emit(out_dir: Optional[str], trainer: Trainer, summary: dict,
          checkpoints: Dict[str, CheckpointData]) -> dict:
    if out_dir is None:
        return summary
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_echo.cfg"), "w", encoding="utf-8") as fh:
        fh.write(render_config(trainer.cfg))
    trainer.metrics.write(out_dir)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    paths = {}
    for name, data in checkpoints.items():
        path = os.path.join(ckpt_dir, f"{name}.ckpt")
        save_checkpoint(path, data)
        paths[name] = os.path.join("checkpoints", f"{name}.ckpt")
    summary = dict(summary, checkpoints=paths)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return summary


def _train_and_log(trainer: Trainer, quiet: bool) -> None:
    cfg = trainer.cfg
    while trainer.epoch < cfg.epochs:
        t0 = time.perf_counter()
        stats = trainer.train_epochs(1)[0]
        val = trainer.evaluate("val")
        trainer.metrics.add_timing(stats["epoch"], time.perf_counter() - t0)
        train_record = {
            "epoch": stats["epoch"], "split": "train", "phase": stats["phase"],
            "loss": stats["loss"], "accuracy": stats["accuracy"],
            "mean_step_length": stats["mean_step_length"],
            "survival": stats["survival"], "lr": stats["lr"],
        }
        val_record = {"epoch": stats["epoch"], "split": "val",
                      "phase": stats["phase"], "loss": val["loss"],
                      "accuracy": val["accuracy"]}
        for key in ("iou", "main_pixel_accuracy", "clean_accuracy"):
            if key in val:
                val_record[key] = val[key]
        trainer.metrics.append(train_record)
        trainer.metrics.append(val_record)
        if not quiet:
            print(f"epoch {stats['epoch']:3d} [{stats['phase']}] "
                  f"loss {stats['loss']:.4f} train-acc {stats['accuracy']:.4f} "
                  f"val-acc {val['accuracy']:.4f} lr {stats['lr']:.2e}")


def _append_test_record(trainer: Trainer, test: dict) -> None:
    record = {"epoch": trainer.cfg.epochs, "split": "test", "phase": "final",
              "loss": test["loss"], "accuracy": test["accuracy"]}
    for key in ("iou", "main_pixel_accuracy", "clean_accuracy"):
        if key in test:
            record[key] = test[key]
    trainer.metrics.append(record)


def _run_baseline_impl(cfg: TrainConfig, out_dir: Optional[str], quiet: bool,
                       cache_dir: Optional[str]) -> Tuple[Trainer, dict]:
    trainer = Trainer(cfg, loss_kind=LOSS_CROSS_ENTROPY, attach_replicas=False,
                      cache_dir=cache_dir)
    _train_and_log(trainer, quiet)
    test = trainer.evaluate("test")
    _append_test_record(trainer, test)
    summary = {
        "schema": METRICS_SCHEMA, "kind": "baseline", "seed": cfg.seed,
        "task_kind": cfg.task.kind, "epochs": cfg.epochs,
        "test_accuracy": test["accuracy"], "test_loss": test["loss"],
    }
    checkpoints = {"baseline": trainer.snapshot(stripped=True, with_position=False)}
    summary = _emit(out_dir, trainer, summary, checkpoints)
    return trainer, summary


def run_baseline(cfg: TrainConfig, out_dir: Optional[str] = None,
                 quiet: bool = True, cache_dir: Optional[str] = None) -> dict:
    """Train the reference network with plain cross-entropy; the resulting
    checkpoint seeds retraining and anchors every comparison."""
    return _run_baseline_impl(cfg, out_dir, quiet, cache_dir)[1]


def run_retrain(cfg: TrainConfig, out_dir: Optional[str] = None,
                quiet: bool = True, cache_dir: Optional[str] = None) -> dict:
    """Attach a replica chain to a trained baseline, optionally cold-start
    the optimizer, train the surrogate objective, then strip and evaluate.

    Works for both chain variants; the depth-search subcommand routes here
    with the depth variant and its step-decay schedule."""
    if cfg.replicas < 0:
        raise RunError("retraining needs a non-negative replica count")
    if cfg.baseline is not None:
        base = load_checkpoint(cfg.baseline)
        if base.variant != VARIANT_TAG_BASE:
            raise RunError(f"baseline checkpoint '{cfg.baseline}' is not a "
                           f"stripped/base checkpoint")
        if base.hidden != cfg.hidden or base.classes != cfg.task.head_classes:
            raise RunError(
                f"baseline geometry ({base.hidden} hidden, {base.classes} "
                f"classes) does not match config ({cfg.hidden} hidden, "
                f"{cfg.task.head_classes} classes)")
        base_params = base.params
        baseline_summary = None
    else:
        base_cfg = replace(cfg, epochs=INTERNAL_BASELINE_EPOCHS,
                           cold_start_epochs=0, lr=INTERNAL_BASELINE_LR,
                           schedule="constant", replicas=0, dropout_rates=(),
                           return_weights=(), baseline=None)
        base_dir = os.path.join(out_dir, "baseline") if out_dir else None
        base_trainer, baseline_summary = _run_baseline_impl(
            base_cfg, base_dir, quiet, cache_dir)
        base_params = {n: p.data.copy()
                       for n, p in base_trainer.network.named_params()}

    trainer = Trainer(cfg, loss_kind=LOSS_SURROGATE, attach_replicas=True,
                      base_params=base_params, cache_dir=cache_dir)
    baseline_eval = trainer.evaluate("test")
    _train_and_log(trainer, quiet)
    stripped = strip_chain(trainer.chained)
    assert stripped is trainer.network  # both share the same tensors
    test = trainer.evaluate("test")
    _append_test_record(trainer, test)
    kind = "nas" if cfg.variant == VARIANT_DEPTH else "retrain"
    summary = {
        "schema": METRICS_SCHEMA, "kind": kind, "seed": cfg.seed,
        "task_kind": cfg.task.kind, "epochs": cfg.epochs,
        "replicas": cfg.replicas, "variant": cfg.variant,
        "baseline_test_accuracy": baseline_eval["accuracy"],
        "stripped_test_accuracy": test["accuracy"],
        "test_accuracy": test["accuracy"], "test_loss": test["loss"],
        "accuracy_delta": test["accuracy"] - baseline_eval["accuracy"],
    }
    if baseline_summary is not None:
        summary["internal_baseline_test_accuracy"] = baseline_summary["test_accuracy"]
    checkpoints = {
        "chained": trainer.snapshot(stripped=False, with_position=False),
        "stripped": trainer.snapshot(stripped=True, with_position=False),
    }
    return _emit(out_dir, trainer, summary, checkpoints)


def evaluate_checkpoint(path: str, split: str,
                        cache_dir: Optional[str] = None) -> dict:
    """Load a checkpoint and evaluate its stripped predictions on a split."""
    data = load_checkpoint(path)
    cfg = parse_config(data.config_text, source=path)
    attach = data.variant != VARIANT_TAG_BASE
    trainer = Trainer(cfg, loss_kind=LOSS_SURROGATE if attach else LOSS_CROSS_ENTROPY,
                      attach_replicas=attach, cache_dir=cache_dir)
    _load_params(trainer.chained if attach else trainer.network, data.params)
    return trainer.evaluate(split)


def baseline_finetune(task_spec, hidden: int = 32, epochs: int = 12,
                      seed: int = 1, lr: float = 1e-3, batch_size: int = 64,
                      out_dir: Optional[str] = None,
                      cache_dir: Optional[str] = None) -> dict:
    """Convenience wrapper: train a vanilla cross-entropy baseline on a
    task spec with the default recipe."""
    cfg = TrainConfig(task=task_spec, hidden=hidden, seed=seed, epochs=epochs,
                      cold_start_epochs=0, lr=lr, batch_size=batch_size)
    return run_baseline(cfg, out_dir=out_dir, cache_dir=cache_dir)
