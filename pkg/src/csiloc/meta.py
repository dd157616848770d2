"""Per-scenario meta-training and similarity-guided fine-tuning.

Meta-training runs the classic double loop per scenario: inner SGD steps on a
group's support set produce adapted parameters, and the outer update applies
the summed query-set gradient to the shared parameters. The outer gradient is
evaluated at the adapted parameters and applied to the base ones (first-order
approximation; the tape engine records first-order graphs only).

Fine-tuning (the back half of the similarity-guided procedure) takes the
selected scenario's parameters and runs plain gradient descent on the new
scenario's support set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .channel import substream
from .errors import ConfigError, DataError, NumericsError, TrainingError, UsageError
from .params import ParamSet, sgd_step

_META_TAG = 0x4D45


@dataclass
class MetaConfig:
    inner_lr: float = 0.02        # alpha
    outer_lr: float = 0.01        # beta
    epochs: int = 40              # outer iterations per scenario
    meta_batch: int = 3           # groups per outer update
    inner_steps: int = 1
    finetune_steps: int = 30
    groups_per_scenario: int = 6
    loss_reduction: str = "sum"

    def __post_init__(self):
        for name in ("inner_lr", "outer_lr", "epochs", "meta_batch",
                     "inner_steps", "finetune_steps", "groups_per_scenario"):
            if getattr(self, name) < 0:
                raise ConfigError(f"MetaConfig.{name} must be >= 0")
        if not (self.inner_lr < 1.0 and self.outer_lr < 1.0):
            raise ConfigError("learning rates must be < 1")
        if self.loss_reduction not in ("sum", "mean"):
            raise ConfigError(f"unknown loss reduction {self.loss_reduction!r}")


@dataclass
class TaskSplit:
    support: list
    query: list

    def __post_init__(self):
        if not self.support or not self.query:
            raise DataError("TaskSplit: support and query must both be non-empty")


def split_groups(samples, n_groups, rng):
    """Random disjoint partition into n_groups TaskSplits, 50/50 within a group."""
    if len(samples) < 2 * n_groups:
        raise DataError(
            f"need >= {2 * n_groups} samples for {n_groups} groups, got {len(samples)}")
    order = rng.permutation(len(samples))
    chunks = np.array_split(order, n_groups)
    splits = []
    for chunk in chunks:
        half = len(chunk) // 2
        splits.append(TaskSplit(support=[samples[i] for i in chunk[:half]],
                                query=[samples[i] for i in chunk[half:]]))
    return splits


def inner_adapt(model, params, support, room_extent, cfg):
    """Gradient-descent adaptation on a support set; the input set is untouched."""
    if not support:
        raise DataError("inner_adapt: empty support set")
    adapted = params.copy()
    for step in range(cfg.inner_steps):
        tape = ad.Tape()
        try:
            loss = model.batch_loss(tape, adapted, support, room_extent, "inner",
                                    cfg.loss_reduction)
        except NumericsError as e:
            raise TrainingError(f"inner step {step}: {e}") from e
        ad.backward(tape, loss)
        sgd_step(adapted, cfg.inner_lr)
    return adapted


def meta_train_multi(model, scenarios, cfg, seed, init_params=None, log=None,
                     on_epoch=None):
    """Double-loop meta-training with groups pooled across scenarios.

    ``scenarios`` is a list of (graph_samples, room_extent) pairs. Each epoch
    re-partitions every scenario into groups, samples a meta batch from the
    pooled group list, adapts each group in the inner loop, and applies the
    accumulated query gradient to the shared parameters. Training curve
    entries are appended to ``log``. Batch-norm running statistics are
    calibrated with one forward sweep after the last epoch so eval-mode
    inference sees meaningful buffers.
    """
    params = init_params.copy() if init_params is not None else model.init_params(seed)
    for epoch in range(cfg.epochs):
        rng = substream(seed, _META_TAG, epoch)
        groups = []
        for samples, extent in scenarios:
            groups.extend((g, extent)
                          for g in split_groups(samples, cfg.groups_per_scenario, rng))
        take = min(cfg.meta_batch, len(groups))
        chosen = rng.choice(len(groups), size=take, replace=False)
        grad_acc = {name: np.zeros_like(t.value) for name, t in params.trainable_items()}
        group_losses = []
        for i in chosen:
            split, extent = groups[i]
            adapted = inner_adapt(model, params, split.support, extent, cfg)
            tape = ad.Tape()
            try:
                qloss = model.batch_loss(tape, adapted, split.query, extent,
                                         "train", cfg.loss_reduction)
            except NumericsError as e:
                raise TrainingError(f"epoch {epoch}, group {i}: {e}") from e
            ad.backward(tape, qloss)
            for name, t in adapted.trainable_items():
                grad_acc[name] += t.grad
            group_losses.append(float(qloss.value))
        for name, t in params.trainable_items():
            t.value = t.value - cfg.outer_lr * grad_acc[name]
            if not np.all(np.isfinite(t.value)):
                raise TrainingError(f"epoch {epoch}: parameter {name!r} diverged")
        if log is not None:
            log.append({"epoch": epoch, "outer_loss": float(np.sum(group_losses)),
                        "group_losses": group_losses})
        if on_epoch is not None:
            on_epoch(epoch, params)
    model.calibrate(params, [s for samples, _ in scenarios for s in samples])
    return params


def meta_train_scenario(model, samples, room_extent, cfg, seed,
                        init_params=None, log=None, on_epoch=None):
    """Scenario-specific meta-training (the per-scenario bank entries)."""
    return meta_train_multi(model, [(samples, room_extent)], cfg, seed,
                            init_params=init_params, log=log, on_epoch=on_epoch)


@dataclass
class FinetuneResult:
    params: ParamSet
    support_losses: list


def finetune(model, params_star, support, room_extent, cfg):
    """Adapt selected meta-parameters to a new scenario's support set.

    Gradient steps run with frozen running statistics; afterwards the buffers
    are recalibrated on the support set so eval-mode inference reflects the
    new scenario.
    """
    if not support:
        raise DataError("finetune: empty support set")
    adapted = params_star.copy()
    losses = []
    for step in range(cfg.finetune_steps + 1):
        tape = ad.Tape()
        try:
            loss = model.batch_loss(tape, adapted, support, room_extent, "inner",
                                    cfg.loss_reduction)
        except NumericsError as e:
            raise TrainingError(f"finetune step {step}: {e}") from e
        losses.append(float(loss.value))
        if step == cfg.finetune_steps:
            break
        ad.backward(tape, loss)
        sgd_step(adapted, cfg.inner_lr)
    model.calibrate(adapted, support)
    return FinetuneResult(params=adapted, support_losses=losses)


# ---------------------------------------------------------------------------
# scenario bank


@dataclass
class ScenarioRecord:
    name: str
    params: ParamSet
    embeddings: np.ndarray        # [n_samples, embed_dim]
    config_digest: str = ""
    meta: dict = field(default_factory=dict)


class ScenarioBank:
    """Per-scenario meta-parameters plus embedding sample sets, persistable.

    On disk: one parameter file per scenario, one embedding archive, the
    shared encoder/extractor parameter files, and a JSON manifest tying them
    to config digests and training metadata.
    """

    def __init__(self, records=None, encoder_params=None, embed_extractor_params=None,
                 info=None):
        self.records = list(records or [])
        self.encoder_params = encoder_params
        self.embed_extractor_params = embed_extractor_params
        self.info = dict(info or {})

    def __len__(self):
        return len(self.records)

    def add(self, record):
        if self.records:
            dims = {r.embeddings.shape[1] for r in self.records if r.embeddings.size}
            if record.embeddings.size and dims and record.embeddings.shape[1] not in dims:
                raise DataError("ScenarioBank: embedding dims differ across scenarios")
        self.records.append(record)

    def names(self):
        return [r.name for r in self.records]

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"version": 1, "info": self.info, "scenarios": []}
        embeddings = {}
        for i, rec in enumerate(self.records):
            pfile = f"scenario_{i:02d}.params"
            rec.params.save(d / pfile)
            embeddings[f"scenario_{i:02d}"] = rec.embeddings
            manifest["scenarios"].append({
                "name": rec.name, "params_file": pfile,
                "config_digest": rec.config_digest, "meta": rec.meta,
            })
        np.savez(d / "embeddings.npz", **embeddings)
        if self.encoder_params is not None:
            self.encoder_params.save(d / "encoder.params")
            manifest["encoder_file"] = "encoder.params"
        if self.embed_extractor_params is not None:
            self.embed_extractor_params.save(d / "embed_extractor.params")
            manifest["embed_extractor_file"] = "embed_extractor.params"
        with open(d / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        try:
            with open(d / "manifest.json") as f:
                manifest = json.load(f)
        except FileNotFoundError as e:
            raise DataError(f"{directory}: not a scenario bank (no manifest)") from e
        if manifest.get("version") != 1:
            raise DataError(f"{directory}: unsupported bank version")
        archives = np.load(d / "embeddings.npz")
        records = []
        for i, s in enumerate(manifest["scenarios"]):
            records.append(ScenarioRecord(
                name=s["name"],
                params=ParamSet.load(d / s["params_file"]),
                embeddings=archives[f"scenario_{i:02d}"],
                config_digest=s.get("config_digest", ""),
                meta=s.get("meta", {}),
            ))
        encoder = (ParamSet.load(d / manifest["encoder_file"])
                   if "encoder_file" in manifest else None)
        extractor = (ParamSet.load(d / manifest["embed_extractor_file"])
                     if "embed_extractor_file" in manifest else None)
        return cls(records=records, encoder_params=encoder,
                   embed_extractor_params=extractor, info=manifest.get("info", {}))


def select_scenario(bank, new_embeddings, sigma=None):
    """Pick the historical scenario whose embeddings are MMD-closest.

    Returns (index, mmd2 vector); ties break toward the lowest index. The
    kernel width defaults to the median heuristic on each pooled pair.
    """
    from .embedding import mmd2, median_sigma

    if len(bank) == 0:
        raise UsageError("select_scenario: empty bank")
    new_embeddings = np.asarray(new_embeddings, dtype=np.float64)
    values = np.empty(len(bank))
    for i, rec in enumerate(bank.records):
        s = sigma if sigma is not None else median_sigma(rec.embeddings, new_embeddings)
        values[i] = mmd2(rec.embeddings, new_embeddings, s)
    return int(np.argmin(values)), values
