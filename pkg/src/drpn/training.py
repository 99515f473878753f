"""Negative sampling, the training loop, checkpoints and ablation runs."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import numerics as nx
from .evaluation import MetricReport, evaluate
from .fusion import training_loss
from .ingest import (
    CollabGraph,
    DatasetSplits,
    ImpressionLog,
    NewsCatalog,
    UserProfile,
    build_collab_graph,
    build_profiles,
    rebuild_splits,
)
from .model import DRPN, VARIANT_LABELS, ModelConfig

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Dataset:
    """Everything a run needs besides hyperparameters."""
    catalog: NewsCatalog
    splits: DatasetSplits
    profiles: dict[str, UserProfile]
    graph: CollabGraph

    @property
    def known_news(self) -> set[str]:
        """News with a learnable ID embedding: anything seen in the profile or train windows."""
        seen = set()
        for lg in self.splits.profile_logs + self.splits.train_logs:
            seen.update(n for n, _ in lg.displayed)
        return seen


def prepare_dataset(catalog: NewsCatalog, logs: list[ImpressionLog], config: ModelConfig,
                    profile_days: int = 5, train_days: int = 1, val_frac: float = 0.10) -> Dataset:
    splits = rebuild_splits(logs, profile_days, train_days, val_frac)
    profiles, matrix = build_profiles(splits.profile_logs, config.l_p, config.l_n)
    return Dataset(catalog, splits, profiles, build_collab_graph(matrix, config.k_nbr))


# ---------------------------------------------------------------- samples


@dataclass(frozen=True)
class TrainSample:
    user_id: str
    positive: str
    negatives: tuple[str, ...]
    epoch_seed: int


def sample_negatives(impression: ImpressionLog, l_k: int, rng: np.random.Generator,
                     epoch_seed: int = 0) -> list[TrainSample]:
    """One sample per clicked item, negatives drawn from the impression's skipped items.

    With fewer than ``l_k`` skips every skip is used once and the remainder is
    filled by sampling with replacement. Returns [] when nothing was skipped.
    """
    skipped = impression.skipped
    if not skipped:
        return []
    out = []
    for pos in impression.clicked:
        if len(skipped) >= l_k:
            idx = rng.choice(len(skipped), size=l_k, replace=False)
        else:
            idx = np.concatenate([rng.permutation(len(skipped)),
                                  rng.integers(0, len(skipped), size=l_k - len(skipped))])
        out.append(TrainSample(impression.user_id, pos, tuple(skipped[i] for i in idx), epoch_seed))
    return out


def epoch_samples(logs: list[ImpressionLog], l_k: int, seed: int, epoch: int) -> tuple[list[TrainSample], int]:
    """Shuffled samples for one epoch and the count of impressions without skips."""
    rng = np.random.default_rng([seed, epoch])
    samples, dropped = [], 0
    for lg in logs:
        s = sample_negatives(lg, l_k, rng, epoch)
        if not s and lg.clicked:
            dropped += 1
        samples += s
    order = rng.permutation(len(samples))
    return [samples[i] for i in order], dropped


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: DRPN
    log_rows: list[dict]
    best_epoch: int
    best_val: MetricReport | None
    optimizer: nx.Adam
    epochs_run: int = 0
    history: list[MetricReport] = field(default_factory=list)


LOG_COLUMNS = ("epoch", "step", "kind", "loss", "lr", "val_auc", "val_mrr", "val_ndcg5", "val_ndcg10")


def batch_loss(model: DRPN, samples: list[TrainSample]) -> nx.Tensor:
    profiles = [model.profile(s.user_id) for s in samples]
    cands = [[s.positive, *s.negatives] for s in samples]
    return training_loss(model.forward(model.make_batch(profiles, cands)).scores)


def train(config: ModelConfig, data: Dataset, *, threads: int = 1, checkpoint_dir=None,
          resume=None, model: DRPN | None = None) -> TrainResult:
    """Adam on the mean (l_k + 1)-way loss, early-stopped on validation AUC.

    The returned model holds the best-validation parameters. With
    ``checkpoint_dir`` the latest state is written after every epoch
    (``last.ckpt``) and the best model at the end (``model.ckpt``);
    ``resume`` continues from such a ``last.ckpt``.
    """
    with threadpool_limits(1):
        return _train(config, data, threads, checkpoint_dir, resume, model)


def _train(config, data, threads, checkpoint_dir, resume, model):
    start_epoch, best_auc, best_epoch, bad = 1, -math.inf, 0, 0
    opt = nx.Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    rows: list[dict] = []
    best_store = None
    if resume is not None:
        store, meta, ropt = nx.load_checkpoint(resume)
        model = DRPN(config, data.catalog, data.graph, data.known_news, store)
        opt = ropt or opt
        st = meta["train_state"]
        start_epoch, best_auc, best_epoch, bad = st["epoch"] + 1, st["best_auc"], st["best_epoch"], st["bad"]
        rows = list(meta.get("log_rows", []))
        best_path = Path(resume).with_name("best.ckpt")
        best_store = nx.load_checkpoint(best_path)[0] if best_path.exists() else store.copy()
    elif model is None:
        model = DRPN(config, data.catalog, data.graph, data.known_news)
    model.profiles = data.profiles
    history = []
    epochs_run = 0
    for epoch in range(start_epoch, config.epochs + 1):
        if bad >= config.patience:
            break
        samples, dropped = epoch_samples(data.splits.train_logs, config.l_k, config.seed, epoch)
        if dropped:
            log.info("epoch %d: %d impressions without skipped items ignored", epoch, dropped)
        losses = []
        for step, i in enumerate(range(0, len(samples), config.batch_size), 1):
            model.store.zero_grads()
            with nx.Tape() as tape:
                loss = batch_loss(model, samples[i:i + config.batch_size])
                if not math.isfinite(loss.item()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
                tape.backward(loss)
            opt.step(model.store)
            losses.append(loss.item())
            rows.append({"epoch": epoch, "step": step, "kind": "step", "loss": loss.item(), "lr": opt.lr})
        model.store.zero_grads()
        report, _ = evaluate(model, data.splits.validation_logs, data.profiles, threads)
        history.append(report)
        rows.append({"epoch": epoch, "step": len(losses), "kind": "epoch",
                     "loss": math.fsum(losses) / max(len(losses), 1), "lr": opt.lr,
                     "val_auc": report.auc, "val_mrr": report.mrr, "val_ndcg5": report.ndcg5,
                     "val_ndcg10": report.ndcg10})
        log.info("epoch %d loss %.4f val %s", epoch, rows[-1]["loss"], report.table())
        epochs_run += 1
        if report.auc > best_auc:
            best_auc, best_epoch, bad = report.auc, epoch, 0
            best_store = model.store.copy()
        else:
            bad += 1
        if checkpoint_dir is not None:
            cdir = Path(checkpoint_dir)
            cdir.mkdir(parents=True, exist_ok=True)
            state = {"epoch": epoch, "best_auc": best_auc, "best_epoch": best_epoch, "bad": bad}
            save_model(cdir / "best.ckpt", model.config, best_store)
            save_model(cdir / "last.ckpt", model.config, model.store, opt, train_state=state, log_rows=rows)
    if best_store is not None:
        model.store.load_values(best_store)
    best_val = None
    if best_epoch:
        best_val = history[best_epoch - start_epoch] if best_epoch >= start_epoch else None
    if checkpoint_dir is not None:
        save_model(Path(checkpoint_dir) / "model.ckpt", model.config, model.store, best_epoch=best_epoch)
    return TrainResult(model, rows, best_epoch, best_val, opt, epochs_run, history)


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join("" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
                               for c in LOG_COLUMNS) + "\n")


# ---------------------------------------------------------------- checkpoints


def save_model(path, config: ModelConfig, store: nx.ParamStore, optimizer: nx.Adam | None = None, **extra) -> None:
    meta = {"config": config.to_dict(), "seed": config.seed, **extra}
    nx.save_checkpoint(path, store, meta, optimizer)


def load_model(path, data: Dataset, config: ModelConfig | None = None) -> DRPN:
    """Rebuild a model from a checkpoint; ``config`` overrides the stored one.

    Raises CheckpointError when the stored slots do not fit the configuration.
    """
    store, meta, _ = nx.load_checkpoint(path)
    cfg = config or ModelConfig.from_dict(meta["config"])
    model = DRPN(cfg, data.catalog, data.graph, data.known_news, store)
    model.profiles = data.profiles
    return model


# ---------------------------------------------------------------- ablations


def compare_ablations(config: ModelConfig, data: Dataset, variants=tuple(VARIANT_LABELS), threads: int = 1,
                      out_dir=None) -> dict[str, MetricReport]:
    """Train each variant under identical seed and data; report test metrics.

    With ``out_dir`` a variant whose ``model.ckpt`` already exists is
    evaluated from it instead of being retrained.
    """
    results = {}
    for v in variants:
        cfg = ModelConfig.from_dict({**config.to_dict(), "variant": v})
        vdir = Path(out_dir) / v if out_dir is not None else None
        if vdir is not None and (vdir / "model.ckpt").exists():
            model = load_model(vdir / "model.ckpt", data, cfg)
        else:
            model = train(cfg, data, threads=threads, checkpoint_dir=vdir).model
        with threadpool_limits(1):
            report, _ = evaluate(model, data.splits.test_logs, data.profiles, threads)
        results[VARIANT_LABELS[v]] = report
    return results
