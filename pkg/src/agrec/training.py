"""Pairwise ranking optimization of the four embedding tables.

Training minimizes, over sampled (user, positive, negative) triples,

    mean[-ln sigmoid(s_pos - s_neg)] + l2_weight * mean[||u0||^2 + ||p0||^2 + ||n0||^2]

with plain SGD. Because every propagation step is linear, gradients are the
transposed propagations applied to the output-side gradients, accumulated
down the layers with the same alpha weights; no autograd involved, which
keeps them auditable against finite differences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .graphs import GraphBundle
from .ingest import SplitDataset
from .kernels import gather_rows, scatter_rows
from .model import (EmbeddingTables, LayerStack, ModelConfig, final_embeddings,
                    forward, init_tables)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bpr_loss(s_pos, s_neg):
    """-ln sigmoid(s_pos - s_neg), in overflow-safe softplus form."""
    return softplus(-(np.asarray(s_pos, dtype=np.float64) - s_neg))


def sample_negatives(user, n_n: int, item_count: int, user_positives: dict,
                     rng: np.random.Generator) -> list[int]:
    """Draw n_n uniform non-positive items for `user` by rejection, with
    replacement across the n_n draws."""
    positives = user_positives.get(user, frozenset())
    if item_count <= len(positives):
        raise DataError(f"no negatives available for user {user!r}")
    out = []
    for _ in range(n_n):
        while True:
            j = int(rng.integers(item_count))
            if j not in positives:
                out.append(j)
                break
    return out


def _sample_negatives_block(users: np.ndarray, item_count: int,
                            user_positives: dict,
                            rng: np.random.Generator) -> np.ndarray:
    negs = rng.integers(item_count, size=users.shape[0])
    for t in range(users.shape[0]):
        positives = user_positives.get(int(users[t]), frozenset())
        if item_count <= len(positives):
            raise DataError(f"no negatives available for user {int(users[t])}")
        while int(negs[t]) in positives:
            negs[t] = rng.integers(item_count)
    return negs.astype(np.int64)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    reg: float
    triples: int
    seconds: float
    val_recall: float | None = None


class TrainDivergedError(NumericError):
    """Loss became non-finite; carries the tables from the last good epoch."""

    def __init__(self, message: str, last_good: EmbeddingTables | None,
                 stats: list[EpochStats]):
        super().__init__(message)
        self.last_good = last_good
        self.stats = stats


def _pair_scores(e_u, e_i, users, pos, negs):
    u_rows = e_u[users]
    s_pos = np.einsum("td,td->t", u_rows, e_i[pos])
    s_neg = np.einsum("td,td->t", u_rows, e_i[negs])
    return u_rows, s_pos, s_neg


def batch_loss(tables: EmbeddingTables, bundle: GraphBundle, config: ModelConfig,
               users, pos, negs) -> tuple[float, float, float]:
    """(total, bpr_mean, reg_mean) for a triple batch; recomputes the forward.

    This is the scalar objective that `backward` differentiates, kept as a
    plain function so finite-difference checks can probe it directly.
    """
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    negs = np.asarray(negs, dtype=np.int64)
    stack = forward(tables, bundle, config)
    e_u, e_i = final_embeddings(stack, config.alpha())
    _, s_pos, s_neg = _pair_scores(e_u, e_i, users, pos, negs)
    bpr = float(bpr_loss(s_pos, s_neg).mean())
    reg = config.l2_weight * float(
        (tables.users[users] ** 2).sum()
        + (tables.items[pos] ** 2).sum()
        + (tables.items[negs] ** 2).sum()) / users.shape[0]
    return bpr + reg, bpr, reg


def backward(users, pos, negs, stack: LayerStack, bundle: GraphBundle,
             config: ModelConfig) -> tuple[EmbeddingTables, float, float]:
    """Exact gradients of the batch objective w.r.t. the four layer-0 tables.

    Returns (gradients, bpr_mean, reg_mean). The adjoint recursion mirrors the
    forward: each layer-k gradient is the transposed propagation of layer k+1
    plus alpha_k times the loss gradient on the final embeddings.
    """
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    negs = np.asarray(negs, dtype=np.int64)
    n_triples = users.shape[0]
    alpha = config.alpha()

    e_u, e_i = final_embeddings(stack, alpha)
    u_rows, s_pos, s_neg = _pair_scores(e_u, e_i, users, pos, negs)
    delta = s_pos - s_neg
    g = (-sigmoid(-delta) / n_triples)[:, None]

    grad_final_u = np.zeros_like(e_u)
    grad_final_i = np.zeros_like(e_i)
    scatter_rows(grad_final_u, users, g * (e_i[pos] - e_i[negs]))
    scatter_rows(grad_final_i, pos, g * u_rows)
    scatter_rows(grad_final_i, negs, -g * u_rows)

    g_iia, g_ui, g_uiaa = bundle.g_iia, bundle.g_ui, bundle.g_uiaa
    k = config.layers
    z_u = alpha[k] * grad_final_u
    z_i = alpha[k] * grad_final_i
    z_ia = np.zeros_like(stack.item_attrs[0])
    z_iaa = np.zeros_like(stack.aesthetics[0])
    for k in range(config.layers - 1, -1, -1):
        nz_u = alpha[k] * grad_final_u + gather_rows(
            g_uiaa.left_indptr, g_uiaa.left_indices, g_uiaa.left_coef,
            z_iaa, g_uiaa.left_count)
        nz_i = alpha[k] * grad_final_i + gather_rows(
            g_ui.right_indptr, g_ui.right_indices, g_ui.right_coef,
            z_u, g_ui.right_count)
        nz_i += gather_rows(g_iia.left_indptr, g_iia.left_indices,
                            g_iia.left_coef, z_ia, g_iia.left_count)
        nz_ia = gather_rows(g_iia.right_indptr, g_iia.right_indices,
                            g_iia.right_coef, z_i, g_iia.right_count)
        nz_iaa = gather_rows(g_uiaa.right_indptr, g_uiaa.right_indices,
                             g_uiaa.right_coef, z_u, g_uiaa.right_count)
        z_u, z_i, z_ia, z_iaa = nz_u, nz_i, nz_ia, nz_iaa

    reg_mean = 0.0
    if config.l2_weight:
        c = 2.0 * config.l2_weight / n_triples
        e_u0, e_i0 = stack.users[0], stack.items[0]
        scatter_rows(z_u, users, c * e_u0[users])
        scatter_rows(z_i, pos, c * e_i0[pos])
        scatter_rows(z_i, negs, c * e_i0[negs])
        reg_mean = config.l2_weight * float(
            (e_u0[users] ** 2).sum() + (e_i0[pos] ** 2).sum()
            + (e_i0[negs] ** 2).sum()) / n_triples

    bpr_mean = float(softplus(-delta).mean())
    return EmbeddingTables(z_u, z_i, z_ia, z_iaa), bpr_mean, reg_mean


def sgd_step(tables: EmbeddingTables, grads: EmbeddingTables, lr: float) -> None:
    tables.users -= lr * grads.users
    tables.items -= lr * grads.items
    tables.item_attrs -= lr * grads.item_attrs
    tables.aesthetics -= lr * grads.aesthetics


@dataclass
class TrainResult:
    tables: EmbeddingTables
    stats: list[EpochStats]
    best_epoch: int | None = None
    best_val_recall: float | None = None


def train(split: SplitDataset, bundle: GraphBundle, config: ModelConfig, *,
          epochs: int, batch_size: int = 256, val_k: int = 50,
          patience: int | None = 5, log_path=None, checkpoint_path=None,
          checkpoint_every: int = 0, checkpoint_extra: dict | None = None,
          on_epoch=None) -> TrainResult:
    """Run shuffled mini-batch SGD epochs; single-threaded and deterministic.

    Each epoch expands every training interaction into n_negatives triples.
    When a validation split is present, Recall@val_k is tracked per epoch,
    the best-validation tables are kept (and checkpointed if a path is
    given), and training stops after `patience` epochs without improvement.
    """
    from . import evaluation  # local import; evaluation depends on model only
    from .model import save_checkpoint

    config.validate()
    rng = np.random.default_rng(config.seed)
    tables = init_tables(bundle, config, rng)

    pairs = np.asarray(split.train, dtype=np.int64).reshape(-1, 2)
    n_pairs = pairs.shape[0]
    if n_pairs == 0:
        raise DataError("empty training split")
    item_count = len(bundle.vocab_i)
    n_n = config.n_negatives

    val_by_user: dict[int, set[int]] = {}
    for u, i in split.validation:
        val_by_user.setdefault(int(u), set()).add(int(i))

    stats: list[EpochStats] = []
    last_good: EmbeddingTables | None = None
    best_tables: EmbeddingTables | None = None
    best_val = -np.inf
    best_epoch = None
    stale = 0

    def _checkpoint(path, tbl):
        save_checkpoint(path, tbl, bundle, config, extra=checkpoint_extra)

    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n_pairs)
        loss_sum = reg_sum = 0.0
        batches = 0
        for start in range(0, n_pairs, batch_size):
            sel = order[start:start + batch_size]
            users = np.repeat(pairs[sel, 0], n_n)
            pos = np.repeat(pairs[sel, 1], n_n)
            negs = _sample_negatives_block(users, item_count,
                                           split.user_positives, rng)
            try:
                stack = forward(tables, bundle, config)
                grads, bpr_mean, reg_mean = backward(users, pos, negs, stack,
                                                     bundle, config)
            except NumericError as exc:
                raise TrainDivergedError(
                    f"training diverged at epoch {epoch}: {exc}",
                    last_good, stats) from exc
            if not np.isfinite(bpr_mean):
                raise TrainDivergedError(
                    f"loss became non-finite at epoch {epoch}", last_good, stats)
            sgd_step(tables, grads, config.learning_rate)
            loss_sum += bpr_mean
            reg_sum += reg_mean
            batches += 1

        val_recall = None
        if val_by_user:
            stack = forward(tables, bundle, config)
            e_u, e_i = final_embeddings(stack, config.alpha())
            val_recall = evaluation.mean_recall_at_k(
                e_u, e_i, val_by_user, split.user_positives, val_k)

        st = EpochStats(epoch=epoch, loss=loss_sum / batches,
                        reg=reg_sum / batches, triples=n_pairs * n_n,
                        seconds=time.perf_counter() - t0, val_recall=val_recall)
        stats.append(st)
        last_good = tables.copy()
        if log_path is not None:
            _append_log_line(log_path, st, val_k)
        if on_epoch is not None:
            on_epoch(st)
        if checkpoint_every and epoch % checkpoint_every == 0 and checkpoint_path:
            _checkpoint(checkpoint_path, tables)

        if val_recall is not None:
            if val_recall > best_val + 1e-12:
                best_val = val_recall
                best_epoch = epoch
                best_tables = tables.copy()
                stale = 0
                if checkpoint_path:
                    _checkpoint(checkpoint_path, tables)
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break

    final = best_tables if best_tables is not None else tables
    if checkpoint_path:
        # authoritative write: the file always matches the returned tables
        _checkpoint(checkpoint_path, final)
    return TrainResult(tables=final, stats=stats, best_epoch=best_epoch,
                       best_val_recall=None if best_epoch is None else best_val)


def _append_log_line(path, st: EpochStats, val_k: int) -> None:
    rec = {"epoch": st.epoch, "loss": st.loss, "reg": st.reg,
           f"val_recall@{val_k}": st.val_recall, "seconds": st.seconds}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
