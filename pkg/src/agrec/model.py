"""Embedding tables, linear graph propagation and preference scoring.

Per layer, all four vertex classes advance simultaneously from the previous
layer's values (Jacobi-style): items gather from item attributes, item
attributes from items, aesthetic keywords from users, and users from both
aesthetic keywords and items. Final user/item embeddings are the
alpha-weighted sum over layers 0..K. Everything is linear; there are no
activations, attention weights, self-loops or dropout.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ColdItemError, ConfigError, DataError, NumericError
from .graphs import BipartiteGraph, GraphBundle, Vocabulary
from .kernels import gather_rows

CHECKPOINT_MAGIC = b"AGR1"


@dataclass
class ModelConfig:
    """Hyperparameters; layer_weights default to uniform 1/(K+1)."""

    dim: int = 64
    layers: int = 3
    layer_weights: tuple[float, ...] | None = None
    learning_rate: float = 1e-3
    l2_weight: float = 1e-4
    n_negatives: int = 1
    n_price_buckets: int = 10
    init_scale: float = 0.1
    seed: int = 0

    def alpha(self) -> np.ndarray:
        if self.layer_weights is None:
            return np.full(self.layers + 1, 1.0 / (self.layers + 1))
        return np.asarray(self.layer_weights, dtype=np.float64)

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        alpha = self.alpha()
        if alpha.shape[0] != self.layers + 1:
            raise ConfigError(
                f"need {self.layers + 1} layer weights, got {alpha.shape[0]}")
        if (alpha < 0).any() or abs(float(alpha.sum()) - 1.0) > 1e-9:
            raise ConfigError("layer weights must be non-negative and sum to 1")
        if self.l2_weight < 0:
            raise ConfigError("l2_weight must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.n_negatives < 1:
            raise ConfigError("n_negatives must be >= 1")
        if self.n_price_buckets < 1:
            raise ConfigError("n_price_buckets must be >= 1")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be > 0")


@dataclass
class EmbeddingTables:
    """The four trainable layer-0 tables (float64, rows x dim)."""

    users: np.ndarray
    items: np.ndarray
    item_attrs: np.ndarray
    aesthetics: np.ndarray

    def copy(self) -> "EmbeddingTables":
        return EmbeddingTables(self.users.copy(), self.items.copy(),
                               self.item_attrs.copy(), self.aesthetics.copy())

    def classes(self):
        return (("users", self.users), ("items", self.items),
                ("item_attrs", self.item_attrs), ("aesthetics", self.aesthetics))


@dataclass
class LayerStack:
    """Per-layer embeddings for every vertex class, k = 0..K."""

    users: list[np.ndarray] = field(default_factory=list)
    items: list[np.ndarray] = field(default_factory=list)
    item_attrs: list[np.ndarray] = field(default_factory=list)
    aesthetics: list[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.users) - 1


def init_tables(bundle: GraphBundle, config: ModelConfig,
                rng: np.random.Generator | None = None) -> EmbeddingTables:
    """Draw all four tables from N(0, init_scale^2), in a fixed order."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    s, d = config.init_scale, config.dim
    return EmbeddingTables(
        users=rng.normal(0.0, s, (len(bundle.vocab_u), d)),
        items=rng.normal(0.0, s, (len(bundle.vocab_i), d)),
        item_attrs=rng.normal(0.0, s, (len(bundle.vocab_ia), d)),
        aesthetics=rng.normal(0.0, s, (len(bundle.vocab_iaa), d)),
    )


def propagate_items(e_ia: np.ndarray, g_iia: BipartiteGraph) -> np.ndarray:
    """Items gather their attributes: out[i] = sum_a e_ia[a]/sqrt(deg_i*deg_a)."""
    return gather_rows(g_iia.left_indptr, g_iia.left_indices, g_iia.left_coef,
                       e_ia, g_iia.left_count)


def propagate_item_attributes(e_i: np.ndarray, g_iia: BipartiteGraph) -> np.ndarray:
    """Attributes gather their items (transpose of propagate_items)."""
    return gather_rows(g_iia.right_indptr, g_iia.right_indices, g_iia.right_coef,
                       e_i, g_iia.right_count)


def propagate_aesthetics(e_u: np.ndarray, g_uiaa: BipartiteGraph) -> np.ndarray:
    """Aesthetic keywords gather the users linked to them."""
    return gather_rows(g_uiaa.right_indptr, g_uiaa.right_indices, g_uiaa.right_coef,
                       e_u, g_uiaa.right_count)


def propagate_users(e_iaa: np.ndarray, e_i: np.ndarray,
                    g_uiaa: BipartiteGraph, g_ui: BipartiteGraph) -> np.ndarray:
    """Users gather aesthetics and items; degrees are taken per relation."""
    out = gather_rows(g_uiaa.left_indptr, g_uiaa.left_indices, g_uiaa.left_coef,
                      e_iaa, g_uiaa.left_count)
    out += gather_rows(g_ui.left_indptr, g_ui.left_indices, g_ui.left_coef,
                       e_i, g_ui.left_count)
    return out


def _check_finite(name: str, layer: int, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {name} embeddings at layer {layer}")


def forward(tables: EmbeddingTables, bundle: GraphBundle,
            config: ModelConfig) -> LayerStack:
    """Run K propagation layers; layer 0 is the tables themselves."""
    stack = LayerStack(users=[tables.users], items=[tables.items],
                       item_attrs=[tables.item_attrs], aesthetics=[tables.aesthetics])
    for k in range(config.layers):
        nxt_i = propagate_items(stack.item_attrs[k], bundle.g_iia)
        nxt_ia = propagate_item_attributes(stack.items[k], bundle.g_iia)
        nxt_iaa = propagate_aesthetics(stack.users[k], bundle.g_uiaa)
        nxt_u = propagate_users(stack.aesthetics[k], stack.items[k],
                                bundle.g_uiaa, bundle.g_ui)
        for name, arr in (("user", nxt_u), ("item", nxt_i),
                          ("item-attribute", nxt_ia), ("aesthetic", nxt_iaa)):
            _check_finite(name, k + 1, arr)
        stack.users.append(nxt_u)
        stack.items.append(nxt_i)
        stack.item_attrs.append(nxt_ia)
        stack.aesthetics.append(nxt_iaa)
    return stack


def final_embeddings(stack: LayerStack,
                     alpha: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Alpha-weighted layer combination for users and items."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] != stack.depth + 1:
        raise ConfigError(
            f"alpha has {alpha.shape[0]} weights for {stack.depth + 1} layers")
    e_u = sum(a * layer for a, layer in zip(alpha, stack.users))
    e_i = sum(a * layer for a, layer in zip(alpha, stack.items))
    return e_u, e_i


def score(user_vec: np.ndarray, item_vec: np.ndarray) -> float:
    """Preference score: inner product of final user and item embeddings."""
    return float(np.dot(user_vec, item_vec))


def cold_item_embedding(keywords: Sequence[str], vocab_ia: Vocabulary,
                        g_iia: BipartiteGraph, stack: LayerStack,
                        alpha: Sequence[float]) -> np.ndarray:
    """Embed a never-trained item purely through its attribute keywords.

    The item is treated as a fresh vertex with a zero layer-0 embedding whose
    degree is its number of known keywords; attribute degrees stay frozen at
    their trained values so scoring is independent of query order. Keywords
    absent from the trained vocabulary are dropped.
    """
    known: list[int] = []
    seen = set()
    for kw in keywords:
        if kw in seen:
            continue
        seen.add(kw)
        if kw in vocab_ia:
            known.append(vocab_ia.index_of(kw))
    if not known:
        raise ColdItemError("unscorable cold item: no keywords in trained vocabulary")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] != stack.depth + 1:
        raise ConfigError(
            f"alpha has {alpha.shape[0]} weights for {stack.depth + 1} layers")
    idx = np.asarray(known, dtype=np.int64)
    coef = 1.0 / np.sqrt(len(known) * g_iia.right_deg[idx].astype(np.float64))
    dim = stack.item_attrs[0].shape[1]
    out = np.zeros(dim, dtype=np.float64)
    for k in range(1, stack.depth + 1):
        if alpha[k] == 0.0:
            continue
        out += alpha[k] * (coef @ stack.item_attrs[k - 1][idx])
    return out


# --- checkpoint serialization -------------------------------------------------

@dataclass
class Checkpoint:
    header: dict
    tables: EmbeddingTables

    def config(self) -> ModelConfig:
        h = self.header
        return ModelConfig(dim=h["dim"], layers=h["layers"],
                           layer_weights=tuple(h["alpha"]), seed=h["seed"])


def vocab_hashes(bundle: GraphBundle) -> dict[str, str]:
    return {
        "users": bundle.vocab_u.sha256(),
        "items": bundle.vocab_i.sha256(),
        "item_attrs": bundle.vocab_ia.sha256(),
        "aesthetics": bundle.vocab_iaa.sha256(),
    }


def save_checkpoint(path, tables: EmbeddingTables, bundle: GraphBundle,
                    config: ModelConfig, extra: dict | None = None) -> None:
    """Write magic, length-prefixed JSON header, then the four tables as
    float32 little-endian row-major blocks in order users, items,
    item-attributes, aesthetics."""
    header = {
        "dim": config.dim,
        "layers": config.layers,
        "alpha": [float(a) for a in config.alpha()],
        "counts": {
            "users": tables.users.shape[0],
            "items": tables.items.shape[0],
            "item_attrs": tables.item_attrs.shape[0],
            "aesthetics": tables.aesthetics.shape[0],
        },
        "vocab_sha256": vocab_hashes(bundle),
        "seed": config.seed,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tables.classes():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        dim = header["dim"]
        arrays = []
        for cls in ("users", "items", "item_attrs", "aesthetics"):
            rows = header["counts"][cls]
            raw = fh.read(rows * dim * 4)
            if len(raw) != rows * dim * 4:
                raise DataError(f"truncated checkpoint: {cls} block")
            arr = np.frombuffer(raw, dtype="<f4").reshape(rows, dim)
            arrays.append(arr.astype(np.float64))
    return Checkpoint(header=header, tables=EmbeddingTables(*arrays))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
