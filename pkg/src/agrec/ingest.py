"""Raw data ingestion: interaction parsing, popularity filtering,
train/validation/test splitting, price bucketing and text-attribute tokens.

File formats:
  * interactions: UTF-8 TSV ``user_id<TAB>item_id``, LF endings, no header
  * items: one JSON object per line, keys item_id (required), brand, price,
    category, color, description, image_ref
  * split manifest: JSON with seed, counts and per-split interaction arrays
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

Interaction = tuple[str, str]

# Deliberately small; a stop-word file can replace it wholesale.
DEFAULT_STOP_WORDS = frozenset(
    "a an and are as at be but by for from has have in is it its of on or "
    "that the this to was were will with".split()
)


@dataclass
class ItemMetadata:
    """Structured item record from the items file; all but item_id optional."""

    item_id: str
    brand: str | None = None
    price: float | None = None
    category: str | None = None
    color: str | None = None
    description: str | None = None
    image_ref: str | None = None

    def __post_init__(self):
        if not self.item_id:
            raise DataError("item_id must be non-empty")
        if self.price is not None:
            price = float(self.price)
            if not math.isfinite(price) or price < 0:
                raise DataError(f"item {self.item_id!r}: price must be finite and >= 0")
            self.price = price


@dataclass
class PriceBuckets:
    """Equal-frequency price discretization into n_p categories.

    ``boundaries`` are ascending lower edges of buckets 1..n_p-1; ties in the
    fitted prices can collapse boundaries, in which case fewer than n_p
    distinct labels occur. Labels are always in 0..n_p-1 and monotone in price.
    """

    n_p: int
    boundaries: list[float]

    def assign(self, price: float) -> int:
        return int(np.searchsorted(self.boundaries, price, side="right"))


@dataclass
class SplitDataset:
    """Train/validation/test interaction lists plus per-user positives.

    Pairs are (user, item) in whatever key space the caller supplied (string
    IDs from ingestion, dense indices after vocabulary mapping). Every user in
    validation/test also appears in train.
    """

    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    user_positives: dict = field(default_factory=dict)
    split_seed: int = 0


def parse_interactions(lines: Iterable[str]) -> list[Interaction]:
    """Parse `user<TAB>item` lines preserving file order; blanks are skipped."""
    out: list[Interaction] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataError(f"line {lineno}: expected `user_id<TAB>item_id`, got {line!r}")
        out.append((parts[0], parts[1]))
    if not out:
        raise DataError("empty interactions input")
    return out


def read_interactions(path) -> list[Interaction]:
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh)


def parse_items(lines: Iterable[str]) -> list[ItemMetadata]:
    """Parse the one-JSON-object-per-line items file."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"items line {lineno}: invalid JSON ({exc.msg})") from None
        if "item_id" not in obj:
            raise DataError(f"items line {lineno}: missing item_id")
        try:
            out.append(ItemMetadata(
                item_id=obj["item_id"],
                brand=obj.get("brand"),
                price=obj.get("price"),
                category=obj.get("category"),
                color=obj.get("color"),
                description=obj.get("description"),
                image_ref=obj.get("image_ref"),
            ))
        except DataError as exc:
            raise DataError(f"items line {lineno}: {exc}") from None
    return out


def read_items(path) -> list[ItemMetadata]:
    with open(path, encoding="utf-8") as fh:
        return parse_items(fh)


def filter_min_popularity(interactions: Sequence[Interaction],
                          threshold: int) -> list[Interaction]:
    """Keep interactions whose item has strictly more than `threshold`
    distinct users. Single pass, not iterated to fixpoint."""
    if threshold < 0:
        raise ConfigError("popularity threshold must be >= 0")
    users_per_item: dict[str, set[str]] = {}
    for user, item in interactions:
        users_per_item.setdefault(item, set()).add(user)
    return [(u, i) for u, i in interactions if len(users_per_item[i]) > threshold]


def _split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int]:
    # Train count rounds half-up, validation floors, test takes the
    # remainder: the one policy of floor/round/ceil combinations that
    # reproduces 459,146 -> 367,317 / 45,914 / 45,915.
    n_train = int(math.floor(ratios[0] * n + 0.5))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val


def split_dataset(interactions: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> SplitDataset:
    """Seeded shuffle-split into train/validation/test.

    Users that would appear only in validation/test are pulled into train
    (they have no propagation edges otherwise), and the displaced counts are
    rebalanced by moving safely removable rows back out of train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {tuple(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be non-negative")
    n = len(interactions)
    if n < 3:
        raise ConfigError("need at least 3 interactions to split")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [interactions[j] for j in order]

    n_train, n_val = _split_sizes(n, ratios)
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]

    train_user_rows = Counter(u for u, _ in train)

    def _pull_cold_users(split_rows):
        kept, moved = [], []
        for row in split_rows:
            if train_user_rows[row[0]] == 0:
                moved.append(row)
                train_user_rows[row[0]] += 1
            else:
                kept.append(row)
        return kept, moved

    val, moved_v = _pull_cold_users(val)
    test, moved_t = _pull_cold_users(test)
    train = train + moved_v + moved_t

    # Rebalance from train (the largest split): a row may leave train only if
    # its user keeps at least one other train row.
    need_val, need_test = len(moved_v), len(moved_t)
    if need_val or need_test:
        back_val, back_test, kept_train = [], [], []
        for row in reversed(train):
            if need_val and train_user_rows[row[0]] >= 2:
                back_val.append(row)
                train_user_rows[row[0]] -= 1
                need_val -= 1
            elif need_test and train_user_rows[row[0]] >= 2:
                back_test.append(row)
                train_user_rows[row[0]] -= 1
                need_test -= 1
            else:
                kept_train.append(row)
        train = list(reversed(kept_train))
        val = val + list(reversed(back_val))
        test = test + list(reversed(back_test))

    positives: dict = {}
    for user, item in train:
        positives.setdefault(user, set()).add(item)
    return SplitDataset(train=train, validation=val, test=test,
                        user_positives=positives, split_seed=seed)


def fit_price_buckets(prices: Sequence[float], n_p: int) -> PriceBuckets:
    """Equal-frequency bucket boundaries; equal prices always share a bucket."""
    if n_p < 1:
        raise ConfigError(f"n_p must be >= 1, got {n_p}")
    if not len(prices):
        raise ConfigError("at least one price is required to fit buckets")
    values, counts = np.unique(np.asarray(prices, dtype=np.float64), return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])  # first occurrence ranks
    n = int(counts.sum())
    boundaries: list[float] = []
    for j in range(1, n_p):
        # smallest distinct value whose rank reaches j*n/n_p, compared in
        # integer arithmetic to dodge float quantile fuzz
        k = int(np.searchsorted(starts * n_p, j * n, side="left"))
        if k >= len(values):
            continue
        v = float(values[k])
        if not boundaries or v > boundaries[-1]:
            boundaries.append(v)
    return PriceBuckets(n_p=n_p, boundaries=boundaries)


def _normalize_field(value: str) -> str:
    return " ".join(value.lower().split())


def tokenize_text_attributes(meta: ItemMetadata, buckets: PriceBuckets,
                             stop_words: frozenset[str] | None = None,
                             include_description: bool = True) -> list[str]:
    """Derive namespaced keywords from structured fields and the description.

    Namespacing (`color:navy` vs `desc:navy`) keeps attributes from different
    fields distinct. Description handling: Unicode lowercase, whitespace
    split, strip non-alphanumerics, drop tokens shorter than 2 chars and
    stop words; disable wholesale with include_description=False.
    """
    stop = DEFAULT_STOP_WORDS if stop_words is None else stop_words
    keywords: list[str] = []
    if meta.brand:
        normalized = _normalize_field(meta.brand)
        if normalized:
            keywords.append(f"brand:{normalized}")
    if meta.price is not None:
        keywords.append(f"price:{buckets.assign(meta.price)}")
    for namespace, value in (("category", meta.category), ("color", meta.color)):
        if value:
            normalized = _normalize_field(value)
            if normalized:
                keywords.append(f"{namespace}:{normalized}")
    if include_description and meta.description:
        for raw in meta.description.lower().split():
            token = "".join(ch for ch in raw if ch.isalnum())
            if len(token) < 2 or token in stop:
                continue
            keywords.append(f"desc:{token}")
    return keywords


def write_manifest(path, *, seed: int, ratios: Sequence[float],
                   split: SplitDataset, config: dict | None = None,
                   extra: dict | None = None) -> None:
    """Write the split manifest (string-ID pairs) with count echo."""
    users = {u for u, _ in split.train + split.validation + split.test}
    items = {i for _, i in split.train + split.validation + split.test}
    doc = {
        "seed": seed,
        "ratios": list(ratios),
        "counts": {
            "users": len(users),
            "items": len(items),
            "interactions": len(split.train) + len(split.validation) + len(split.test),
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        "splits": {
            "train": [list(p) for p in split.train],
            "validation": [list(p) for p in split.validation],
            "test": [list(p) for p in split.test],
        },
    }
    if config is not None:
        doc["config"] = config
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("seed", "counts", "splits"):
        if key not in doc:
            raise DataError(f"manifest missing key {key!r}")
    return doc


def manifest_split(doc: dict) -> SplitDataset:
    """Rebuild a SplitDataset (string-ID pairs) from a manifest document."""
    splits = doc["splits"]
    train = [tuple(p) for p in splits["train"]]
    val = [tuple(p) for p in splits["validation"]]
    test = [tuple(p) for p in splits["test"]]
    positives: dict = {}
    for user, item in train:
        positives.setdefault(user, set()).add(item)
    return SplitDataset(train=train, validation=val, test=test,
                        user_positives=positives, split_seed=doc["seed"])
