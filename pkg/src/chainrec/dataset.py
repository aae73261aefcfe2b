"""Rating, social and tag ingestion plus fold / sparsity sampling.

All randomized helpers draw from ``numpy.random.default_rng(seed)`` (PCG64).
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

_logger = logging.getLogger(__name__)

Mode = Literal["explicit", "implicit"]
FORMATS = ("hetrec-tsv", "movielens-colons", "generic-csv")


class DatasetError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Sparse (user, item, rating) triples over fixed user/item vocabularies."""

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    mode: Mode = "explicit"
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()
    n_duplicates: int = 0

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        ratings = np.ascontiguousarray(self.ratings, dtype=np.float64)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(u) for u in range(self.num_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(j) for j in range(self.num_items)))
        self._validate()

    def _validate(self):
        if self.num_users < 1 or self.num_items < 1:
            raise DatasetError("dataset needs at least one user and one item")
        if not (len(self.users) == len(self.items) == len(self.ratings)):
            raise DatasetError("triple arrays differ in length")
        if len(self.user_ids) != self.num_users or len(self.item_ids) != self.num_items:
            raise DatasetError("vocabulary size does not match num_users/num_items")
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.num_users:
                raise DatasetError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.num_items:
                raise DatasetError("item index out of range")
            keys = self.users * self.num_items + self.items
            if len(np.unique(keys)) != len(keys):
                raise DatasetError("duplicate (user, item) pair")
            if not np.all(np.isfinite(self.ratings)):
                raise DatasetError("non-finite rating")
        if self.mode == "implicit" and np.any(self.ratings != 1.0):
            raise DatasetError("implicit datasets store every rating as 1.0")

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def n_ratings(self) -> int:
        return len(self.ratings)

    def triples(self) -> list[tuple[int, int, float]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def with_triples(self, users, items, ratings, n_duplicates: int = 0) -> RatingDataset:
        """Same vocabularies, different triples."""
        return RatingDataset(
            self.num_users, self.num_items, users, items, ratings, self.mode,
            self.user_ids, self.item_ids, n_duplicates,
        )

    def subset(self, mask_or_index) -> RatingDataset:
        return self.with_triples(
            self.users[mask_or_index], self.items[mask_or_index], self.ratings[mask_or_index]
        )

    def to_csr(self) -> sp.csr_matrix:
        """I x J rating matrix (explicit zeros are impossible: ratings are stored as given)."""
        return sp.csr_matrix(
            (self.ratings, (self.users, self.items)), shape=(self.num_users, self.num_items)
        )

    def observed_mask(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(len(self.users)), (self.users, self.items)),
            shape=(self.num_users, self.num_items),
        )

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def global_mean(self) -> float:
        return float(self.ratings.mean()) if len(self.ratings) else 0.0

    def user_index(self, user_id: str) -> int:
        return self._user_lookup()[user_id]

    def item_index(self, item_id: str) -> int:
        return self._item_lookup()[item_id]

    def _user_lookup(self) -> dict[str, int]:
        return {u: n for n, u in enumerate(self.user_ids)}

    def _item_lookup(self) -> dict[str, int]:
        return {j: n for n, j in enumerate(self.item_ids)}


@dataclass(frozen=True)
class SocialEdges:
    """Undirected user-user links; each unordered pair stored once as (low, high)."""

    edges: tuple[tuple[int, int], ...]
    num_users: int | None = None

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class TagAssignments:
    """Per-entity tag sets and optional topic vectors (rows of ``topics``)."""

    tags: tuple[frozenset, ...]
    topics: np.ndarray | None = None

    def __post_init__(self):
        if self.topics is not None:
            topics = np.asarray(self.topics, dtype=np.float64)
            if topics.ndim != 2 or topics.shape[0] != len(self.tags):
                raise DatasetError("topic matrix must have one row per entity")
            if np.any(topics < 0) or not np.all(np.isfinite(topics)):
                raise DatasetError("topic vectors must be finite and nonnegative")
            object.__setattr__(self, "topics", topics)


@dataclass(frozen=True)
class FoldSplit:
    train: RatingDataset
    test: RatingDataset
    fold_index: int


# --------------------------------------------------------------------------
# parsing

_GENERIC_SPLIT = re.compile(r"[,\t ]+")


def _split_line(line: str, fmt: str) -> list[str]:
    if fmt == "hetrec-tsv":
        return line.split("\t")
    if fmt == "movielens-colons":
        return line.split("::")
    return _GENERIC_SPLIT.split(line.strip())


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_ratings(
    path,
    format: str = "generic-csv",
    mode: Mode = "explicit",
    user_ids: Sequence[str] | None = None,
    item_ids: Sequence[str] | None = None,
    strict_vocab: bool = False,
) -> RatingDataset:
    """Parse a rating file into a :class:`RatingDataset`.

    Dense indices follow first-seen order.  Passing ``user_ids``/``item_ids``
    fixes the vocabulary up front (used to read a test file against a training
    vocabulary); ids outside it are an error when ``strict_vocab`` is set and
    otherwise skipped with a logged count.

    Duplicate (user, item) records keep the last occurrence.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown rating format {format!r}; expected one of {FORMATS}")
    if mode not in ("explicit", "implicit"):
        raise DatasetError(f"unknown mode {mode!r}")
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    fixed_vocab = user_ids is not None or item_ids is not None
    umap: dict[str, int] = {u: n for n, u in enumerate(user_ids or ())}
    imap: dict[str, int] = {j: n for n, j in enumerate(item_ids or ())}
    grow_users = user_ids is None
    grow_items = item_ids is None

    records: dict[tuple[int, int], float] = {}
    n_dup = 0
    n_skipped = 0
    need = 2 if mode == "implicit" else 3
    seen_content = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = _split_line(line, format)
        first = not seen_content
        seen_content = True
        if first and format == "hetrec-tsv":
            continue
        if first and format == "generic-csv" and len(fields) >= need:
            # header row: non-numeric rating column (explicit) or literal column names
            if (mode == "explicit" and not _is_number(fields[2])) or fields[:2] in (
                ["user", "item"], ["userID", "itemID"], ["user_id", "item_id"]
            ):
                continue
        if len(fields) < need:
            raise DatasetError(f"{path}:{lineno}: expected at least {need} fields, got {len(fields)}")
        uid, iid = fields[0].strip(), fields[1].strip()
        if not uid or not iid:
            raise DatasetError(f"{path}:{lineno}: empty user or item id")
        if mode == "explicit":
            try:
                rating = float(fields[2])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: rating {fields[2]!r} is not numeric") from None
            if not np.isfinite(rating):
                raise DatasetError(f"{path}:{lineno}: non-finite rating")
        else:
            rating = 1.0

        if uid not in umap:
            if not grow_users:
                if strict_vocab:
                    raise DatasetError(f"{path}:{lineno}: unknown user id {uid!r}")
                n_skipped += 1
                continue
            umap[uid] = len(umap)
        if iid not in imap:
            if not grow_items:
                if strict_vocab:
                    raise DatasetError(f"{path}:{lineno}: unknown item id {iid!r}")
                n_skipped += 1
                continue
            imap[iid] = len(imap)
        key = (umap[uid], imap[iid])
        if key in records:
            n_dup += 1
            del records[key]  # re-insert so order reflects the surviving record
        records[key] = rating

    if not seen_content:
        raise DatasetError(f"{path}: empty rating file")
    if not records and not fixed_vocab:
        raise DatasetError(f"{path}: no rating records")
    if n_dup:
        _logger.warning("%s: %d duplicate (user, item) records, last occurrence kept", path, n_dup)
    if n_skipped:
        _logger.warning("%s: %d records with out-of-vocabulary ids skipped", path, n_skipped)

    keys = np.array(list(records.keys()), dtype=np.int64).reshape(-1, 2)
    vals = np.fromiter(records.values(), dtype=np.float64, count=len(records))
    return RatingDataset(
        num_users=len(umap),
        num_items=len(imap),
        users=keys[:, 0],
        items=keys[:, 1],
        ratings=vals,
        mode=mode,
        user_ids=tuple(umap),
        item_ids=tuple(imap),
        n_duplicates=n_dup,
    )


def save_ratings(ds: RatingDataset, path) -> None:
    """Write ``user,item,rating`` generic-csv lines using external ids."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, j, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist()):
            fh.write(f"{ds.user_ids[u]},{ds.item_ids[j]},{r!r}\n")


def load_social(path, user_ids: Sequence[str] | None = None) -> SocialEdges:
    """Read whitespace/comma/tab separated user-id pairs as undirected edges.

    Without a vocabulary, ids are indexed in first-seen order.  A hetrec-style
    header (first line with non-numeric ``userID`` fields) is skipped.
    """
    path = Path(path)
    vocab = {u: n for n, u in enumerate(user_ids)} if user_ids is not None else {}
    grow = user_ids is None
    pairs: dict[tuple[int, int], None] = {}
    first = True
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = _GENERIC_SPLIT.split(raw.strip())
        if first:
            first = False
            if fields[0].lower() in ("userid", "user", "user_id"):
                continue
        if len(fields) < 2:
            raise DatasetError(f"{path}:{lineno}: expected two user ids")
        ids = []
        for uid in fields[:2]:
            if uid not in vocab:
                if not grow:
                    raise DatasetError(f"{path}:{lineno}: unknown user id {uid!r}")
                vocab[uid] = len(vocab)
            ids.append(vocab[uid])
        a, b = ids
        if a == b:
            continue
        pairs[(min(a, b), max(a, b))] = None
    n = len(user_ids) if user_ids is not None else len(vocab)
    return SocialEdges(tuple(pairs), n)


def load_tags(path, entity_ids: Sequence[str], entity_column: int = 0, tag_column: int = 1) -> TagAssignments:
    """Read (entity, tag) pairs; other columns are ignored.

    For hetrec ``user_taggedartists.dat`` use ``entity_column=1, tag_column=2``.
    Entities outside ``entity_ids`` are skipped.
    """
    path = Path(path)
    index = {e: n for n, e in enumerate(entity_ids)}
    tags: list[set] = [set() for _ in entity_ids]
    need = max(entity_column, tag_column) + 1
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = _GENERIC_SPLIT.split(raw.strip())
        if len(fields) < need:
            raise DatasetError(f"{path}:{lineno}: expected at least {need} fields")
        ent = fields[entity_column]
        if lineno == 1 and ent not in index and not ent.isdigit():
            continue
        if ent in index:
            tags[index[ent]].add(fields[tag_column])
    return TagAssignments(tuple(frozenset(t) for t in tags))


# --------------------------------------------------------------------------
# sampling and folds

def sample_ratings(ds: RatingDataset, remove_fraction: float, seed: int) -> RatingDataset:
    """Drop ``round(L * remove_fraction)`` triples uniformly at random."""
    if not 0.0 <= remove_fraction < 1.0:
        raise DatasetError("remove_fraction must lie in [0, 1)")
    n = len(ds)
    n_remove = int(np.floor(n * remove_fraction + 0.5))
    if n_remove == 0:
        return ds
    rng = np.random.default_rng(seed)
    drop = rng.choice(n, size=n_remove, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return ds.subset(keep)


def sample_users(ds: RatingDataset, max_ratings_per_user: int) -> RatingDataset:
    """Remove every triple of users holding more than ``max_ratings_per_user`` ratings."""
    if max_ratings_per_user < 1:
        raise DatasetError("max_ratings_per_user must be >= 1")
    heavy = ds.user_counts() > max_ratings_per_user
    keep = ~heavy[ds.users]
    if keep.all():
        return ds
    return ds.subset(keep)


def kfold(ds: RatingDataset, k: int, seed: int) -> list[FoldSplit]:
    if k < 2:
        raise DatasetError("k must be >= 2")
    if k > len(ds):
        raise DatasetError(f"cannot split {len(ds)} ratings into {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    folds = []
    for f, group in enumerate(np.array_split(perm, k)):
        test_mask = np.zeros(len(ds), dtype=bool)
        test_mask[group] = True
        folds.append(FoldSplit(ds.subset(~test_mask), ds.subset(test_mask), f))
    return folds


def from_dense(R: np.ndarray, mask: np.ndarray | None = None, mode: Mode = "explicit") -> RatingDataset:
    """Build a dataset from a dense matrix; ``mask`` selects observed cells (default: nonzero)."""
    R = np.asarray(R, dtype=np.float64)
    if mask is None:
        mask = R != 0
    users, items = np.nonzero(mask)
    ratings = R[users, items] if mode == "explicit" else np.ones(len(users))
    return RatingDataset(R.shape[0], R.shape[1], users, items, ratings, mode)
