"""Content catalog, user request process and the per-user datasets it feeds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class ContentCatalog:
    """Fixed catalog of ``num_genres * per_genre`` items.

    Item ``i`` belongs to genre ``i // per_genre``. ``genre_rank[g]`` lists the
    item IDs of genre ``g`` from most to least popular; ``global_rank`` is the
    catalog-wide popularity order.
    """

    num_genres: int
    per_genre: int
    features: np.ndarray
    genre_rank: np.ndarray
    global_rank: np.ndarray
    most_similar: np.ndarray

    @property
    def total(self) -> int:
        return self.num_genres * self.per_genre

    def genre_of(self, item: int) -> int:
        return int(item) // self.per_genre

    def genre_items(self, genre: int) -> np.ndarray:
        start = genre * self.per_genre
        return np.arange(start, start + self.per_genre)

    def most_popular(self, genre: int) -> int:
        return int(self.genre_rank[genre, 0])


def cosine_similarity(f1, f2) -> float:
    a = np.asarray(f1, dtype=float)
    b = np.asarray(f2, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _most_similar_table(features: np.ndarray, per_genre: int) -> np.ndarray:
    # argmax over in-genre items excluding self; np.argmax keeps the lowest ID on ties
    total = features.shape[0]
    out = np.empty(total, dtype=np.int64)
    for start in range(0, total, per_genre):
        block = features[start:start + per_genre]
        sims = block @ block.T
        np.fill_diagonal(sims, -np.inf)
        if per_genre == 1:
            out[start] = start
            continue
        out[start:start + per_genre] = start + np.argmax(sims, axis=1)
    return out


def build_catalog(num_genres: int, per_genre: int, feature_dim: int = 16,
                  seed: int = 0) -> ContentCatalog:
    if num_genres < 1 or per_genre < 1 or feature_dim < 1:
        raise ValueError(
            f"catalog dimensions must be positive, got G={num_genres}, "
            f"per_genre={per_genre}, F={feature_dim}")
    rng = np.random.default_rng(seed)
    total = num_genres * per_genre
    feats = rng.standard_normal((total, feature_dim))
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    # a zero draw has probability zero, but keep the unit-norm contract regardless
    norms[norms == 0.0] = 1.0
    feats = feats / norms
    genre_rank = np.stack([g * per_genre + rng.permutation(per_genre)
                           for g in range(num_genres)])
    # interleave genres rank by rank, genres visited in a seeded order
    genre_order = rng.permutation(num_genres)
    global_rank = genre_rank[genre_order].T.reshape(-1)
    return ContentCatalog(
        num_genres=num_genres,
        per_genre=per_genre,
        features=feats,
        genre_rank=genre_rank,
        global_rank=global_rank,
        most_similar=_most_similar_table(feats, per_genre),
    )


def sample_genre_preferences(concentration: float, num_genres: int,
                             rng: np.random.Generator | int | None = None) -> np.ndarray:
    if concentration <= 0:
        raise ValueError(f"Dirichlet concentration must be > 0, got {concentration}")
    rng = np.random.default_rng(rng)
    prefs = rng.dirichlet(np.full(num_genres, float(concentration)))
    return prefs / prefs.sum()


@dataclass
class ProcessedSample:
    """One sliding-window sample: previous item (one-hot) -> next item."""

    prev_item: int
    label: int
    num_items: int

    @property
    def feature(self) -> np.ndarray:
        x = np.zeros(self.num_items)
        x[self.prev_item] = 1.0
        return x


@dataclass
class UserState:
    user_id: int
    bs_id: int
    activity: float
    genre_prefs: np.ndarray
    similarity_prob: float
    current_genre: Optional[int] = None
    last_request: Optional[int] = None
    raw_dataset: list[tuple[int, int]] = field(default_factory=list)

    @property
    def raw_items(self) -> list[int]:
        return [item for _, item in self.raw_dataset]


def _other_genre(prefs: np.ndarray, current: int, rng: np.random.Generator) -> int:
    weights = np.array(prefs, dtype=float)
    weights[current] = 0.0
    total = weights.sum()
    if total <= 0.0:
        # every other genre has zero preference mass; fall back to uniform
        weights = np.ones_like(weights)
        weights[current] = 0.0
        total = weights.sum()
    return int(rng.choice(len(weights), p=weights / total))


def draw_request(user: UserState, catalog: ContentCatalog,
                 rng: np.random.Generator) -> int:
    """Draw the next request of an active user and update its request state."""
    if user.last_request is None:
        g = int(rng.choice(catalog.num_genres, p=user.genre_prefs))
        item = catalog.most_popular(g)
    elif rng.random() < user.similarity_prob or catalog.num_genres == 1:
        g = catalog.genre_of(user.last_request)
        if catalog.per_genre == 1:
            item = user.last_request
        else:
            item = int(catalog.most_similar[user.last_request])
    else:
        g = _other_genre(user.genre_prefs, catalog.genre_of(user.last_request), rng)
        item = catalog.most_popular(g)
    user.current_genre = g
    user.last_request = item
    return item


def next_request(user: UserState, catalog: ContentCatalog,
                 rng: np.random.Generator) -> Optional[int]:
    """One slot of the request process; ``None`` when the user is inactive."""
    if rng.random() >= user.activity:
        return None
    return draw_request(user, catalog, rng)


def update_raw_dataset(user: UserState, request: Optional[int], slot: int) -> UserState:
    if request is not None:
        user.raw_dataset.append((int(slot), int(request)))
    return user


def warm_up(user: UserState, catalog: ContentCatalog, rng: np.random.Generator,
            num_requests: int = 5) -> UserState:
    """Seed the initial historical dataset with ``num_requests`` requests."""
    for i in range(num_requests):
        update_raw_dataset(user, draw_request(user, catalog, rng), slot=i - num_requests)
    return user


def build_processed_dataset(user: UserState | Iterable[int],
                            num_items: Optional[int] = None) -> list[ProcessedSample]:
    if isinstance(user, UserState):
        items = user.raw_items
    else:
        items = list(user)
    if num_items is None:
        num_items = max(items) + 1 if items else 0
    return [ProcessedSample(a, b, num_items) for a, b in zip(items[:-1], items[1:])]


def samples_to_arrays(samples: list[ProcessedSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.fromiter((s.prev_item for s in samples), dtype=np.int64, count=len(samples))
    y = np.fromiter((s.label for s in samples), dtype=np.int64, count=len(samples))
    return x, y


def export_trace(rows: Iterable[tuple[int, int, Optional[int]]], path) -> None:
    """Write (slot, user, item) rows; inactive slots are written as item -1."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "user", "item_id"])
        for slot, uid, item in rows:
            w.writerow([slot, uid, -1 if item is None else item])
