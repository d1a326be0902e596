"""Multi-behavior interaction data: loading, splitting, sampling, synthesis.

Datasets are sparse ternary relations: a set of (user, item, behavior)
triples over I users, J items and K behavior types, one of which is the
target behavior being predicted. Triples keep their file order because the
leave-one-out split defines "last interaction" positionally.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, RangeError, SamplingError
from .rng import SeededRng


@dataclass
class InteractionTensor:
    """Deduplicated (user, item, behavior) triples in first-occurrence order."""

    num_users: int
    num_items: int
    num_behaviors: int
    target_behavior: int
    triples: np.ndarray  # (nnz, 3) int64 columns [user, item, behavior]
    _target_sets: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if not 0 <= self.target_behavior < self.num_behaviors:
            raise DataError(
                f"target behavior {self.target_behavior} out of range "
                f"for K={self.num_behaviors}"
            )
        if self.triples.size:
            if self.triples.min() < 0:
                raise DataError("negative index in triples")
            if self.triples[:, 0].max() >= self.num_users:
                raise DataError("user index out of range")
            if self.triples[:, 1].max() >= self.num_items:
                raise DataError("item index out of range")
            if self.triples[:, 2].max() >= self.num_behaviors:
                raise DataError("behavior index out of range")
            if len(np.unique(self.triples, axis=0)) != len(self.triples):
                raise DataError("duplicate triples")

    @property
    def nnz(self) -> int:
        return len(self.triples)

    def behavior_counts(self) -> np.ndarray:
        return np.bincount(self.triples[:, 2], minlength=self.num_behaviors)

    def behavior_edges(self, k: int) -> np.ndarray:
        """(n_k, 2) [user, item] rows of behavior k, in stored order."""
        return self.triples[self.triples[:, 2] == k][:, :2]

    def target_sets(self) -> list:
        """Per-user sorted array of target-behavior item ids (cached)."""
        if self._target_sets is None:
            sets = [[] for _ in range(self.num_users)]
            for u, v in self.behavior_edges(self.target_behavior):
                sets[u].append(v)
            self._target_sets = [np.array(sorted(s), dtype=np.int64) for s in sets]
        return self._target_sets

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for u, v, k in self.triples:
                fh.write(f"{u}\t{v}\t{k}\n")


@dataclass
class DatasetSchema:
    """Column contract for TSV ingestion: 0-based `user<TAB>item<TAB>behavior`."""

    num_behaviors: int
    target_behavior: int
    num_users: int | None = None  # optional lower bounds on inferred sizes
    num_items: int | None = None


def _dedupe_keep_order(triples: np.ndarray) -> np.ndarray:
    """Drop duplicate rows, keeping each first occurrence in place."""
    if len(triples) == 0:
        return triples.reshape(0, 3)
    _, first = np.unique(triples, axis=0, return_index=True)
    return triples[np.sort(first)]


def load_interactions(path, schema: DatasetSchema) -> InteractionTensor:
    """Parse a TSV interaction file into a deduplicated tensor."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                u, v, k = (int(p) for p in parts)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
            if u < 0 or v < 0 or k < 0:
                raise ParseError(f"{path}:{lineno}: negative id")
            if k >= schema.num_behaviors:
                raise RangeError(
                    f"{path}:{lineno}: behavior {k} >= declared K={schema.num_behaviors}"
                )
            rows.append((u, v, k))
    triples = _dedupe_keep_order(np.array(rows, dtype=np.int64).reshape(-1, 3))
    num_users = int(triples[:, 0].max()) + 1 if len(triples) else 0
    num_items = int(triples[:, 1].max()) + 1 if len(triples) else 0
    if schema.num_users is not None:
        num_users = max(num_users, schema.num_users)
    if schema.num_items is not None:
        num_items = max(num_items, schema.num_items)
    return InteractionTensor(
        num_users=num_users,
        num_items=num_items,
        num_behaviors=schema.num_behaviors,
        target_behavior=schema.target_behavior,
        triples=triples,
    )


@dataclass
class SplitDataset:
    """Leave-one-out split: train tensor plus per-user held-out item and
    the 99 (configurable) sampled evaluation negatives."""

    train: InteractionTensor
    test_items: dict  # user -> held-out target item
    eval_negatives: dict  # user -> int64 array of sampled negative item ids


def leave_one_out_split(
    tensor: InteractionTensor, rng: SeededRng, num_negatives: int = 99
) -> SplitDataset:
    """Hold out each user's last-occurring target triple (file order).

    Users with fewer than two target interactions keep everything in train.
    Evaluation negatives are sampled uniformly without replacement from the
    items outside the user's full target set (so the held-out item can never
    appear among its own negatives).
    """
    if tensor.nnz == 0:
        raise DataError("cannot split an empty dataset")
    is_target = tensor.triples[:, 2] == tensor.target_behavior
    last_pos = {}  # user -> row index of last target triple
    counts = np.zeros(tensor.num_users, dtype=np.int64)
    for idx in np.nonzero(is_target)[0]:
        u = int(tensor.triples[idx, 0])
        counts[u] += 1
        last_pos[u] = idx

    drop = np.zeros(tensor.nnz, dtype=bool)
    test_items = {}
    for u, idx in last_pos.items():
        if counts[u] >= 2:
            drop[idx] = True
            test_items[u] = int(tensor.triples[idx, 1])

    train = InteractionTensor(
        num_users=tensor.num_users,
        num_items=tensor.num_items,
        num_behaviors=tensor.num_behaviors,
        target_behavior=tensor.target_behavior,
        triples=tensor.triples[~drop],
    )

    full_target = tensor.target_sets()
    all_items = np.arange(tensor.num_items, dtype=np.int64)
    eval_negatives = {}
    for u in sorted(test_items):
        eligible = np.setdiff1d(all_items, full_target[u], assume_unique=True)
        if len(eligible) < num_negatives:
            raise DataError(
                f"user {u}: only {len(eligible)} eligible negatives, "
                f"need {num_negatives}"
            )
        eval_negatives[u] = np.sort(rng.choice(eligible, size=num_negatives, replace=False))
    return SplitDataset(train=train, test_items=test_items, eval_negatives=eval_negatives)


def save_split(split: SplitDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    split.train.save_tsv(directory / "train.tsv")
    sidecar = {
        "target_behavior": split.train.target_behavior,
        "num_users": split.train.num_users,
        "num_items": split.train.num_items,
        "num_behaviors": split.train.num_behaviors,
        "test_items": {str(u): int(v) for u, v in split.test_items.items()},
        "negatives": {str(u): [int(x) for x in neg] for u, neg in split.eval_negatives.items()},
    }
    with open(directory / "split.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)


def load_split(directory) -> SplitDataset:
    directory = Path(directory)
    with open(directory / "split.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    schema = DatasetSchema(
        num_behaviors=sidecar["num_behaviors"],
        target_behavior=sidecar["target_behavior"],
        num_users=sidecar["num_users"],
        num_items=sidecar["num_items"],
    )
    train = load_interactions(directory / "train.tsv", schema)
    return SplitDataset(
        train=train,
        test_items={int(u): int(v) for u, v in sidecar["test_items"].items()},
        eval_negatives={
            int(u): np.array(neg, dtype=np.int64) for u, neg in sidecar["negatives"].items()
        },
    )


@dataclass
class PairBatch:
    """Sampled (user, positive item, negative item) training triples."""

    entries: np.ndarray  # (n, 3) int64 [user, pos, neg]
    pairs_per_user: int

    @property
    def users(self) -> np.ndarray:
        return self.entries[:, 0]


def sample_pairs(
    train: InteractionTensor, pairs_per_user: int, rng: SeededRng, users=None
) -> PairBatch:
    """Draw S (positive, negative) pairs per user from the train target sets.

    Positives are uniform with replacement over the user's target items;
    negatives are uniform rejection draws against the target set. Users with
    an empty target set are skipped.
    """
    if pairs_per_user < 1:
        raise ConfigError(f"pairs_per_user must be >= 1, got {pairs_per_user}")
    target = train.target_sets()
    if users is None:
        users = range(train.num_users)
    entries = []
    num_items = train.num_items
    for u in users:
        pos_set = target[u]
        if len(pos_set) == 0:
            continue
        if len(pos_set) >= num_items:
            raise SamplingError(f"user {u} interacted with every item; no negatives exist")
        pos = rng.choice(pos_set, size=pairs_per_user, replace=True)
        neg = np.empty(pairs_per_user, dtype=np.int64)
        filled = 0
        while filled < pairs_per_user:
            cand = rng.integers(0, num_items, size=pairs_per_user - filled)
            ok = cand[~np.isin(cand, pos_set)]
            neg[filled : filled + len(ok)] = ok
            filled += len(ok)
        for s in range(pairs_per_user):
            entries.append((u, pos[s], neg[s]))
    return PairBatch(
        entries=np.array(entries, dtype=np.int64).reshape(-1, 3),
        pairs_per_user=pairs_per_user,
    )


@dataclass
class SynthConfig:
    """Planted-intent generator settings.

    Behaviors form a funnel: funnel_probs[k] is the base rate at which an
    engagement reaches level k, so rates must be non-increasing (every
    purchase is also a view). Matching user/item intents keep the full base
    rate; mismatched pairs are damped by mismatch_factor.
    """

    num_users: int = 2000
    num_items: int = 1000
    num_behaviors: int = 3
    intents: int = 4
    funnel_probs: tuple = (0.06, 0.02, 0.008)
    mismatch_factor: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.intents < 1:
            raise ConfigError(f"intents must be >= 1, got {self.intents}")
        if len(self.funnel_probs) != self.num_behaviors:
            raise ConfigError(
                f"funnel_probs has {len(self.funnel_probs)} entries for "
                f"K={self.num_behaviors} behaviors"
            )
        probs = list(self.funnel_probs) + [self.mismatch_factor]
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if any(
            self.funnel_probs[k] < self.funnel_probs[k + 1]
            for k in range(self.num_behaviors - 1)
        ):
            raise ConfigError("funnel_probs must be non-increasing")
        if self.num_users < 1 or self.num_items < 1:
            raise ConfigError("num_users and num_items must be positive")


@dataclass
class SynthDataset:
    tensor: InteractionTensor
    user_intents: np.ndarray
    item_intents: np.ndarray


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """Generate a planted-intent multi-behavior dataset.

    Each user and item is assigned one latent intent; a single engagement
    draw per (user, item) pair is thresholded against the damped funnel
    rates, producing nested behavior levels. The target behavior is the
    last (rarest) one. Ground-truth intents are returned for diagnostics.
    """
    cfg.validate()
    rng = SeededRng(cfg.seed, "synth")
    user_intents = rng.integers(0, cfg.intents, size=cfg.num_users)
    item_intents = rng.integers(0, cfg.intents, size=cfg.num_items)
    factor = np.where(
        user_intents[:, None] == item_intents[None, :], 1.0, cfg.mismatch_factor
    )
    engagement = rng.random((cfg.num_users, cfg.num_items))
    chunks = []
    for k in range(cfg.num_behaviors):
        us, vs = np.nonzero(engagement < cfg.funnel_probs[k] * factor)
        ks = np.full(len(us), k, dtype=np.int64)
        chunks.append(np.stack([us.astype(np.int64), vs.astype(np.int64), ks], axis=1))
    triples = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3), np.int64)
    triples = triples[rng.permutation(len(triples))]
    tensor = InteractionTensor(
        num_users=cfg.num_users,
        num_items=cfg.num_items,
        num_behaviors=cfg.num_behaviors,
        target_behavior=cfg.num_behaviors - 1,
        triples=triples,
    )
    return SynthDataset(tensor=tensor, user_intents=user_intents, item_intents=item_intents)
