"""Leave-one-out top-N evaluation and a pairwise MF baseline.

Each evaluation user's held-out target item is ranked against their sampled
negatives by descending score, ties broken by ascending item id. HR@N is a
hit indicator, NDCG@N is 1/log2(rank+1) for hits (single relevant item, so
IDCG = 1).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import PairBatch, SplitDataset, sample_pairs
from .errors import ConfigError, DataError
from .model import ForwardState, score_items
from .rng import RngHub, SeededRng


@dataclass
class Metrics:
    hr: dict  # N -> hit ratio in [0, 1]
    ndcg: dict  # N -> NDCG in [0, 1]
    per_user_ranks: dict  # user -> rank of the held-out item (1-based)
    num_eval_users: int

    def as_dict(self) -> dict:
        return {
            "hr": {str(n): v for n, v in self.hr.items()},
            "ndcg": {str(n): v for n, v in self.ndcg.items()},
            "num_eval_users": self.num_eval_users,
        }


def rank_with_ties(
    test_score: float, test_id: int, neg_scores: np.ndarray, neg_ids: np.ndarray
) -> int:
    """1-based rank by descending score; equal scores order by ascending id."""
    better = int((neg_scores > test_score).sum())
    tied_before = int(((neg_scores == test_score) & (neg_ids < test_id)).sum())
    return 1 + better + tied_before


def metrics_from_ranks(ranks: dict, cutoffs) -> Metrics:
    n_users = len(ranks)
    hr, ndcg = {}, {}
    rank_arr = np.array(list(ranks.values()), dtype=np.int64)
    for n in cutoffs:
        hits = rank_arr <= n
        hr[n] = float(hits.mean()) if n_users else 0.0
        gains = np.where(hits, 1.0 / np.log2(rank_arr + 1.0), 0.0)
        ndcg[n] = float(gains.mean()) if n_users else 0.0
    return Metrics(hr=hr, ndcg=ndcg, per_user_ranks=ranks, num_eval_users=n_users)


def _rank_users(score_fn, split: SplitDataset, users, threads: int = 1) -> dict:
    def rank_one(u: int) -> tuple:
        test_item = split.test_items[u]
        negs = split.eval_negatives.get(u)
        if negs is None or len(negs) == 0:
            raise DataError(f"user {u} has no evaluation negatives")
        cand = np.concatenate([[test_item], negs])
        scores = score_fn(u, cand)
        return u, rank_with_ties(float(scores[0]), test_item, scores[1:], negs)

    if threads <= 1:
        pairs = [rank_one(u) for u in users]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(rank_one, users))
    return dict(sorted(pairs))


def evaluate(
    state: ForwardState, split: SplitDataset, cutoffs=(1, 3, 5, 7, 9, 10), threads: int = 1
) -> Metrics:
    """Score every evaluation user's candidate list and aggregate HR/NDCG."""
    if state.dropout_active:
        raise ConfigError("evaluation requires a forward pass with dropout disabled")
    users = sorted(split.test_items)
    ranks = _rank_users(lambda u, cand: score_items(state, u, cand), split, users, threads)
    return metrics_from_ranks(ranks, cutoffs)


def rank_oracle_check(
    state: ForwardState, split: SplitDataset, rng: SeededRng, sample_size: int = 50
) -> dict:
    """Compare the counting rank path against a naive full sort on a user
    sample. Returns {'checked': n, 'agreements': n, 'all_agree': bool}."""
    users = sorted(split.test_items)
    if len(users) > sample_size:
        users = sorted(rng.choice(np.array(users), size=sample_size, replace=False))
    agreements = 0
    for u in users:
        test_item = split.test_items[u]
        negs = split.eval_negatives[u]
        cand = np.concatenate([[test_item], negs])
        scores = score_items(state, u, cand)
        fast = rank_with_ties(float(scores[0]), test_item, scores[1:], negs)
        order = sorted(range(len(cand)), key=lambda t: (-scores[t], cand[t]))
        naive = order.index(0) + 1
        agreements += int(fast == naive)
    return {
        "checked": len(users),
        "agreements": agreements,
        "all_agree": agreements == len(users),
    }


@dataclass
class MFConfig:
    """Pairwise matrix-factorization baseline on the target behavior only."""

    dim: int = 32
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 256
    pairs_per_user: int = 1
    reg_weight: float = 1e-4
    seed: int = 0


def train_mf_baseline(split: SplitDataset, cfg: MFConfig, cutoffs=(1, 3, 5, 7, 9, 10)) -> Metrics:
    """BPR-trained MF with the same evaluation protocol as the main model.

    Gradients are handwritten: for margin m = x_pos - x_neg the loss
    -log(sigmoid(m)) has dL/dm = -sigmoid(-m).
    """
    train = split.train
    if sum(len(s) for s in train.target_sets()) == 0:
        raise DataError("no target-behavior interactions to train on")
    hub = RngHub(cfg.seed)
    init = hub.stream("init")
    bound = 1.0 / np.sqrt(cfg.dim)
    p = init.uniform(-bound, bound, size=(train.num_users, cfg.dim))
    q = init.uniform(-bound, bound, size=(train.num_items, cfg.dim))
    m_p, v_p = np.zeros_like(p), np.zeros_like(p)
    m_q, v_q = np.zeros_like(q), np.zeros_like(q)
    t = 0
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    target_sets = train.target_sets()
    eligible = np.array(
        [u for u in range(train.num_users) if len(target_sets[u]) > 0], dtype=np.int64
    )
    for _ in range(cfg.epochs):
        order = hub.stream("batching").permutation(len(eligible))
        shuffled = eligible[order]
        for lo in range(0, len(shuffled), cfg.batch_size):
            chunk = shuffled[lo : lo + cfg.batch_size]
            batch: PairBatch = sample_pairs(
                train, cfg.pairs_per_user, hub.stream("negatives"), users=chunk
            )
            u = batch.entries[:, 0]
            pos = batch.entries[:, 1]
            neg = batch.entries[:, 2]
            margin = np.sum(p[u] * (q[pos] - q[neg]), axis=1)
            coef = -1.0 / (1.0 + np.exp(margin))  # -sigmoid(-margin)
            g_p = np.zeros_like(p)
            g_q = np.zeros_like(q)
            np.add.at(g_p, u, coef[:, None] * (q[pos] - q[neg]))
            np.add.at(g_q, pos, coef[:, None] * p[u])
            np.add.at(g_q, neg, -coef[:, None] * p[u])
            g_p += 2.0 * cfg.reg_weight * p
            g_q += 2.0 * cfg.reg_weight * q
            t += 1
            bc1, bc2 = 1.0 - beta1**t, 1.0 - beta2**t
            m_p = beta1 * m_p + (1 - beta1) * g_p
            v_p = beta2 * v_p + (1 - beta2) * g_p * g_p
            p -= cfg.lr * (m_p / bc1) / (np.sqrt(v_p / bc2) + eps)
            m_q = beta1 * m_q + (1 - beta1) * g_q
            v_q = beta2 * v_q + (1 - beta2) * g_q * g_q
            q -= cfg.lr * (m_q / bc1) / (np.sqrt(v_q / bc2) + eps)

    users = sorted(split.test_items)
    ranks = _rank_users(lambda uu, cand: q[cand] @ p[uu], split, users)
    return metrics_from_ranks(ranks, cutoffs)


def bucket_by_train_degree(split: SplitDataset, num_buckets: int = 4) -> dict:
    """Group evaluation users into quantile buckets of train target-degree.

    Returns bucket index -> sorted user list; used by the sparsity analysis.
    """
    target_sets = split.train.target_sets()
    users = sorted(split.test_items)
    degrees = np.array([len(target_sets[u]) for u in users], dtype=np.int64)
    edges = np.quantile(degrees, np.linspace(0, 1, num_buckets + 1)[1:-1])
    buckets = {b: [] for b in range(num_buckets)}
    for u, deg in zip(users, degrees):
        b = int(np.searchsorted(edges, deg, side="right"))
        buckets[b].append(u)
    return buckets
