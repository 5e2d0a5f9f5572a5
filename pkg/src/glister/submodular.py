"""Constrained set-function maximization plus the closed-form objectives.

Greedy engines break ties by lowest index everywhere so that different
algorithms (and parallel scoring) select identically.  Oracles are immutable
and safe for concurrent marginal evaluation.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .numerics import SeededRng, pairwise_sq_dists

__all__ = [
    "SetFunctionOracle",
    "MatroidQuota",
    "from_callable",
    "naive_greedy",
    "lazy_greedy",
    "stochastic_greedy",
    "randomized_greedy",
    "exhaustive_max",
    "facility_location",
    "cross_facility_location",
    "nb_feature_function",
    "lr_submodular",
    "kmeans",
]


class SetFunctionOracle:
    """Evaluable set function over ground set {0..n-1}.

    Subclasses implement `value`; `marginal` defaults to a value difference
    and `marginals` to a loop, both overridable with vectorized forms.
    """

    def __init__(self, n: int, monotone: bool, labels: np.ndarray | None = None):
        self.n = n
        self.monotone = monotone
        # class id per ground-set element, used by quota-constrained greedy
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)

    def value(self, subset) -> float:
        raise NotImplementedError

    def marginal(self, e: int, subset) -> float:
        s = list(subset)
        return self.value(s + [e]) - self.value(s)

    def marginals(self, candidates, subset) -> np.ndarray:
        base = self.value(list(subset))
        s = list(subset)
        return np.array([self.value(s + [e]) - base for e in candidates], dtype=np.float64)


class _CallableOracle(SetFunctionOracle):
    def __init__(self, n, fn, monotone, labels=None):
        super().__init__(n, monotone, labels)
        self._fn = fn

    def value(self, subset) -> float:
        return float(self._fn(frozenset(subset)))


def from_callable(n: int, fn, monotone: bool, labels=None) -> SetFunctionOracle:
    return _CallableOracle(n, fn, monotone, labels)


@dataclass(frozen=True)
class MatroidQuota:
    """Per-class selection budget; quotas sum to k exactly."""

    per_class: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.per_class.values())

    @staticmethod
    def from_proportions(reference_labels: np.ndarray, num_classes: int, k: int) -> "MatroidQuota":
        """quota_y = round(k * count_y / total), corrected by largest
        remainder (ties to the lowest class id) so the sum is exactly k."""
        counts = np.bincount(np.asarray(reference_labels, dtype=np.int64), minlength=num_classes)
        total = counts.sum()
        if total == 0:
            raise ValueError("empty reference set")
        exact = k * counts / total
        quota = np.floor(exact + 0.5).astype(np.int64)
        diff = k - int(quota.sum())
        remainders = exact - quota
        while diff != 0:
            if diff > 0:
                order = sorted(range(num_classes), key=lambda c: (-remainders[c], c))
                quota[order[0]] += 1
                remainders[order[0]] -= 1.0
                diff -= 1
            else:
                order = sorted(
                    (c for c in range(num_classes) if quota[c] > 0),
                    key=lambda c: (remainders[c], c),
                )
                quota[order[0]] -= 1
                remainders[order[0]] += 1.0
                diff += 1
        return MatroidQuota({c: int(quota[c]) for c in range(num_classes) if quota[c] > 0})


def _quota_remaining(quota: MatroidQuota | None, labels: np.ndarray | None):
    if quota is None:
        return None
    if labels is None:
        raise ValueError("quota constraint needs element labels on the oracle")
    return dict(quota.per_class)


def _feasible_mask(candidates: np.ndarray, labels, remaining) -> np.ndarray:
    if remaining is None:
        return np.ones(len(candidates), dtype=bool)
    allowed = {c for c, q in remaining.items() if q > 0}
    return np.array([int(labels[e]) in allowed for e in candidates], dtype=bool)


def _consume_quota(remaining, labels, e: int):
    if remaining is not None:
        remaining[int(labels[e])] -= 1


def naive_greedy(f: SetFunctionOracle, k: int, quota: MatroidQuota | None = None) -> list[int]:
    """k rounds of best-marginal-gain selection; ties to the lowest index.
    Returns elements in selection order."""
    if k > f.n:
        raise ValueError("budget exceeds ground set")
    if quota is not None and quota.total != k:
        raise ValueError("quota must sum to k")
    remaining = _quota_remaining(quota, f.labels)
    selected: list[int] = []
    pool = np.arange(f.n)
    for _ in range(k):
        mask = _feasible_mask(pool, f.labels, remaining)
        feas = pool[mask]
        if len(feas) == 0:
            raise ValueError("infeasible quota: class exhausted")
        gains = f.marginals(feas, selected)
        best = feas[int(np.lexsort((feas, -gains))[0])]
        selected.append(int(best))
        _consume_quota(remaining, f.labels, best)
        pool = pool[pool != best]
    return selected


class _SelectionList(list):
    """List subclass carrying the lazy-greedy evaluation counter."""

    evaluations: int = 0


def lazy_greedy(f: SetFunctionOracle, k: int, quota: MatroidQuota | None = None) -> list[int]:
    """Accelerated greedy with stale upper bounds; selects identically to
    naive_greedy on submodular objectives.  The returned list carries the
    number of oracle evaluations in its `.evaluations` attribute."""
    if k > f.n:
        raise ValueError("budget exceeds ground set")
    if quota is not None and quota.total != k:
        raise ValueError("quota must sum to k")
    remaining = _quota_remaining(quota, f.labels)
    selected: list[int] = []
    evals = 0
    gains = f.marginals(np.arange(f.n), [])
    evals += f.n
    # heap of (-gain, index, |S| at evaluation time)
    heap = [(-float(g), int(e), 0) for e, g in enumerate(gains)]
    heapq.heapify(heap)
    while len(selected) < k:
        if not heap:
            raise ValueError("infeasible quota: class exhausted")
        neg_gain, e, at = heapq.heappop(heap)
        if remaining is not None and remaining.get(int(f.labels[e]), 0) <= 0:
            continue  # quota only shrinks, so the element can never return
        if at == len(selected):
            selected.append(e)
            _consume_quota(remaining, f.labels, e)
        else:
            g = f.marginal(e, selected)
            evals += 1
            heapq.heappush(heap, (-float(g), e, len(selected)))
    result = _SelectionList(selected)
    result.evaluations = evals
    return result


def stochastic_greedy(
    f: SetFunctionOracle,
    k: int,
    epsilon: float,
    rng: SeededRng,
    quota: MatroidQuota | None = None,
) -> list[int]:
    """Each step scores a uniform sample of ceil((n/k) ln(1/eps)) feasible
    candidates and adds the best; deterministic given the seed."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if k > f.n:
        raise ValueError("budget exceeds ground set")
    if quota is not None and quota.total != k:
        raise ValueError("quota must sum to k")
    remaining = _quota_remaining(quota, f.labels)
    sample_size = int(math.ceil((f.n / max(k, 1)) * math.log(1.0 / epsilon)))
    selected: list[int] = []
    pool = np.arange(f.n)
    for _ in range(k):
        mask = _feasible_mask(pool, f.labels, remaining)
        feas = pool[mask]
        if len(feas) == 0:
            raise ValueError("infeasible quota: class exhausted")
        s = min(len(feas), max(sample_size, 1))
        sample = feas[np.sort(rng.choice_no_replace(len(feas), s))]
        gains = f.marginals(sample, selected)
        best = sample[int(np.lexsort((sample, -gains))[0])]
        selected.append(int(best))
        _consume_quota(remaining, f.labels, best)
        pool = pool[pool != best]
    return selected


def randomized_greedy(f: SetFunctionOracle, k: int, rng: SeededRng) -> list[int]:
    """Non-monotone-safe greedy: each step picks uniformly among the top-k
    feasible elements by marginal gain.  Always returns exactly k elements,
    even when late marginals are negative."""
    if k > f.n:
        raise ValueError("budget exceeds ground set")
    selected: list[int] = []
    pool = np.arange(f.n)
    for _ in range(k):
        gains = f.marginals(pool, selected)
        order = np.lexsort((pool, -gains))
        top = pool[order[: min(k, len(pool))]]
        pick = int(top[rng.randint(len(top))])
        selected.append(pick)
        pool = pool[pool != pick]
    return selected


def exhaustive_max(
    f: SetFunctionOracle, k: int, quota: MatroidQuota | None = None
) -> tuple[tuple[int, ...], float]:
    """True optimum by enumeration; refuses instances beyond 2e6 subsets."""
    if quota is None:
        total = math.comb(f.n, k)
        if total > 2_000_000:
            raise ValueError("combinatorial budget exceeded")
        best_set, best_val = None, -math.inf
        for subset in itertools.combinations(range(f.n), k):
            v = f.value(subset)
            if v > best_val:
                best_set, best_val = subset, v
        return best_set, best_val
    if quota.total != k:
        raise ValueError("quota must sum to k")
    if f.labels is None:
        raise ValueError("quota constraint needs element labels on the oracle")
    groups = []
    total = 1
    for c, q in sorted(quota.per_class.items()):
        members = [int(i) for i in np.flatnonzero(f.labels == c)]
        if len(members) < q:
            raise ValueError("infeasible quota: class exhausted")
        total *= math.comb(len(members), q)
        groups.append(itertools.combinations(members, q))
        if total > 2_000_000:
            raise ValueError("combinatorial budget exceeded")
    best_set, best_val = None, -math.inf
    for combo in itertools.product(*groups):
        subset = tuple(sorted(itertools.chain.from_iterable(combo)))
        v = f.value(subset)
        if v > best_val:
            best_set, best_val = subset, v
    return best_set, best_val


class _FacilityLocation(SetFunctionOracle):
    """Coverage of `cover` rows by selected ground rows under the similarity
    w(i, j) = d_max - ||x_i - x_j||^2; uncovered rows contribute 0 (the max
    over an empty set is defined as 0)."""

    def __init__(self, sim: np.ndarray, cover_labels, ground_labels, per_class: bool):
        super().__init__(sim.shape[0], monotone=True, labels=ground_labels)
        self._sim = sim  # (n_ground, n_cover)
        self._cover_labels = None if cover_labels is None else np.asarray(cover_labels)
        self._per_class = per_class

    def _masked(self, rows) -> np.ndarray:
        """Similarity rows with cross-class entries suppressed to -inf."""
        block = self._sim[np.asarray(rows, dtype=np.int64)]
        if not self._per_class:
            return block
        ground = self.labels[np.asarray(rows, dtype=np.int64)]
        mask = ground[:, None] == self._cover_labels[None, :]
        return np.where(mask, block, -np.inf)

    def _coverage(self, subset) -> np.ndarray:
        if len(subset) == 0:
            return np.zeros(self._sim.shape[1])
        best = self._masked(subset).max(axis=0)
        return np.maximum(best, 0.0) if self._per_class else best

    def value(self, subset) -> float:
        return float(self._coverage(subset).sum())

    def marginal(self, e: int, subset) -> float:
        cov = self._coverage(subset)
        cand = self._masked([e])[0]
        if self._per_class:
            cand = np.maximum(cand, 0.0)
        return float(np.maximum(cand - cov, 0.0).sum())

    def marginals(self, candidates, subset) -> np.ndarray:
        cov = self._coverage(subset)
        block = self._masked(candidates)
        if self._per_class:
            block = np.maximum(block, 0.0)
        return np.maximum(block - cov[None, :], 0.0).sum(axis=1)


def facility_location(
    features: np.ndarray, labels: np.ndarray | None = None, per_class: bool = False
) -> SetFunctionOracle:
    """Facility location over the rows of `features`; with per_class=True the
    coverage is restricted to rows of the matching label."""
    features = np.asarray(features, dtype=np.float64)
    dists = pairwise_sq_dists(features)
    d_max = float(dists.max())
    sim = d_max - dists
    if per_class and labels is None:
        raise ValueError("per_class facility location needs labels")
    return _FacilityLocation(
        sim,
        labels if per_class else None,
        None if labels is None else np.asarray(labels, dtype=np.int64),
        per_class,
    )


def cross_facility_location(
    ground_features: np.ndarray,
    ground_labels: np.ndarray | None,
    cover_features: np.ndarray,
    cover_labels: np.ndarray | None,
    per_class: bool = True,
) -> SetFunctionOracle:
    """Facility location where selected ground rows cover a separate set of
    rows (used by the nearest-neighbor objective with a reference set)."""
    g = np.asarray(ground_features, dtype=np.float64)
    c = np.asarray(cover_features, dtype=np.float64)
    g2 = np.einsum("ij,ij->i", g, g)
    c2 = np.einsum("ij,ij->i", c, c)
    dists = np.clip(g2[:, None] + c2[None, :] - 2.0 * (g @ c.T), 0.0, None)
    d_max = float(dists.max())
    sim = d_max - dists
    return _FacilityLocation(
        sim,
        None if cover_labels is None else np.asarray(cover_labels, dtype=np.int64),
        None if ground_labels is None else np.asarray(ground_labels, dtype=np.int64),
        per_class,
    )


class _NbFeature(SetFunctionOracle):
    """Feature-based concave-over-modular objective: sum over (feature,
    value, class) cells of the validation count times log of the selected
    count.  An empty cell contributes weight * log(eps_smooth)."""

    EPS_SMOOTH = 1e-2

    def __init__(self, train_codes: np.ndarray, train_labels: np.ndarray, weights: dict):
        super().__init__(train_codes.shape[0], monotone=True,
                         labels=train_labels)
        # cell key per (row, feature): feature-major code combining value & class
        self._codes = train_codes
        self._weights = weights

    def value(self, subset) -> float:
        subset = list(subset)
        total = 0.0
        counts: dict[int, int] = {}
        if subset:
            cells, freq = np.unique(self._codes[subset].ravel(), return_counts=True)
            counts = dict(zip(cells.tolist(), freq.tolist()))
        for cell, w in self._weights.items():
            m = counts.get(cell, 0)
            total += w * (math.log(m) if m > 0 else math.log(self.EPS_SMOOTH))
        return total

    def marginals(self, candidates, subset) -> np.ndarray:
        subset = list(subset)
        counts: dict[int, int] = {}
        if subset:
            cells, freq = np.unique(self._codes[subset].ravel(), return_counts=True)
            counts = dict(zip(cells.tolist(), freq.tolist()))
        out = np.zeros(len(candidates))
        for ci, e in enumerate(candidates):
            gain = 0.0
            for cell in self._codes[e]:
                w = self._weights.get(int(cell))
                if w is None:
                    continue
                m = counts.get(int(cell), 0)
                if m == 0:
                    gain += w * (0.0 - math.log(self.EPS_SMOOTH))
                else:
                    gain += w * (math.log(m + 1) - math.log(m))
            out[ci] = gain
        return out

    def marginal(self, e: int, subset) -> float:
        return float(self.marginals([int(e)], subset)[0])


def nb_feature_function(train: Dataset, val: Dataset) -> SetFunctionOracle:
    """Naive-Bayes-style feature coverage of the validation cell counts by
    the selected training rows.  Features must already be discretized (see
    `data.discretize_features`)."""
    if val.n == 0:
        raise ValueError("empty validation set")
    t_vals = train.features.astype(np.int64)
    v_vals = val.features.astype(np.int64)
    n_vals = int(max(t_vals.max(initial=0), v_vals.max(initial=0))) + 1
    n_classes = max(train.num_classes, val.num_classes)

    def encode(vals: np.ndarray, labels: np.ndarray) -> np.ndarray:
        d = vals.shape[1]
        feat_ids = np.arange(d)[None, :]
        return (feat_ids * n_vals + vals) * n_classes + labels[:, None]

    train_codes = encode(t_vals, train.labels)
    val_codes = encode(v_vals, val.labels)
    cells, freq = np.unique(val_codes.ravel(), return_counts=True)
    weights = dict(zip(cells.tolist(), freq.astype(np.float64).tolist()))
    return _NbFeature(train_codes, train.labels, weights)


def kmeans(points: np.ndarray, k: int, rng: SeededRng, iters: int = 25):
    """Seeded k-means with k-means++ init; returns (centroids, assignment)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n points")
    centers = [points[rng.randint(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.randint(n)])
            continue
        target = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), target))
        centers.append(points[min(idx, n - 1)])
    centroids = np.array(centers)
    assign = np.zeros(n, dtype=np.int64)
    for it in range(iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if it > 0 and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids, assign


class _ModularMinusCut(SetFunctionOracle):
    """f(S) = sum_{i in S} modular_i - sum_{i,j in S} cut_ij with cut >= 0;
    non-monotone submodular."""

    def __init__(self, modular: np.ndarray, cut: np.ndarray, labels=None):
        super().__init__(len(modular), monotone=False, labels=labels)
        self.modular = modular
        self.cut = cut

    def value(self, subset) -> float:
        s = np.asarray(list(subset), dtype=np.int64)
        if s.size == 0:
            return 0.0
        return float(self.modular[s].sum() - self.cut[np.ix_(s, s)].sum())

    def marginals(self, candidates, subset) -> np.ndarray:
        cand = np.asarray(list(candidates), dtype=np.int64)
        s = np.asarray(list(subset), dtype=np.int64)
        gains = self.modular[cand] - np.diag(self.cut)[cand]
        if s.size:
            gains = gains - self.cut[np.ix_(cand, s)].sum(axis=1) - self.cut[np.ix_(s, cand)].sum(axis=0)
        return gains

    def marginal(self, e: int, subset) -> float:
        return float(self.marginals([int(e)], subset)[0])


def lr_submodular(
    train: Dataset,
    val: Dataset,
    m_clusters: int,
    seed: int = 0,
    targets: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
) -> SetFunctionOracle:
    """Linear-regression selection objective: a signed modular term plus a
    negative graph cut, with the inverse Gram matrix approximated from
    mass-weighted k-means centroids (ridge 1e-6 I if singular).

    Class labels double as regression targets unless explicit real targets
    are given; binary labels map to -1/+1.
    """
    if m_clusters < 1:
        raise ValueError("need at least one cluster")

    def default_targets(ds: Dataset) -> np.ndarray:
        if ds.num_classes == 2:
            return 2.0 * ds.labels.astype(np.float64) - 1.0
        return ds.labels.astype(np.float64)

    y_t = default_targets(train) if targets is None else np.asarray(targets, dtype=np.float64)
    y_v = default_targets(val) if val_targets is None else np.asarray(val_targets, dtype=np.float64)
    rng = SeededRng(seed)
    centroids, assign = kmeans(train.features, m_clusters, rng)
    mass = np.bincount(assign, minlength=m_clusters).astype(np.float64) / train.n
    gram = sum(mass[c] * np.outer(centroids[c], centroids[c]) for c in range(m_clusters))
    try:
        d_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        d_inv = np.linalg.inv(gram + 1e-6 * np.eye(gram.shape[0]))
    xi_yi = train.features * y_t[:, None]  # rows x_i^t y_i^t
    # modular term: sum_j 2 (y_j x_j^T D)(x_i y_i)
    modular = 2.0 * (xi_yi @ d_inv @ (val.features * y_v[:, None]).sum(axis=0))
    z = (val.features @ d_inv @ xi_yi.T)  # (M, n): column i is x_k^T D x_i y_i
    s_mat = z.T @ z
    s_min = float(s_mat.min())
    cut = s_mat - s_min  # shift to nonnegative
    return _ModularMinusCut(modular, cut, labels=train.labels)
