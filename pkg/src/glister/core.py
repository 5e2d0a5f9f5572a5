"""Validation-gain subset selection and the online training loop.

The selection objective scores a candidate training point by how much one
gradient step on it would raise the validation log-likelihood.  Writing
``theta^S = theta + eta * sum_{j in S} grad LL_T(theta, j)`` for the
one-step lookahead on the last layer, the gain of adding e to S is
linearized as ``eta * grad LL_T(theta, e) . grad LL_V(theta^S)``.  The exact
(non-linearized) gain is kept alongside as the fidelity oracle, and the
loss-specific closed-form proxies are exposed as evaluable set functions for
the submodularity checks.

Sign convention: log-likelihoods are negative losses, so per-element rows
here store ``-grad Loss`` and the lookahead adds them (gradient ascent on
the log-likelihood equals descent on the loss).
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .models import (
    LossKind,
    ModelParams,
    ModelSpec,
    accuracy,
    flatten_grads,
    forward,
    grad_full,
    init_params,
    last_layer_grad_sum,
    last_layer_per_sample_grads,
    loss_value,
    output_width,
    sgd_epoch,
)
from .numerics import SeededRng, log_sum_exp_rows, pairwise_sq_dists
from .submodular import SetFunctionOracle, _ModularMinusCut, facility_location

__all__ = [
    "GlisterConfig",
    "GainState",
    "RunTrace",
    "EpochRecord",
    "make_gain_state",
    "taylor_gain",
    "exact_objective",
    "exact_gain",
    "taylor_proxy",
    "greedy_dss",
    "glister_online_train",
    "init_model_params",
    "monitor_theorem2",
    "monitor_theorem3",
    "subset_digest",
    "stratified_random_subset",
]

REGULARIZERS = ("none", "facility_location", "random", "diversity")
GREEDY_VARIANTS = ("naive", "lazy", "stochastic", "randomized")

# dedicated sub-stream indices so selection randomness never perturbs the
# SGD shuffle stream (epoch t shuffles with split(t))
_INIT_STREAM = 1 << 32
_SELECT_STREAM = (1 << 32) + 1


@dataclass(frozen=True)
class GlisterConfig:
    """Knobs for GreedyDSS and the online loop.

    Exactly one of `k` / `budget_frac` fixes the budget.  `refreshes` (or
    `r_frac`, default 0.03) sets how many times the validation gradient is
    recomputed exactly; between refreshes stale scores pick k/r elements per
    round.  `eta` defaults to the optimizer learning rate.
    """

    k: int | None = None
    budget_frac: float | None = None
    select_every: int = 20
    refreshes: int | None = None
    r_frac: float | None = None
    eta: float | None = None
    lr: float = 0.05
    batch_size: int = 32
    regularizer: str = "none"
    lam: float = 0.0
    greedy: str = "naive"
    epsilon: float = 0.01
    loss: LossKind = LossKind.CROSS_ENTROPY
    seed: int = 0
    select_at_start: bool = True

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.greedy not in GREEDY_VARIANTS:
            raise ValueError(f"unknown greedy variant {self.greedy!r}")
        if self.select_every < 1:
            raise ValueError("select_every must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    def resolve_k(self, n: int) -> int:
        if (self.k is None) == (self.budget_frac is None):
            raise ValueError("set exactly one of k / budget_frac")
        k = self.k if self.k is not None else int(round(self.budget_frac * n))
        if not 1 <= k <= n:
            raise ValueError(f"budget {k} out of range for n={n}")
        return k

    def resolve_r(self, k: int) -> int:
        if self.refreshes is not None:
            r = self.refreshes
        else:
            frac = 0.03 if self.r_frac is None else self.r_frac
            r = int(math.ceil(frac * k))
        r = max(r, 1)
        if r > k:
            raise ValueError("refreshes cannot exceed the budget")
        return r


def _ll_grad_rows(params: ModelParams, x, y, kind: LossKind) -> np.ndarray:
    """Per-sample last-layer log-likelihood gradients (negated loss grads)."""
    return -last_layer_per_sample_grads(params, x, y, kind)


def _val_ll_and_grad(params: ModelParams, val: Dataset, kind: LossKind):
    ll = -loss_value(params, val.features, val.labels, kind)
    grad = -last_layer_grad_sum(params, val.features, val.labels, kind)
    return ll, grad


@dataclass
class GainState:
    """Cached state for the linearized validation gain.

    `refresh` recomputes both the per-element training gradients and the
    validation gradient exactly at the current lookahead parameters; within
    a refresh both tables are frozen, and folding elements into the lookahead
    declares them stale again.
    """

    theta_base: np.ndarray
    theta_lookahead: np.ndarray
    cand_features: np.ndarray
    cand_labels: np.ndarray
    kind: LossKind
    eta: float
    params_template: ModelParams
    per_element_grads: np.ndarray | None = None  # (n_cand, p_last) log-likelihood rows
    val_grad_at_lookahead: np.ndarray | None = None
    val_ll_at_lookahead: float = math.nan
    refresh_count: int = 0
    stale: bool = True
    selected: list[int] = field(default_factory=list)

    def lookahead_params(self) -> ModelParams:
        return self.params_template.with_last_layer_vector(self.theta_lookahead)

    def refresh(self, val: Dataset) -> None:
        """Exact recomputation of the candidate gradient table and the
        validation log-likelihood/gradient at the current lookahead."""
        look = self.lookahead_params()
        self.per_element_grads = _ll_grad_rows(
            look, self.cand_features, self.cand_labels, self.kind
        )
        ll, grad = _val_ll_and_grad(look, val, self.kind)
        self.val_ll_at_lookahead = ll
        self.val_grad_at_lookahead = grad
        self.refresh_count += 1
        self.stale = False

    def add(self, positions) -> None:
        """Fold candidate gradients into the lookahead; scores go stale."""
        positions = list(int(p) for p in positions)
        if positions:
            self.theta_lookahead = (
                self.theta_lookahead
                + self.eta * self.per_element_grads[positions].sum(axis=0)
            )
            self.selected.extend(positions)
            self.stale = True


def make_gain_state(
    params: ModelParams, train: Dataset, candidates, kind: LossKind, eta: float
) -> GainState:
    cand = np.asarray(candidates, dtype=np.int64)
    theta = params.last_layer_vector()
    state = GainState(
        theta_base=theta,
        theta_lookahead=theta.copy(),
        cand_features=train.features[cand],
        cand_labels=train.labels[cand],
        kind=kind,
        eta=eta,
        params_template=params,
    )
    # gradient table at the base parameters so elements can be folded before
    # the first refresh; each refresh recomputes it at the current lookahead
    state.per_element_grads = _ll_grad_rows(
        params, state.cand_features, state.cand_labels, kind
    )
    return state


def taylor_gain(state: GainState, e: int) -> float:
    """Linearized marginal gain of candidate position e given the state."""
    if state.val_grad_at_lookahead is None:
        raise ValueError("state has never been refreshed")
    return float(state.eta * (state.per_element_grads[e] @ state.val_grad_at_lookahead))


def _taylor_gains(state: GainState, positions: np.ndarray) -> np.ndarray:
    rows = state.per_element_grads[positions]
    v = state.val_grad_at_lookahead
    threads = int(os.environ.get("GLISTER_THREADS", "1") or "1")
    if threads > 1 and len(positions) >= 4096:
        chunks = np.array_split(np.arange(len(positions)), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: rows[c] @ v, chunks))
        return state.eta * np.concatenate(parts)
    return state.eta * (rows @ v)


def exact_objective(
    params: ModelParams, train: Dataset, val: Dataset, kind: LossKind, subset, eta: float
) -> float:
    """Validation log-likelihood after one summed lookahead step on `subset`
    (no linearization)."""
    subset = np.asarray(list(subset), dtype=np.int64)
    theta = params.last_layer_vector()
    if subset.size:
        rows = _ll_grad_rows(params, train.features[subset], train.labels[subset], kind)
        theta = theta + eta * rows.sum(axis=0)
    look = params.with_last_layer_vector(theta)
    return -loss_value(look, val.features, val.labels, kind)


def exact_gain(
    params: ModelParams,
    train: Dataset,
    val: Dataset,
    kind: LossKind,
    subset,
    e: int,
    eta: float,
) -> float:
    """Exact marginal gain of adding e to subset; the fidelity oracle for
    `taylor_gain`."""
    s = list(subset)
    return exact_objective(params, train, val, kind, s + [int(e)], eta) - exact_objective(
        params, train, val, kind, s, eta
    )


# ---------------------------------------------------------------------------
# Loss-specific closed-form proxies (evaluable set functions)
# ---------------------------------------------------------------------------


def _augmented_last_inputs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Penultimate activations with a constant 1 column (the bias input)."""
    h = x
    for li, (w, b) in enumerate(params.layers[:-1]):
        z = h @ w + b
        h = np.maximum(z, 0.0) if params.activation == "relu" else z
    return np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)


class _ConcaveOverModularProxy(SetFunctionOracle):
    """sum_i softcap(C_i + sum_{j in S} g_ij) style proxies with nonnegative
    g, vectorized over candidates."""

    def __init__(self, g: np.ndarray, term_fn, labels=None, monotone=True):
        super().__init__(g.shape[1], monotone=monotone, labels=labels)
        self._g = g  # (m_val, n_ground), nonnegative
        self._term = term_fn  # maps modular sums (m,...) -> per-i terms

    def _sums(self, subset) -> np.ndarray:
        s = np.asarray(list(subset), dtype=np.int64)
        if s.size == 0:
            return np.zeros(self._g.shape[0])
        return self._g[:, s].sum(axis=1)

    def value(self, subset) -> float:
        return float(self._term(self._sums(subset)).sum())

    def marginals(self, candidates, subset) -> np.ndarray:
        cand = np.asarray(list(candidates), dtype=np.int64)
        su = self._sums(subset)
        base = self._term(su).sum()
        vals = self._term(su[:, None] + self._g[:, cand]).sum(axis=0)
        return vals - base

    def marginal(self, e: int, subset) -> float:
        return float(self.marginals([int(e)], subset)[0])


class _CrossEntropyProxy(SetFunctionOracle):
    """Modular bonus minus a per-validation-point log-sum-exp of shifted
    modular sums; monotone and beta-weakly submodular."""

    def __init__(self, g1: np.ndarray, g2: np.ndarray, log_c: np.ndarray, alpha: float, labels=None):
        super().__init__(g1.shape[1], monotone=True, labels=labels)
        self._g1 = g1  # (m, n, C) shifted >= 1
        self._g2 = g2  # (m, n) modular weights >= 0
        self._log_c = log_c  # (m, C)
        self._alpha = alpha

    def value(self, subset) -> float:
        s = np.asarray(list(subset), dtype=np.int64)
        if s.size == 0:
            inner = self._log_c
            mod = 0.0
        else:
            inner = self._log_c - self._alpha * self._g1[:, s, :].sum(axis=1)
            mod = self._alpha * self._g2[:, s].sum()
        return float(mod - log_sum_exp_rows(inner).sum())


def taylor_proxy(
    params: ModelParams,
    train: Dataset,
    val: Dataset,
    kind: LossKind,
    eta: float,
    k: int,
) -> SetFunctionOracle:
    """Closed-form proxy set function of the one-step validation gain for a
    fixed budget k, built on the last-layer parameters.

    Logistic, hinge and perceptron produce monotone submodular oracles;
    squared loss a non-monotone one; cross-entropy a monotone weakly
    submodular one.
    """
    g_train = last_layer_per_sample_grads(params, train.features, train.labels, kind)
    xv = _augmented_last_inputs(params, val.features)
    zv = forward(params, val.features)
    if kind == LossKind.CROSS_ENTROPY:
        # per-sample logit grads of the training points
        shift = forward(params, train.features)
        shift = shift - shift.max(axis=1, keepdims=True)
        p = np.exp(shift)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(train.n), train.labels] -= 1.0
        xt = _augmented_last_inputs(params, train.features)
        kernel = xv @ xt.T  # (m, n): augmented inner products
        g = kernel[:, :, None] * p[None, :, :]  # g[i, j, c]
        g_min = float(g.min())
        g1 = g - g_min + 1.0
        g2 = g.max() - g[np.arange(val.n)[:, None], np.arange(train.n)[None, :], val.labels[:, None]]
        log_c = zv + k * (g_min - 1.0)
        return _CrossEntropyProxy(g1, g2, log_c, eta, labels=train.labels)

    s_val = 2.0 * val.labels.astype(np.float64) - 1.0
    if kind == LossKind.SQUARED:
        g_val = last_layer_per_sample_grads(params, val.features, val.labels, kind)
        modular = eta * (g_train @ g_val.sum(axis=0))
        b = xv @ g_train.T  # (m, n): x_i . grad_j
        s_mat = b.T @ b
        cut = (eta**2) * (s_mat - float(s_mat.min()))
        return _ModularMinusCut(modular, cut, labels=train.labels)

    # margin losses share g_ij = -s_i x_i . gradLoss_j
    g = -(s_val[:, None] * (xv @ g_train.T))  # (m, n)
    g_min = float(g.min())
    gp = g - g_min
    f_val = zv[:, 0]
    if kind == LossKind.LOGISTIC:
        log_c = -s_val * f_val - eta * k * g_min  # log C_i
        l_max = float(np.logaddexp(0.0, log_c).max())

        def term(sums):
            shape = [len(log_c)] + [1] * (np.ndim(sums) - 1)
            return l_max - np.logaddexp(0.0, log_c.reshape(shape) - eta * sums)

        return _ConcaveOverModularProxy(gp, term, labels=train.labels)
    if kind in (LossKind.HINGE, LossKind.PERCEPTRON):
        c = (s_val * f_val - 1.0) if kind == LossKind.HINGE else s_val * f_val
        c_shift = c + eta * k * g_min

        def term(sums):
            shape = [len(c_shift)] + [1] * (np.ndim(sums) - 1)
            return np.minimum(0.0, c_shift.reshape(shape) + eta * sums)

        return _ConcaveOverModularProxy(gp, term, labels=train.labels)
    raise ValueError(f"unknown loss kind {kind}")


# ---------------------------------------------------------------------------
# GreedyDSS
# ---------------------------------------------------------------------------


def _regularizer_marginals(reg, lam, rem_positions, selected_positions):
    if reg is None:
        return 0.0
    kind, payload = reg
    if kind == "facility_location":
        return lam * payload.marginals(rem_positions, selected_positions)
    if kind == "diversity":
        if len(selected_positions) == 0:
            return 0.0
        return lam * payload[np.ix_(rem_positions, selected_positions)].sum(axis=1)
    raise AssertionError(kind)


def greedy_dss(
    train: Dataset,
    val: Dataset,
    params: ModelParams,
    cfg: GlisterConfig,
    candidates=None,
    rng: SeededRng | None = None,
    k: int | None = None,
) -> list[int]:
    """Regularized r-round greedy selection of k training indices.

    Each round refreshes the validation gradient exactly at the current
    lookahead, scores every remaining candidate by the linearized gain plus
    lambda times the regularizer marginal, takes the top k/r (remainder in
    the final round), and folds the chosen gradients into the lookahead.
    Deterministic given the config seed; returns indices in selection order.
    """
    cand = np.arange(train.n) if candidates is None else np.asarray(candidates, dtype=np.int64)
    n_cand = len(cand)
    k_total = cfg.resolve_k(n_cand) if k is None else k
    if not 1 <= k_total <= n_cand:
        raise ValueError(f"budget {k_total} out of range for {n_cand} candidates")
    rng = SeededRng(cfg.seed).split(_SELECT_STREAM) if rng is None else rng
    eta = cfg.lr if cfg.eta is None else cfg.eta

    k_gain = k_total
    k_rand = 0
    if cfg.regularizer == "random":
        # mixing mode: lam is the share picked by gain, rest uniform random
        if not 0.0 <= cfg.lam <= 1.0:
            raise ValueError("random regularizer needs lambda in [0, 1]")
        k_gain = int(round(cfg.lam * k_total))
        k_rand = k_total - k_gain

    reg = None
    if cfg.regularizer == "facility_location":
        oracle = facility_location(train.features[cand], train.labels[cand], per_class=True)
        reg = ("facility_location", oracle)
    elif cfg.regularizer == "diversity":
        dists = np.sqrt(pairwise_sq_dists(train.features[cand]))
        reg = ("diversity", dists)

    state = make_gain_state(params, train, cand, cfg.loss, eta)
    order: list[int] = []
    remaining = np.arange(n_cand)

    if k_gain > 0:
        r = cfg.resolve_r(k_total)
        base = k_gain // r
        if base == 0:
            raise ValueError("r too large for k")
        counts = [base] * (r - 1) + [k_gain - base * (r - 1)]
        for count in counts:
            state.refresh(val)
            pool = remaining
            if cfg.greedy == "stochastic":
                per_step = int(math.ceil((n_cand / k_total) * math.log(1.0 / cfg.epsilon)))
                s = min(len(remaining), max(count * per_step, count))
                pool = remaining[np.sort(rng.choice_no_replace(len(remaining), s))]
            scores = _taylor_gains(state, pool) + _regularizer_marginals(
                reg, cfg.lam, pool, order
            )
            if cfg.greedy == "randomized":
                picked = []
                live = pool.copy()
                live_scores = np.asarray(scores, dtype=np.float64).copy()
                for _ in range(count):
                    top = np.lexsort((live, -live_scores))[: min(k_total, len(live))]
                    sel = int(rng.randint(len(top)))
                    pos = int(top[sel])
                    picked.append(int(live[pos]))
                    keep = np.ones(len(live), dtype=bool)
                    keep[pos] = False
                    live = live[keep]
                    live_scores = live_scores[keep]
                picked = np.array(picked, dtype=np.int64)
            else:
                ranked = np.lexsort((pool, -np.asarray(scores, dtype=np.float64)))
                picked = pool[ranked[:count]]
            state.add(picked)
            order.extend(int(p) for p in picked)
            mask = np.ones(len(remaining), dtype=bool)
            mask[np.searchsorted(remaining, np.sort(picked))] = False
            remaining = remaining[mask]
    if k_rand > 0:
        extra = remaining[np.sort(rng.choice_no_replace(len(remaining), k_rand))]
        order.extend(int(p) for p in extra)
    return [int(cand[p]) for p in order]


# ---------------------------------------------------------------------------
# Online training loop and monitors
# ---------------------------------------------------------------------------


def subset_digest(indices) -> str:
    """sha256 of the sorted index list (hex)."""
    payload = ",".join(str(int(i)) for i in sorted(indices))
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class EpochRecord:
    epoch: int
    wall_s: float
    sel_s: float
    train_loss: float
    full_train_loss: float
    val_loss: float
    test_acc: float
    subset_digest: str
    dot_vt: float | None = None
    cos_theta: float | None = None
    grad_norm_t: float | None = None
    lr_bound: float | None = None
    grad_norm_v: float | None = None  # derived field, not a CSV column


@dataclass
class RunTrace:
    records: list[EpochRecord] = field(default_factory=list)
    lr: float = math.nan  # carried for the monitors

    def selection_records(self) -> list[EpochRecord]:
        return [r for r in self.records if r.dot_vt is not None]


def stratified_random_subset(labels: np.ndarray, num_classes: int, k: int, rng: SeededRng) -> list[int]:
    """Class-stratified uniform subset with largest-remainder quotas."""
    from .submodular import MatroidQuota

    quota = MatroidQuota.from_proportions(labels, num_classes, k)
    out: list[int] = []
    for c, q in sorted(quota.per_class.items()):
        rows = np.flatnonzero(labels == c)
        if len(rows) < q:
            raise ValueError(f"class {c} has too few rows for its quota")
        out.extend(int(rows[i]) for i in np.sort(rng.choice_no_replace(len(rows), q)))
    return sorted(out)


def init_model_params(train: Dataset, model_spec: ModelSpec, cfg: GlisterConfig) -> ModelParams:
    """Seeded initial parameters shared by every training path for a config."""
    dims = model_spec.layer_dims(train.d, output_width(cfg.loss, train.num_classes))
    return init_params(dims, "relu", SeededRng(cfg.seed).split(_INIT_STREAM))


def _monitor_quantities(params, train, val, subset, kind):
    g_t = flatten_grads(grad_full(params, train.features[subset], train.labels[subset], kind))
    g_v = flatten_grads(grad_full(params, val.features, val.labels, kind))
    nt = float(np.linalg.norm(g_t))
    nv = float(np.linalg.norm(g_v))
    dot = float(g_v @ g_t)
    cos = dot / (nt * nv) if nt > 0 and nv > 0 else 0.0
    return dot, cos, nt, nv, g_v


def glister_online_train(
    train: Dataset,
    val: Dataset,
    test: Dataset,
    model_spec: ModelSpec,
    cfg: GlisterConfig,
    epochs: int,
) -> tuple[ModelParams, list[int], RunTrace]:
    """Select-every-L training: epoch t reselects the subset when
    t mod L == 0 (including t = 0 unless disabled), then runs one epoch of
    mini-batch SGD on it.  Wall clock in the trace includes selection time.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    k = cfg.resolve_k(train.n)
    root = SeededRng(cfg.seed)
    params = init_model_params(train, model_spec, cfg)
    subset: list[int] = []
    trace = RunTrace(lr=cfg.lr)
    start = time.perf_counter()
    # running estimates for the step-size bound of the descent condition
    lhat = None
    sigma_t_hat = 0.0
    prev_theta = None
    prev_gv = None
    for t in range(epochs):
        sel_s = 0.0
        monitor = None
        do_select = (t % cfg.select_every == 0) and (cfg.select_at_start or t > 0)
        if t == 0 and not do_select:
            subset = stratified_random_subset(
                train.labels, train.num_classes, k, root.split(_SELECT_STREAM)
            )
        if do_select or (t == 0 and not subset):
            t0 = time.perf_counter()
            subset = sorted(
                greedy_dss(train, val, params, cfg, rng=root.split(_SELECT_STREAM + t), k=k)
            )
            sel_s = time.perf_counter() - t0
            dot, cos, nt, nv, g_v = _monitor_quantities(params, train, val, subset, cfg.loss)
            sigma_t_hat = max(sigma_t_hat, nt)
            theta_flat = np.concatenate([w.ravel() for w, _ in params.layers])
            if prev_theta is not None:
                dtheta = float(np.linalg.norm(theta_flat - prev_theta))
                if dtheta > 0:
                    ratio = float(np.linalg.norm(g_v - prev_gv)) / dtheta
                    lhat = ratio if lhat is None else max(lhat, ratio)
            prev_theta = theta_flat
            prev_gv = g_v
            if lhat and sigma_t_hat > 0:
                bound = 2.0 * nv * cos / (lhat * sigma_t_hat)
            else:
                bound = math.inf
            monitor = (dot, cos, nt, bound, nv)
        params = sgd_epoch(
            params, train, subset, cfg.lr, cfg.batch_size, root.split(t), cfg.loss
        )
        rec = EpochRecord(
            epoch=t,
            wall_s=time.perf_counter() - start,
            sel_s=sel_s,
            train_loss=loss_value(params, train.features[subset], train.labels[subset], cfg.loss),
            full_train_loss=loss_value(params, train.features, train.labels, cfg.loss),
            val_loss=loss_value(params, val.features, val.labels, cfg.loss),
            test_acc=accuracy(params, test),
            subset_digest=subset_digest(subset),
        )
        if monitor is not None:
            rec.dot_vt, rec.cos_theta, rec.grad_norm_t, rec.lr_bound, rec.grad_norm_v = monitor
        trace.records.append(rec)
    return params, subset, trace


def monitor_theorem2(trace: RunTrace, tol: float = 1e-7) -> dict:
    """Check the descent conditions at every selection epoch and flag the
    epochs where both held yet the validation loss rose."""
    if not trace.selection_records():
        raise ValueError("trace has no selection records")
    by_epoch = {r.epoch: r for r in trace.records}
    rows = []
    violations = 0
    for rec in trace.selection_records():
        cond_dot = rec.dot_vt >= 0.0
        cond_lr = trace.lr <= rec.lr_bound
        nxt = by_epoch.get(rec.epoch + 1)
        decreased = None
        violated = False
        if nxt is not None:
            decreased = nxt.val_loss <= rec.val_loss + tol
            violated = cond_dot and cond_lr and not decreased
        if violated:
            violations += 1
        rows.append(
            {
                "epoch": rec.epoch,
                "dot_nonneg": bool(cond_dot),
                "lr_within_bound": bool(cond_lr),
                "val_decreased": decreased,
                "violation": bool(violated),
            }
        )
    return {"rows": rows, "violations": violations}


def _grad_norm_v(rec: EpochRecord) -> float | None:
    if rec.grad_norm_v is not None:
        return rec.grad_norm_v
    # reconstruct from dot = cos * |g_t| * |g_v| when well defined
    if rec.cos_theta and rec.grad_norm_t:
        denom = rec.cos_theta * rec.grad_norm_t
        if denom != 0:
            return abs(rec.dot_vt / denom)
    return None


def monitor_theorem3(trace: RunTrace) -> dict:
    """Diagnostic convergence bound from trace-estimated constants.

    sigma_T is the largest observed subset-gradient norm, delta_min the
    smallest observed ratio |grad L_T| / |grad L_V|, and the parameter radius
    is proxied by lr * sigma_T * T (the farthest SGD could travel).
    """
    sel = trace.selection_records()
    if not sel:
        raise ValueError("trace has no selection records")
    t_total = len(trace.records)
    sigma_t = max(r.grad_norm_t for r in sel)
    deltas = []
    for r in sel:
        nv = _grad_norm_v(r)
        if nv and nv > 0:
            deltas.append(r.grad_norm_t / nv)
    delta_min = min(deltas) if deltas else math.nan
    radius = trace.lr * sigma_t * t_total
    cos_terms = [math.sqrt(max(0.0, 1.0 - min(1.0, r.cos_theta))) for r in sel]
    if delta_min and delta_min > 0:
        bound = radius * sigma_t / (delta_min * math.sqrt(t_total)) + (
            radius * sigma_t * sum(cos_terms)
        ) / (t_total * delta_min)
    else:
        bound = math.inf
    min_val_all = min(r.val_loss for r in trace.records)
    min_val_sel = min(r.val_loss for r in sel)
    return {
        "bound": bound,
        "gap": min_val_sel - min_val_all,
        "sigma_t": sigma_t,
        "delta_min": delta_min,
        "radius": radius,
        "cos_theta": [r.cos_theta for r in sel],
    }
