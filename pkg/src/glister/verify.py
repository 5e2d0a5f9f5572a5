"""Built-in property and oracle suites.

Each suite re-derives its expected values from an independent oracle (central
finite differences, exhaustive enumeration, paired baseline runs) and returns
one named check per assertion, so the CLI `verify` command and the test suite
share a single implementation.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    GlisterConfig,
    exact_gain,
    glister_online_train,
    greedy_dss,
    init_model_params,
    make_gain_state,
    subset_digest,
    taylor_gain,
    taylor_proxy,
)
from .data import Dataset, SplitSpec, gen_synthetic, inject_class_imbalance, inject_label_noise, split
from .models import (
    LossKind,
    ModelParams,
    ModelSpec,
    accuracy,
    flatten_grads,
    grad_full,
    init_params,
    loss_value,
    output_width,
    sgd_epoch,
)
from .numerics import SeededRng, finite_diff_grad
from .submodular import (
    exhaustive_max,
    facility_location,
    lazy_greedy,
    lr_submodular,
    naive_greedy,
    randomized_greedy,
)

__all__ = [
    "Check",
    "SUITES",
    "run_suite",
    "NOISE_SETUP",
    "IMBALANCE_SETUP",
    "ACTIVE_SETUP",
    "noise_experiment",
    "imbalance_experiment",
    "active_experiment",
    "compose_four_class",
]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


# Tuned desk-scale experiment setups shared with the acceptance tests.
NOISE_SETUP = dict(
    n_per_class=625, noise_rate=0.3, budget=0.3, hidden=100,
    epochs=200, select_every=20, r_frac=0.03, lr=0.001, batch_size=20,
    seeds=(1, 2, 3, 4, 5),
)
IMBALANCE_SETUP = dict(
    n_per_class=250, affected_frac=0.3, keep_frac=0.1, budget=0.2, hidden=100,
    epochs=200, select_every=20, r_frac=0.03, lr=0.002, batch_size=10,
    seeds=(1, 2, 3, 4, 5),
)
ACTIVE_SETUP = dict(
    n_majority=500, n_rare=7, rare_offset=(0.0, 6.0), rounds=10, batch=50,
    epochs_per_round=200, initial=20, hidden=100, lr=0.002, batch_size=10,
    seeds=(1, 2, 3, 4, 5),
)


def _flat_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    layers = []
    off = 0
    for w, b in template.layers:
        wn = vec[off:off + w.size].reshape(w.shape)
        off += w.size
        bn = vec[off:off + b.size]
        off += b.size
        layers.append((wn, bn))
    return ModelParams(tuple(layers), template.activation)


def _away_from_kinks(params, x, y, kind, margin=1e-4) -> bool:
    """Finite differences need the loss to be smooth in an h-neighbourhood;
    reject samples sitting on a hinge/perceptron/ReLU kink."""
    from .models import forward, _signs

    if params.activation == "relu":
        h = x
        for w, b in params.layers[:-1]:
            z = h @ w + b
            if np.min(np.abs(z)) < margin:
                return False
            h = np.maximum(z, 0.0)
    z = forward(params, x)
    if kind in (LossKind.HINGE, LossKind.PERCEPTRON):
        m = _signs(np.asarray(y)) * z[:, 0]
        ref = 1.0 if kind == LossKind.HINGE else 0.0
        if np.min(np.abs(m - ref)) < margin:
            return False
    return True


def suite_gradients(seed: int = 0) -> list[Check]:
    """Criterion: analytic vs central finite differences (h = 1e-6) for all
    five losses and both architectures, >= 50 cases, rel err <= 1e-5."""
    checks = []
    cases = 0
    worst = 0.0
    start = time.perf_counter()
    case_seed = seed
    for arch in ("logistic", "mlp"):
        for kind in LossKind:
            done = 0
            while done < 6:
                case_seed += 1
                rng = SeededRng(case_seed)
                d = 2 + rng.randint(3)
                n = 3 + rng.randint(5)
                c = (2 + rng.randint(3)) if kind == LossKind.CROSS_ENTROPY else 2
                dims = (
                    [d, output_width(kind, c)]
                    if arch == "logistic"
                    else [d, 4 + rng.randint(4), output_width(kind, c)]
                )
                params = init_params(dims, "relu", rng.split(1))
                x = rng.split(2).normals(n * d).reshape(n, d)
                y = np.array([rng.split(3).randint(c) for _ in range(n)])
                if not _away_from_kinks(params, x, y, kind):
                    continue
                vec = flatten_grads(params.layers)
                g = flatten_grads(grad_full(params, x, y, kind))
                fd = finite_diff_grad(
                    lambda v: loss_value(_flat_to_params(v, params), x, y, kind), vec, 1e-6
                )
                denom = max(float(np.linalg.norm(g)), 1e-10)
                rel = float(np.linalg.norm(g - fd)) / denom
                worst = max(worst, rel)
                cases += 1
                done += 1
    elapsed = time.perf_counter() - start
    checks.append(Check("gradient cases >= 50", cases >= 50, f"{cases} cases"))
    checks.append(Check("max relative error <= 1e-5", worst <= 1e-5, f"worst {worst:.2e}"))
    checks.append(Check("runtime < 10 s", elapsed < 10.0, f"{elapsed:.1f} s"))
    return checks


def _proxy_instance(seed: int, n_per_class: int, kind: LossKind, eta=0.05, k=8):
    full = gen_synthetic("separable-2", n_per_class, seed)
    train, val, _ = split(full, SplitSpec(0.75, 0.125, 0.125, seed=1))
    c = 2
    spec = ModelSpec("logistic")
    dims = spec.layer_dims(train.d, output_width(kind, c))
    params = init_params(dims, "identity", SeededRng(seed + 13))
    return taylor_proxy(params, train, val, kind, eta, k), train, val, params


def _sample_dr_triples(f, trials: int, rng: SeededRng, slack=1e-9) -> float:
    """Worst diminishing-returns violation over sampled X subset-of Y, e."""
    worst = 0.0
    for _ in range(trials):
        size_y = 1 + rng.randint(min(12, f.n - 1))
        y_set = [int(v) for v in rng.choice_no_replace(f.n, size_y)]
        x_set = y_set[: rng.randint(len(y_set) + 1)]
        rest = [i for i in range(f.n) if i not in y_set]
        e = rest[rng.randint(len(rest))]
        worst = min(worst, f.marginal(e, x_set) - f.marginal(e, y_set))
    return worst


def suite_submodularity(seed: int = 0) -> list[Check]:
    """Criterion: the loss-specific gain proxies show diminishing returns
    within 1e-9 (logistic/hinge/perceptron via 200 sampled triples on a
    60-point ground set, squared loss exhaustively on 10 points, where it is
    also non-monotone)."""
    checks = []
    start = time.perf_counter()
    for kind in (LossKind.LOGISTIC, LossKind.HINGE, LossKind.PERCEPTRON):
        f, *_ = _proxy_instance(seed + 40, 40, kind)  # 60 training points
        worst = _sample_dr_triples(f, 200, SeededRng(seed + 7))
        checks.append(
            Check(f"{kind.value} proxy diminishing returns (200 triples)",
                  worst >= -1e-9, f"worst violation {worst:.2e}")
        )
    f, train, val, params = _proxy_instance(seed + 40, 40, LossKind.SQUARED)
    small = train.take(range(10))
    f = taylor_proxy(params, small, val, LossKind.SQUARED, 0.05, 4)
    worst = 0.0
    min_marginal = math.inf
    for size in range(0, 9):
        for s in itertools.combinations(range(10), size):
            rest = [e for e in range(10) if e not in s]
            for e in rest:
                gain_here = f.marginal(e, list(s))
                min_marginal = min(min_marginal, gain_here)
                for e2 in rest:
                    if e2 != e:
                        worst = min(worst, gain_here - f.marginal(e, list(s) + [e2]))
    checks.append(Check("squared proxy submodular (exhaustive n=10)",
                        worst >= -1e-9, f"worst violation {worst:.2e}"))
    checks.append(Check("squared proxy non-monotone",
                        min_marginal < 0, f"min marginal {min_marginal:.3f}"))
    elapsed = time.perf_counter() - start
    checks.append(Check("runtime < 30 s", elapsed < 30.0, f"{elapsed:.1f} s"))
    return checks


def _random_fl_instance(seed: int, n=12):
    rng = SeededRng(seed)
    pts = rng.normals(2 * n).reshape(n, 2) * 2.0
    labels = np.array([rng.randint(2) for _ in range(n)])
    return facility_location(pts, labels, per_class=False)


def suite_greedy_ratio(seed: int = 0) -> list[Check]:
    """Criterion: naive (= lazy) greedy reaches (1 - 1/e) OPT on 25 facility
    location and 25 logistic-proxy instances (n=12, k=4); randomized greedy
    on the regression objective reaches OPT/e on average over 50 seeds."""
    checks = []
    start = time.perf_counter()
    bound = 1.0 - 1.0 / math.e
    worst_ratio = math.inf
    lazy_equal = True
    for i in range(25):
        f = _random_fl_instance(seed + 100 + i)
        ng = naive_greedy(f, 4)
        lg = lazy_greedy(f, 4)
        lazy_equal = lazy_equal and (list(lg) == ng)
        opt_val = exhaustive_max(f, 4)[1]
        if opt_val > 0:
            worst_ratio = min(worst_ratio, f.value(ng) / opt_val)
    checks.append(Check("facility location: greedy >= (1-1/e) OPT (25 instances)",
                        worst_ratio >= bound, f"worst ratio {worst_ratio:.4f}"))
    checks.append(Check("lazy greedy identical to naive greedy", lazy_equal))

    worst_ratio = math.inf
    for i in range(25):
        f, train, val, params = _proxy_instance(seed + 200 + i, 8, LossKind.LOGISTIC, k=4)
        small_f = taylor_proxy(params, train.take(range(12)), val, LossKind.LOGISTIC, 0.05, 4)
        ng = naive_greedy(small_f, 4)
        opt_val = exhaustive_max(small_f, 4)[1]
        if opt_val > 1e-9:
            worst_ratio = min(worst_ratio, small_f.value(ng) / opt_val)
    checks.append(Check("logistic proxy: greedy >= (1-1/e) OPT (25 instances)",
                        worst_ratio >= bound, f"worst ratio {worst_ratio:.4f}"))

    full = gen_synthetic("binary-slack", 20, seed + 300)
    train, val, _ = split(full, SplitSpec(0.5, 0.25, 0.25, seed=2))
    f = lr_submodular(train.take(range(10)), val, m_clusters=3, seed=seed + 5)
    opt_val = exhaustive_max(f, 4)[1]
    # the regression objective drops negative constants and sits below zero,
    # so the 1/e guarantee is checked on values shifted by the worst k-set
    # (both endpoints come from the same enumeration oracle)
    worst_val = min(f.value(c) for c in itertools.combinations(range(f.n), 4))
    vals = [f.value(randomized_greedy(f, 4, SeededRng(seed + 400 + s))) for s in range(50)]
    mean_val = float(np.mean(vals))
    ok = (mean_val - worst_val) >= (opt_val - worst_val) / math.e
    checks.append(Check(
        "regression objective: randomized greedy mean >= OPT/e (50 seeds, worst-shifted)",
        ok,
        f"mean {mean_val - worst_val:.3f} vs OPT/e {(opt_val - worst_val) / math.e:.3f}"))
    elapsed = time.perf_counter() - start
    checks.append(Check("runtime < 60 s", elapsed < 60.0, f"{elapsed:.1f} s"))
    return checks


def suite_taylor_fidelity(seed: int = 0) -> list[Check]:
    """Criterion: top-1 agreement between the linearized and exact gains
    >= 80% over 100 trials at eta = 0.01, and the error shrinks at a
    second-order rate in eta (log-log slope >= 1.7)."""
    checks = []
    start = time.perf_counter()
    full = gen_synthetic("separable-2", 100, seed + 1)
    train, val, _ = split(full, SplitSpec(0.8, 0.1, 0.1, seed=3))
    kind = LossKind.CROSS_ENTROPY
    spec = ModelSpec("logistic")
    agree = 0
    for trial in range(100):
        rng = SeededRng(seed + 500 + trial)
        params = init_params(
            spec.layer_dims(train.d, output_width(kind, 2)), "identity", rng.split(0)
        )
        s_size = rng.randint(6)
        subset = [int(v) for v in rng.choice_no_replace(train.n, s_size)]
        cand = [int(v) for v in rng.split(1).choice_no_replace(train.n, 25) if int(v) not in subset]
        state = make_gain_state(params, train, np.arange(train.n), kind, 0.01)
        state.add(subset)
        state.refresh(val)
        tg = [taylor_gain(state, e) for e in cand]
        eg = [exact_gain(params, train, val, kind, subset, e, 0.01) for e in cand]
        if cand[int(np.argmax(tg))] == cand[int(np.argmax(eg))]:
            agree += 1
    checks.append(Check("top-1 agreement >= 80% at eta=0.01",
                        agree >= 80, f"{agree}/100"))

    etas = (1e-1, 1e-2, 1e-3)
    errs = []
    for eta in etas:
        trial_errs = []
        for trial in range(20):
            rng = SeededRng(seed + 900 + trial)
            params = init_params(
                spec.layer_dims(train.d, output_width(kind, 2)), "identity", rng.split(0)
            )
            subset = [int(v) for v in rng.choice_no_replace(train.n, 4)]
            e = int(rng.split(1).randint(train.n))
            while e in subset:
                e = (e + 1) % train.n
            state = make_gain_state(params, train, np.arange(train.n), kind, eta)
            state.add(subset)
            state.refresh(val)
            trial_errs.append(
                abs(taylor_gain(state, e) - exact_gain(params, train, val, kind, subset, e, eta))
            )
        errs.append(float(np.mean(trial_errs)))
    slope = float(np.polyfit(np.log(etas), np.log(errs), 1)[0])
    checks.append(Check("second-order error slope >= 1.7", slope >= 1.7, f"slope {slope:.2f}"))
    elapsed = time.perf_counter() - start
    checks.append(Check("runtime < 30 s", elapsed < 30.0, f"{elapsed:.1f} s"))
    return checks


def noise_experiment(seed: int):
    """Paired glister / plain-random run on noisy separable data; returns
    (glister_acc, random_acc, flipped_fraction_in_final_subset)."""
    cfgd = NOISE_SETUP
    full = gen_synthetic("separable-2", cfgd["n_per_class"], 100 + seed)
    train, val, test = split(full, SplitSpec(0.8, 0.1, 0.1, seed=1))
    train = inject_label_noise(train, cfgd["noise_rate"], 42 + seed)
    cfg = GlisterConfig(
        budget_frac=cfgd["budget"], select_every=cfgd["select_every"],
        r_frac=cfgd["r_frac"], lr=cfgd["lr"], batch_size=cfgd["batch_size"],
        loss=LossKind.CROSS_ENTROPY, seed=seed,
    )
    spec = ModelSpec("mlp", hidden=cfgd["hidden"])
    k = cfg.resolve_k(train.n)
    params, subset, _ = glister_online_train(train, val, test, spec, cfg, cfgd["epochs"])
    root = SeededRng(cfg.seed)
    rparams = init_model_params(train, spec, cfg)
    rsubset = sorted(int(i) for i in root.split(1 << 33).choice_no_replace(train.n, k))
    for t in range(cfgd["epochs"]):
        rparams = sgd_epoch(rparams, train, rsubset, cfg.lr, cfg.batch_size, root.split(t), cfg.loss)
    return (
        accuracy(params, test),
        accuracy(rparams, test),
        float(train.noise_flipped[subset].mean()),
    )


def imbalance_experiment(seed: int):
    """Paired glister / proportional-random run on an imbalanced 4-class
    problem with balanced validation; returns (glister_acc, random_acc,
    rare fraction in glister subset, rare fraction in the train pool)."""
    from .baselines import random_subset

    cfgd = IMBALANCE_SETUP
    full = gen_synthetic("overlapping-4", cfgd["n_per_class"], 100 + seed)
    train, val, test = split(full, SplitSpec(0.8, 0.1, 0.1, seed=1))
    balanced_counts = train.class_counts()
    train = inject_class_imbalance(train, cfgd["affected_frac"], cfgd["keep_frac"], 7 + seed)
    rare = np.flatnonzero(train.class_counts() < balanced_counts * 0.5)
    cfg = GlisterConfig(
        budget_frac=cfgd["budget"], select_every=cfgd["select_every"],
        r_frac=cfgd["r_frac"], lr=cfgd["lr"], batch_size=cfgd["batch_size"],
        loss=LossKind.CROSS_ENTROPY, seed=seed,
    )
    spec = ModelSpec("mlp", hidden=cfgd["hidden"])
    k = cfg.resolve_k(train.n)
    params, subset, _ = glister_online_train(train, val, test, spec, cfg, cfgd["epochs"])
    root = SeededRng(cfg.seed)
    rparams = init_model_params(train, spec, cfg)
    rsubset = random_subset(train, k, root.split(1 << 33), match_distribution=train)
    for t in range(cfgd["epochs"]):
        rparams = sgd_epoch(rparams, train, rsubset, cfg.lr, cfg.batch_size, root.split(t), cfg.loss)
    rare_mask = np.isin(train.labels, rare)
    return (
        accuracy(params, test),
        accuracy(rparams, test),
        float(rare_mask[subset].mean()),
        float(rare_mask.mean()),
    )


def suite_robustness(seed: int = 0) -> list[Check]:
    """Criteria: label-noise and class-imbalance desk experiments (5 seeds)."""
    checks = []
    res = [noise_experiment(s) for s in NOISE_SETUP["seeds"]]
    g = float(np.mean([r[0] for r in res]))
    rn = float(np.mean([r[1] for r in res]))
    nf = float(np.mean([r[2] for r in res]))
    checks.append(Check(
        "noise: glister accuracy >= random + 5 points",
        g >= rn + 0.05, f"glister {g:.3f} vs random {rn:.3f}"))
    checks.append(Check(
        "noise: flipped fraction in subset <= 0.5 x injected rate",
        nf <= 0.5 * NOISE_SETUP["noise_rate"], f"{nf:.3f} vs cap {0.5 * NOISE_SETUP['noise_rate']:.3f}"))
    res = [imbalance_experiment(s) for s in IMBALANCE_SETUP["seeds"]]
    g = float(np.mean([r[0] for r in res]))
    rn = float(np.mean([r[1] for r in res]))
    rare_sel = float(np.mean([r[2] for r in res]))
    rare_pool = float(np.mean([r[3] for r in res]))
    checks.append(Check(
        "imbalance: rare-class fraction >= 2 x pool fraction",
        rare_sel >= 2.0 * rare_pool, f"subset {rare_sel:.3f} vs pool {rare_pool:.3f}"))
    checks.append(Check(
        "imbalance: glister accuracy >= proportional random + 3 points",
        g >= rn + 0.03, f"glister {g:.3f} vs random {rn:.3f}"))
    return checks


def compose_four_class(n_majority: int, n_rare_gen: int, seed: int) -> Dataset:
    """4-class pool: a well-separated binary pair (classes 0/1) plus an
    overlapping pair (classes 2/3) translated to its own region."""
    maj = gen_synthetic("separable-2", n_majority, seed)
    rare = gen_synthetic("binary-slack", max(n_rare_gen, 2), seed + 1)
    offset = np.array(ACTIVE_SETUP["rare_offset"])
    feats = np.vstack([maj.features, rare.features + offset])
    labels = np.concatenate([maj.labels, rare.labels + 2])
    return Dataset(feats, labels, 4)


def downsample_classes(ds: Dataset, per_class: dict, rng: SeededRng) -> Dataset:
    keep = []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == c)
        cap = per_class.get(c, len(rows))
        if cap >= len(rows):
            keep.extend(int(r) for r in rows)
        else:
            keep.extend(int(rows[i]) for i in np.sort(rng.choice_no_replace(len(rows), cap)))
    return ds.take(sorted(keep))


def active_experiment(seed: int):
    """Paired glister-active / random-acquisition run on a pool whose two
    overlapping classes are rare; returns (glister_acc, random_acc).

    Every rare label is irreplaceable here, so acquisition quality shows up
    directly in the final accuracy."""
    from .active import run_active

    cfgd = ACTIVE_SETUP
    pool = compose_four_class(cfgd["n_majority"], 260, 100 + seed)
    pool = downsample_classes(
        pool, {2: cfgd["n_rare"], 3: cfgd["n_rare"]}, SeededRng(seed).split(5)
    )
    val = compose_four_class(25, 25, 300 + seed)
    test = compose_four_class(50, 50, 400 + seed)
    cfg = GlisterConfig(
        k=cfgd["batch"], r_frac=0.03, lr=cfgd["lr"], batch_size=cfgd["batch_size"],
        loss=LossKind.CROSS_ENTROPY, seed=seed,
    )
    spec = ModelSpec("mlp", hidden=cfgd["hidden"])
    counts = pool.class_counts()
    rng = SeededRng(seed).split(71)
    # proportional seed labels with at least one per class, trimmed to size
    quota = {c: max(1, round(cfgd["initial"] * counts[c] / counts.sum())) for c in range(4)}
    while sum(quota.values()) > cfgd["initial"]:
        big = max(quota, key=lambda c: quota[c])
        quota[big] -= 1
    initial = []
    for c, q in quota.items():
        rows = np.flatnonzero(pool.labels == c)
        initial.extend(int(rows[i]) for i in rng.choice_no_replace(len(rows), q))
    initial = sorted(initial)
    accs = {}
    for strat in ("glister", "random"):
        _, _, trace = run_active(
            strat, pool, val, test, initial, spec, cfg,
            cfgd["rounds"], cfgd["batch"], cfgd["epochs_per_round"],
        )
        accs[strat] = trace.final_test_acc
    return accs["glister"], accs["random"]


def suite_determinism(seed: int = 0) -> list[Check]:
    """Criterion: identical config and seed give bit-identical subset digests
    and traces (timing columns excluded, as wall-clock is physical)."""
    from .experiments import trace_to_csv

    checks = []
    full = gen_synthetic("separable-2", 100, seed + 3)
    train, val, test = split(full, SplitSpec(0.8, 0.1, 0.1, seed=1))
    cfg = GlisterConfig(budget_frac=0.3, select_every=5, lr=0.003, batch_size=10, seed=seed)
    spec = ModelSpec("mlp", hidden=16)
    runs = [glister_online_train(train, val, test, spec, cfg, 12) for _ in range(2)]
    digests = [subset_digest(r[1]) for r in runs]
    checks.append(Check("subset digests bit-identical", digests[0] == digests[1], digests[0][:12]))

    def strip_timing(trace) -> str:
        rows = trace_to_csv(trace).splitlines()
        out = []
        for i, row in enumerate(rows):
            cells = row.split(",")
            cells[1] = cells[2] = "-" if i else cells[1]
            out.append(",".join(cells))
        return "\n".join(out)

    t0, t1 = strip_timing(runs[0][2]), strip_timing(runs[1][2])
    checks.append(Check("traces bit-identical outside timing columns", t0 == t1))
    sels = [greedy_dss(train, val, init_model_params(train, spec, cfg), cfg) for _ in range(2)]
    checks.append(Check("greedy selection identical across runs", sels[0] == sels[1]))
    return checks


SUITES = {
    "gradients": suite_gradients,
    "submodularity": suite_submodularity,
    "greedy-ratio": suite_greedy_ratio,
    "taylor-fidelity": suite_taylor_fidelity,
    "robustness": suite_robustness,
    "determinism": suite_determinism,
}


def run_suite(name: str, seed: int = 0) -> tuple[list[Check], bool]:
    if name == "all":
        checks = []
        for fn in SUITES.values():
            checks.extend(fn(seed))
    elif name in SUITES:
        checks = SUITES[name](seed)
    else:
        raise KeyError(name)
    return checks, all(c.passed for c in checks)
