"""Validation-driven data subset selection for efficient and robust training.

The core idea: pick the training subset whose one-gradient-step lookahead
most raises the log-likelihood on a held-out validation set, re-selecting
every few epochs while the model trains.  The package also ships greedy
submodular maximizers, closed-form selection objectives for simple
classifiers, an active-learning extension, selection baselines, and runtime
monitors for the descent/convergence conditions.
"""

from .core import (
    GainState,
    GlisterConfig,
    RunTrace,
    exact_gain,
    exact_objective,
    glister_online_train,
    greedy_dss,
    make_gain_state,
    monitor_theorem2,
    monitor_theorem3,
    subset_digest,
    taylor_gain,
    taylor_proxy,
)
from .data import (
    Dataset,
    SplitSpec,
    gen_synthetic,
    inject_class_imbalance,
    inject_label_noise,
    parse_libsvm,
    serialize_libsvm,
    split,
    standardize,
)
from .models import (
    LossKind,
    ModelParams,
    ModelSpec,
    forward,
    grad_full,
    hypothesized_labels,
    last_layer_per_sample_grads,
    loss_value,
    sgd_epoch,
)
from .numerics import SeededRng, finite_diff_grad, log_sum_exp, pairwise_sq_dists
from .submodular import (
    MatroidQuota,
    SetFunctionOracle,
    exhaustive_max,
    facility_location,
    lazy_greedy,
    lr_submodular,
    naive_greedy,
    nb_feature_function,
    randomized_greedy,
    stochastic_greedy,
)

__version__ = "0.1.0"
