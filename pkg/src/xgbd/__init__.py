"""Explanation-guided detection of backdoor samples in graph classification.

Pipeline: poison a training set with subgraph triggers, train a small GIN
with a trap objective, extract an explanatory subgraph per sample, expand it
one hop, and flag samples whose subgraph loss falls below a threshold.
"""

__version__ = "0.1.0"

from .attack import (
    AttackConfig,
    PoisonedDataset,
    PoisonRecord,
    TriggerGraph,
    attack_success_rate,
    inject,
    inject_badgraph,
    inject_exa,
    load_poison_manifest,
    make_trigger,
    poison_graph,
    save_poisoned_dataset,
    select_victims,
)
from .detect import (
    BaselineResult,
    DetectionConfig,
    DetectionReport,
    baseline_abl,
    baseline_loss_isolation,
    expand_one_hop,
    re_threshold,
    run_xgbd,
    subgraph_loss,
)
from .explain import (
    Explanation,
    ExplainerConfig,
    explain_bruteforce,
    explain_gnnexplainer,
    explain_graph,
    explain_subgraphx,
    fidelity_score,
    shapley_score,
    shapley_score_exact,
)
from .experiment import ExperimentSpec, run_experiment, run_single
from .gin import (
    GinParams,
    ModelConfig,
    TrainResult,
    forward,
    gradients,
    load_checkpoint,
    sample_loss,
    save_checkpoint,
    train_standard,
    train_trap,
)
from .graphs import (
    Dataset,
    Graph,
    erdos_renyi,
    induced_subgraph,
    neighbor_set,
    one_hot_features,
    parse_tu_dataset,
    write_tu_dataset,
)
from .metrics import detection_accuracy, isolation_precision, roc_auc

__all__ = [name for name in dir() if not name.startswith("_")]
