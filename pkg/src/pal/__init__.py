"""Active similarity-graph learning.

Discover a similarity graph over a dataset through low-cost same-class
queries, learn embeddings from the graph with graph-form SSL losses or a
closed-form kernel solver, and measure downstream linear-probe error as a
function of queries made.
"""

__version__ = "0.1.0"

from .graph import (
    AugmentationLayout,
    LabelMatrix,
    SimilarityGraph,
    build_partial_sup_graph,
    build_ssl_graph,
    build_sup_graph,
    connected_components,
    deduce_from_membership,
    degree_matrix,
    eigen_square_root,
    mix_graphs,
    recover_labels,
    to_contrastive,
)
from .losses import (
    LossConfig,
    PairIndexSets,
    barlow_twins_graph_loss,
    simclr_graph_loss,
    spectral_contrastive_loss,
    stochastic_gradient,
    vic2_gradient,
    vic2_loss,
    vic2_stochastic,
    vicreg_original_loss,
)
from .kernel import (
    KernelConfig,
    KernelModel,
    evaluate_embedding,
    fit_linear_probe,
    gaussian_kernel_matrix,
    probe_error,
    sgd_train,
    solve_embedding,
)
from .datasets import (
    LabeledDataset,
    augment,
    concentric_circles,
    corrupt_labels,
    gaussian_mixture,
    reveal_labels,
)
from .config import RunConfig, config_from_dict, load_config
from .harness import (
    compare_contrastive,
    export_results,
    run_pal,
    sweep_missing_entries,
    sweep_mixing,
    sweep_noise,
)
