"""Open-world graph learning: node classification with novel-class discovery."""

from .graph import (AttributedGraph, GraphFormatError, OpenWorldSplit, SbmSpec,
                    SplitError, apply_split, generate_sbm, load_graph, load_split,
                    make_open_world_split, neighborhood, save_graph, save_split)
from .prototypes import (balance_regularizer, build_prototype_graph,
                         init_prototypes, prototype_similarity,
                         representativeness, associate_topk, PrototypeGraph)
from .clustering import (ClassMatching, GroupPartition, cluster_prototypes,
                         default_granularity_range, kmeans, match_and_score,
                         node_group_assignment, search_granularity)
from .pseudolabels import (ConfidentSet, EnsemblePrediction, align_layers,
                           ensemble, pad_predictions, select_confident, suppress)
from .refinement import (AugmentedView, RefinementResult, apply_refinement,
                         augment, consistency_loss, node_similarity,
                         recover_edges, refine, remove_edges)
from .evaluation import (OpenWorldMetrics, class_count_error,
                         kmeans_feature_baseline, open_world_accuracy)
from .network import (DivergenceError, LayerState, PanLayer, PanStack,
                      TrainState, attention_scores, build_stack, ce_loss,
                      fit, grad_check, layer_forward, load_checkpoint,
                      save_checkpoint, stack_forward, total_loss)

__version__ = "0.1.0"
