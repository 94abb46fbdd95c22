"""Higher-order attribute-enhancing graph neural networks for heterogeneous
information networks: semantic-structure compilation, SemSim adjacencies,
SCL/CAL layer stacks, and end-to-end classification/clustering evaluation.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, HaeError, NumericError
from .hin import (
    HeteroGraph,
    LabelSplit,
    MetaSchema,
    SyntheticConfig,
    generate_synthetic_hin,
    load_hetero_graph,
    save_hetero_graph,
    split_labels,
    typed_adjacency,
)
from .layers import GraphInputs, LayerStack, ModelConfig, build_graph_inputs, build_stack, model_forward
from .rng import RngStream
from .semantics import (
    BinaryAdjacency,
    CommutingMatrix,
    SemanticCache,
    SemanticStructure,
    SimilarityMatrix,
    binary_adjacency,
    brute_force_instance_count,
    commuting_matrix,
    parse_structure,
    semsim_adjacency,
    structure_similarity,
    sym_normalize,
)
from .train_eval import (
    TrainConfig,
    TrainReport,
    clustering_scores,
    evaluate_embeddings,
    extract_embeddings,
    kmeans,
    logistic_probe,
    macro_micro_f1,
    train,
)
