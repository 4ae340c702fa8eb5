"""Cell segmentation of transcriptomics point clouds by signed-graph
partitioning: compositional features, a Siamese pair classifier, and a
mutex watershed over attractive/repulsive molecule edges.
"""

from .data import (
    GenePanel,
    Molecule,
    MoleculeTable,
    SpatialIndex,
    annulus_query,
    build_spatial_index,
    knn_query,
    load_molecules,
)
from .features import FeatureMatrix, compositional_features, density_factor, one_hot
from .graphs import SignedGraph, attractive_edges, repulsive_edges, weight_graph
from .mutex import USING_COMPILED, Partition, mutex_watershed, oracle_partition
from .pairnet import (
    LabeledPair,
    PairNet,
    TrainConfig,
    bce_loss,
    encode,
    init_network,
    pair_posterior,
    sample_training_pairs,
    train,
)
from .pipeline import (
    CellSegmentation,
    Gmm1D,
    PipelineConfig,
    UNASSIGNED,
    gmm_fit_1d,
    postfilter_small_cells,
    prefilter_extracellular,
    segment,
)
from .evaluate import MatchResult, dice_index, match_cells, summary_metrics
from .contours import (
    CellPolygon,
    CountImage,
    extract_contour,
    rasterize_counts,
    smooth_and_label,
)

__version__ = "0.1.0"
