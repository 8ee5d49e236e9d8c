"""Cross-modal joint embeddings: CCA, deep CCA, S-DCCA, triplet refinement and mAP."""

from .cca import CcaConfig, CcaModel, fit_cca, project, total_correlation
from .dataio import (
    FeatureSet,
    PairedDataset,
    SynthConfig,
    generate_synthetic,
    load_feature_file,
    mean_pool,
    save_feature_file,
    split,
)
from .deepnet import DccaModel, TrainConfig, corr_objective, embed, fit_sdcca, train_dcca
from .pairing import PairList, build_correspondences, materialize
from .retrieval import EvalReport, average_precision, evaluate, rank_list, similarity_matrix
from .triplet import TnnConfig, TnnModel, refine, sample_triplets, train_tnn, triplet_loss

__version__ = "0.1.0"
