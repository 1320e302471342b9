"""Lane-change anticipation stack.

Pipeline: discretize kinematics into linguistic features, embed a knowledge
graph of labeled driving situations, infer maneuver posteriors over the
embeddings, precompile them into a lookup table, serve predictions over a
line protocol, and demonstrate early ego braking in a kinematic simulator.
"""

__version__ = "0.1.0"

from .bayes import ManeuverPosterior, posterior, predict
from .features import (
    DEFAULT_PRESET,
    FeatureSlot,
    FeatureVector,
    KinematicSnapshot,
    SLOTS,
    assemble_features,
    compute_thw,
    compute_ttc,
    parse_feature_token,
    thw_to_category,
    ttc_to_category,
)
from .kg import (
    InstanceRecord,
    KnowledgeGraph,
    Triple,
    generate_synthetic_corpus,
    instances_to_triples,
    load_triples_csv,
    rule_intention,
    save_triples_csv,
)
from .kge import EmbeddingModel, TrainConfig, load_model, rank_eval, save_model, train
from .sim import ScenarioConfig, ScenarioMetrics, ScenarioTrace, run_scenario
from .table import PredictionTable, compile_table, load_table_csv, lookup, save_table_csv

__all__ = [
    "DEFAULT_PRESET",
    "EmbeddingModel",
    "FeatureSlot",
    "FeatureVector",
    "InstanceRecord",
    "KinematicSnapshot",
    "KnowledgeGraph",
    "ManeuverPosterior",
    "PredictionTable",
    "ScenarioConfig",
    "ScenarioMetrics",
    "ScenarioTrace",
    "SLOTS",
    "TrainConfig",
    "Triple",
    "assemble_features",
    "compile_table",
    "compute_thw",
    "compute_ttc",
    "generate_synthetic_corpus",
    "instances_to_triples",
    "load_model",
    "load_table_csv",
    "load_triples_csv",
    "lookup",
    "parse_feature_token",
    "posterior",
    "predict",
    "rank_eval",
    "rule_intention",
    "run_scenario",
    "save_model",
    "save_table_csv",
    "save_triples_csv",
    "thw_to_category",
    "train",
    "ttc_to_category",
]
