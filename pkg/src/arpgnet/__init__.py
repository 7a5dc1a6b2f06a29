"""Two-stream video classification with facial-region relation graphs and scoped fusion attention."""

__version__ = "0.1.0"

from .attention import AttentionMap, AttentionRecord, GatLayer, gat_forward, positional_encoding
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Dataset, SynthTaskConfig, load_dataset, save_dataset, synth_generate
from .evaluation import MetricReport, ablation_run, bench_inference, compute_metrics, dump_attention, loso_run
from .graphs import AdjacencyMatrix, build_fusion_graph, build_relation_graph
from .model import ArpgNet, ArpgNetConfig, ConfigError, FeatureBatch
from .training import TrainConfig, fit, predict

__all__ = [
    "AdjacencyMatrix",
    "ArpgNet",
    "ArpgNetConfig",
    "AttentionMap",
    "AttentionRecord",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "FeatureBatch",
    "GatLayer",
    "MetricReport",
    "SynthTaskConfig",
    "TrainConfig",
    "ablation_run",
    "bench_inference",
    "build_fusion_graph",
    "build_relation_graph",
    "compute_metrics",
    "dump_attention",
    "fit",
    "gat_forward",
    "load_checkpoint",
    "load_dataset",
    "loso_run",
    "positional_encoding",
    "predict",
    "save_checkpoint",
    "save_dataset",
    "synth_generate",
]
