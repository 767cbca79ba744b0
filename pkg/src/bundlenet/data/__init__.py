"""Dataset loading, synthetic generation and persistence."""
from bundlenet.data.checkpoint import (
    checkpoint_bytes,
    load_checkpoint,
    load_split,
    parse_checkpoint,
    save_checkpoint,
    save_split,
    split_to_json,
)
from bundlenet.data.synthetic import SyntheticSpec, generate_synthetic
from bundlenet.data.triples import DatasetBundle, dataset_stats, format_stats_table, load_triples, write_triples

__all__ = [
    "DatasetBundle", "SyntheticSpec", "checkpoint_bytes", "dataset_stats", "format_stats_table",
    "generate_synthetic", "load_checkpoint", "load_split", "load_triples", "parse_checkpoint",
    "save_checkpoint", "save_split", "split_to_json", "write_triples",
]
