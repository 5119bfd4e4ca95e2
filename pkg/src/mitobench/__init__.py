"""mitobench: benchmarking frozen feature extractors for mitotic-figure
patch classification via linear probing, LoRA, or full fine-tuning,
with dataset-scaling and cross-domain protocols."""

__version__ = "0.1.0"
