"""Toy-scale backdoor trainer: synthetic datasets, trigger injection,
SGD training with optional amplification-aware adaptive losses, and export
to the detection firewall's exchange formats."""

from .containers import SampleSet, read_dataset, write_dataset
from .data import AttackSpec, make_toy_dataset, poison, split, stamp_trigger
from .export import export_dataset, export_model, write_run_metadata
from .train import attack_metrics, predict, train, train_adaptive

__version__ = "0.1.0"
