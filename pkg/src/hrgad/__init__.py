"""Unsupervised anomaly detection over heterogeneous graphs.

Hierarchical relation-aware graph convolutions trained with a one-class
objective and a self-supervised discrimination task against augmented graphs.
Submodules: hetgraph (data model), dataio (serialization, splits, synthetic
generator), numerics (reverse-mode tape), layers (convolution variants),
objective (losses, scoring), augment (graph augmentation), train (loop and
checkpoints), metrics (AUC/AP, reports), figures (PNG rendering), cli.
"""

__version__ = "0.1.0"

# Re-exports resolve lazily so importing the package stays cheap and the CLI
# can pin BLAS thread environment variables before numpy loads.
_EXPORTS = {
    "GraphSchema": "hetgraph",
    "HeteroGraph": "hetgraph",
    "TypeHistograms": "hetgraph",
    "Dataset": "dataio",
    "GeneratorConfig": "dataio",
    "generate": "dataio",
    "load_jsonl": "dataio",
    "save_jsonl": "dataio",
    "split": "dataio",
    "Param": "numerics",
    "Tape": "numerics",
    "finite_diff_check": "numerics",
    "ModelConfig": "layers",
    "ModelParams": "layers",
    "init_params": "layers",
    "model_forward": "layers",
    "SvddState": "objective",
    "ScoredGraph": "objective",
    "anomaly_score": "objective",
    "AugmentConfig": "augment",
    "TrainState": "train",
    "fit": "train",
    "load_checkpoint": "train",
    "save_checkpoint": "train",
    "EvalReport": "metrics",
    "auc": "metrics",
    "average_precision": "metrics",
    "evaluate": "metrics",
    "DataError": "errors",
    "CheckpointError": "errors",
    "UsageError": "errors",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name: str):
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    module = importlib.import_module(f".{module_name}", __name__)
    value = getattr(module, name)
    globals()[name] = value
    return value
