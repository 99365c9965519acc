"""Multi-locale query to product-type classification workbench."""
from .core import (Catalog, ClickRecord, Dataset, FormatError, LabeledExample, LocaleId, ProductTypeId, Registry,
                   load_clicklog, load_dataset, locale_registry, pt_registry, save_clicklog, save_dataset)
from .encoder import EncoderConfig
from .models import ModelBundle, TrainConfig, VariantKind, create_bundle, forward_scores, predict, train

__version__ = "0.1.0"

__all__ = [
    "Catalog", "ClickRecord", "Dataset", "FormatError", "LabeledExample", "LocaleId", "ProductTypeId", "Registry",
    "load_clicklog", "load_dataset", "locale_registry", "pt_registry", "save_clicklog", "save_dataset",
    "EncoderConfig", "ModelBundle", "TrainConfig", "VariantKind", "create_bundle", "forward_scores", "predict",
    "train",
]
