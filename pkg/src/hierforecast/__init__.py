"""Two-level human activity forecasting: a hierarchical encoder-refresher-anticipator,
baselines, segment metrics and annotation tooling, on a small numpy autodiff core."""
from .baselines import MODEL_KINDS, BaselineKind, build_model, dummy_predict
from .checkpoint import load_model, save_model
from .errors import (AnnotationError, CheckpointError, ConfigurationError, ContractError, DimensionError,
                     GrammarError, HierForecastError, NumericError, VocabularyError)
from .hierarchy import ActivityHierarchy, make_hierarchy, split_at, validate
from .metrics import f1_at_k, moc, mof, segmental_edit_distance
from .model import Forecast, HeraConfig, HeraModel
from .training import fit

__version__ = "0.1.0"
