"""Multi-head denoising autoencoders for implicit context, plus a Wide&Deep ranker."""

from .errors import ConfigError, DataError, MacdaeError, NumericError
from .features import FeatureSpace, assemble_input
from .pretrain import PretrainConfig, extract_representation, pretrain_fit
from .ranker import RankerConfig, init_ranker, ranker_fit

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FeatureSpace",
    "MacdaeError",
    "NumericError",
    "PretrainConfig",
    "RankerConfig",
    "assemble_input",
    "extract_representation",
    "init_ranker",
    "pretrain_fit",
    "ranker_fit",
]
