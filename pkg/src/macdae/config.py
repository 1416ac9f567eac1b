"""Experiment configuration: JSON schema, presets and validation.

A config is a JSON object::

    {
      "name": "yelp-sample",
      "seed": 7,
      "preset": "yelp-like",                     # optional
      "data": {
        "path": "reviews.tsv",                   # relative to the config file
        "rating_scale": [1, 5],
        "positive_threshold": 4,
        "min_reviews": 20,
        "embedding_dim": 64,
        "train_negatives": 4,
        "split": {"strategy": "ratio", "fraction": 0.8}
      },
      "pretrain": {"kind": "macdae", "heads": 4, "hidden_dim": 256, ...},
      "ranker": {"hidden_sizes": [256], "integration": "fine_tune", ...},
      "evaluation": {"metrics": ["ndcg", "auc"], "k": [5, 10], "negatives": 50},
      "ablation": {"groups": ["c.time,c.weekday", "d.dist"]},
      "sweep": {"heads": [1, 2, 4, 8], "kinds": ["dae", "macdae"]},
      "output": "runs/yelp"
    }

Only ``seed`` and ``data.path`` are required. Stage seeds default to
``seed + offset`` and are written back into every config snapshot.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError, MacdaeError
from .pretrain import PretrainConfig
from .ranker import RankerConfig

SEED_OFFSETS = {"split": 0, "pretrain": 1, "ranker": 2, "evaluation": 3, "embedding": 4}

PRESETS = {
    "yelp-like": {
        "data": {
            "embedding_dim": 64,
            "min_reviews": 20,
            "positive_threshold": 4,
            "split": {"strategy": "ratio", "fraction": 0.8},
        },
        "pretrain": {"heads": 4, "hidden_dim": 256, "penalty": 0.005},
        "ranker": {"hidden_sizes": [256], "integration": "fine_tune"},
    },
    "dianping-like": {
        "data": {
            "embedding_dim": 64,
            "min_reviews": 4,
            "positive_threshold": 4,
            "split": {"strategy": "leave_one_out"},
        },
        "pretrain": {"heads": 4, "hidden_dim": 128, "penalty": 0.005},
        "ranker": {"hidden_sizes": [128], "integration": "fine_tune"},
    },
    "ctr-like": {
        "data": {"embedding_dim": 64, "min_reviews": 0, "train_negatives": 0},
        "pretrain": {"heads": 8, "hidden_dim": 256, "penalty": 0.05},
        "ranker": {"hidden_sizes": [512, 256, 256], "integration": "feature_based"},
    },
}

_DATA_DEFAULTS = {
    "path": None,
    "rating_scale": [1, 5],
    "positive_threshold": 4,
    "min_reviews": 0,
    "embedding_dim": 64,
    "train_negatives": 4,
    "split": {"strategy": "ratio", "fraction": 0.8},
}
_EVAL_DEFAULTS = {"metrics": ["ndcg", "auc"], "k": [5, 10], "negatives": 50, "seed": None}
_SWEEP_DEFAULTS = {"heads": [1, 2, 4, 8], "kinds": ["dae", "macdae"]}
_TOP_KEYS = {"name", "seed", "preset", "data", "pretrain", "ranker", "evaluation", "ablation",
             "sweep", "output"}
_PRETRAIN_KEYS = set(PretrainConfig.__dataclass_fields__) - {"input_dim"}
_RANKER_KEYS = set(RankerConfig.__dataclass_fields__)


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "split":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(section, allowed, prefix):
    if not isinstance(section, dict):
        raise ConfigError(f"{prefix or 'config'} must be a JSON object", field=prefix or None)
    for k in section:
        if k not in allowed:
            name = f"{prefix}.{k}" if prefix else k
            raise ConfigError(f"unknown config key {name!r}", field=name)


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer", field=name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}", field=name)
    return value


def _build_section(cls, values, prefix):
    try:
        return cls(**values)
    except MacdaeError as exc:
        raise ConfigError(str(exc), field=f"{prefix}.{exc.field}") from None
    except TypeError as exc:
        raise ConfigError(str(exc), field=prefix) from None


@dataclass
class DataConfig:
    path: str
    rating_scale: tuple = (1.0, 5.0)
    positive_threshold: float = 4.0
    min_reviews: int = 0
    embedding_dim: int = 64
    train_negatives: int = 4
    split: dict = field(default_factory=lambda: {"strategy": "ratio", "fraction": 0.8})


@dataclass
class EvaluationConfig:
    metrics: tuple = ("ndcg", "auc")
    k: tuple = (5, 10)
    negatives: int = 50
    seed: int = 0


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    data: DataConfig
    pretrain: PretrainConfig
    ranker: RankerConfig
    evaluation: EvaluationConfig
    ablation_groups: tuple = ()
    sweep_heads: tuple = (1, 2, 4, 8)
    sweep_kinds: tuple = ("dae", "macdae")
    output: str = "runs/default"
    preset: str = None
    split_seed: int = 0
    embedding_seed: int = 0

    def snapshot(self):
        """JSON-ready dict with every seed resolved.

        The output directory is left out so relocated runs stay byte-identical.
        """
        return {
            "name": self.name,
            "seed": self.seed,
            "preset": self.preset,
            "seeds": {
                "split": self.split_seed,
                "embedding": self.embedding_seed,
                "pretrain": self.pretrain.seed,
                "ranker": self.ranker.seed,
                "evaluation": self.evaluation.seed,
            },
            "data": {**asdict(self.data), "rating_scale": list(self.data.rating_scale)},
            "pretrain": asdict(self.pretrain),
            "ranker": {**asdict(self.ranker), "hidden_sizes": list(self.ranker.hidden_sizes)},
            "evaluation": {**asdict(self.evaluation), "metrics": list(self.evaluation.metrics),
                           "k": list(self.evaluation.k)},
            "ablation": {"groups": list(self.ablation_groups)},
            "sweep": {"heads": list(self.sweep_heads), "kinds": list(self.sweep_kinds)},
        }

    def digest(self):
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_config(raw, base_dir=".", seed_override=None, preset_override=None, output_override=None):
    """Validate a config dict and resolve presets, defaults and seeds."""
    _check_keys(raw, _TOP_KEYS, "")
    preset = preset_override or raw.get("preset")
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}",
                              field="preset")
        merged = copy.deepcopy(PRESETS[preset])
    merged = _merge(merged, raw)

    if seed_override is not None:
        merged["seed"] = seed_override
    if "seed" not in merged:
        raise ConfigError("missing required field 'seed'", field="seed")
    seed = _int(merged["seed"], "seed", 0)

    data = _merge(_DATA_DEFAULTS, merged.get("data", {}))
    _check_keys(data, set(_DATA_DEFAULTS), "data")
    if not data["path"]:
        raise ConfigError("missing required field 'data.path'", field="data.path")
    path = Path(data["path"])
    if not path.is_absolute():
        path = (Path(base_dir) / path).resolve()
    scale = data["rating_scale"]
    if not (isinstance(scale, (list, tuple)) and len(scale) == 2 and scale[0] < scale[1]):
        raise ConfigError("rating_scale must be [low, high]", field="data.rating_scale")
    split = data["split"]
    _check_keys(split, {"strategy", "fraction", "cutoff", "train_window", "test_window"},
                "data.split")
    if split.get("strategy", "ratio") not in ("ratio", "leave_one_out", "time"):
        raise ConfigError("unknown split strategy", field="data.split.strategy")
    data_cfg = DataConfig(
        path=str(path),
        rating_scale=(float(scale[0]), float(scale[1])),
        positive_threshold=float(data["positive_threshold"]),
        min_reviews=_int(data["min_reviews"], "data.min_reviews", 0),
        embedding_dim=_int(data["embedding_dim"], "data.embedding_dim", 1),
        train_negatives=_int(data["train_negatives"], "data.train_negatives", 0),
        split=dict(split),
    )

    pre = dict(merged.get("pretrain", {}))
    _check_keys(pre, _PRETRAIN_KEYS, "pretrain")
    pre.setdefault("seed", seed + SEED_OFFSETS["pretrain"])
    rk = dict(merged.get("ranker", {}))
    _check_keys(rk, _RANKER_KEYS, "ranker")
    rk.setdefault("seed", seed + SEED_OFFSETS["ranker"])
    pretrain_cfg = _build_section(PretrainConfig, pre, "pretrain")
    ranker_cfg = _build_section(RankerConfig, rk, "ranker")

    ev = _merge(_EVAL_DEFAULTS, merged.get("evaluation", {}))
    _check_keys(ev, set(_EVAL_DEFAULTS), "evaluation")
    for m in ev["metrics"]:
        if m not in ("ndcg", "auc"):
            raise ConfigError(f"unknown metric {m!r}", field="evaluation.metrics")
    eval_cfg = EvaluationConfig(
        metrics=tuple(ev["metrics"]),
        k=tuple(_int(k, "evaluation.k", 1) for k in ev["k"]),
        negatives=_int(ev["negatives"], "evaluation.negatives", 0),
        seed=seed + SEED_OFFSETS["evaluation"] if ev["seed"] is None
        else _int(ev["seed"], "evaluation.seed", 0),
    )

    abl = merged.get("ablation", {})
    _check_keys(abl, {"groups"}, "ablation")
    sweep = _merge(_SWEEP_DEFAULTS, merged.get("sweep", {}))
    _check_keys(sweep, set(_SWEEP_DEFAULTS), "sweep")
    for k in sweep["kinds"]:
        if k not in ("dae", "vae", "macdae"):
            raise ConfigError(f"unknown sweep model kind {k!r}", field="sweep.kinds")

    output = output_override or merged.get("output") or f"runs/{merged.get('name', 'default')}"
    out_path = Path(output)
    if not out_path.is_absolute() and output_override is None:
        out_path = (Path(base_dir) / out_path).resolve()
    return ExperimentConfig(
        name=str(merged.get("name", Path(data_cfg.path).stem)),
        seed=seed,
        data=data_cfg,
        pretrain=pretrain_cfg,
        ranker=ranker_cfg,
        evaluation=eval_cfg,
        ablation_groups=tuple(abl.get("groups", ())),
        sweep_heads=tuple(_int(h, "sweep.heads", 1) for h in sweep["heads"]),
        sweep_kinds=tuple(sweep["kinds"]),
        output=str(out_path),
        preset=preset,
        split_seed=seed + SEED_OFFSETS["split"],
        embedding_seed=seed + SEED_OFFSETS["embedding"],
    )


def load_config(path, **overrides):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", field="config")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", field="config") from None
    return parse_config(raw, base_dir=path.parent, **overrides)
