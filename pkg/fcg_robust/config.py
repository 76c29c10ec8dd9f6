"""Run configuration files.

A run configuration is a JSON object with optional sections::

    {
        "seed": 0,
        "extract": {"features": "meta,ldp", "llm_dim": 64},
        "collate": {"scheme": "zero"},
        "model": {"backbone": "gin", "layers": 3, "hidden": 64},
        "train": {"epochs": 100, "lr": 0.01},
        "adapt": {"method": "t3a", "support_size": 100},
        "bench": {"per_class": 1000, "synthetic": {"families": 5}},
        "io": {"progress": false}
    }

Missing keys take their defaults. Every violation (unknown section or key,
bad value) is collected and reported in a single
:py:class:`~fcg_robust.errors.ConfigError`.
"""

import copy

import hashlib

import io

import json

import logging

from collections import OrderedDict

from six import iteritems

from fcg_robust.adapt import AdaptConfig

from fcg_robust.collate import SCHEMES

from fcg_robust.errors import ConfigError

from fcg_robust.extract import DEFAULT_LLM_DIM, FeatureConfig

from fcg_robust.gnn import ModelConfig

from fcg_robust.synthetic import SyntheticConfig

from fcg_robust.train import TrainConfig


logger = logging.getLogger(__name__)

"""Default values of every section (``model.input_dim`` and
``model.classes`` default to what the data dictates)."""
DEFAULTS = OrderedDict([
    ("seed", 0),
    ("extract", OrderedDict([("features", "meta,ldp"),
                             ("llm_dim", DEFAULT_LLM_DIM)])),
    ("collate", OrderedDict([("scheme", "zero")])),
    ("model", OrderedDict([("backbone", "gin"), ("layers", 3),
                           ("hidden", 64), ("input_dim", None),
                           ("classes", None), ("gin_epsilon", 0.0),
                           ("norm", "batch"), ("dropout", 0.0),
                           ("readout", "max"), ("directed", False)])),
    ("train", TrainConfig().to_json()),
    ("adapt", AdaptConfig().to_json()),
    ("bench", OrderedDict([("per_class", 1000), ("max_nodes", 5000),
                           ("synthetic", SyntheticConfig().to_json())])),
    ("io", OrderedDict([("progress", False), ("batch_size", 64)])),
])


def _merge(defaults, overrides, path, violations):
    out = copy.deepcopy(defaults)
    if not isinstance(overrides, dict):
        violations.append("{} must be an object".format(path))
        return out
    for key, value in iteritems(overrides):
        name = "{}.{}".format(path, key) if path else key
        if key not in defaults:
            violations.append("unknown key {}".format(name))
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, name, violations)
        else:
            out[key] = value
    return out


def _collect(violations, build):
    try:
        return build()
    except ConfigError as e:
        violations.extend(e.violations)
    except (TypeError, ValueError) as e:
        violations.append(str(e))


class RunConfig(object):
    """A validated run configuration.

    Attributes
    ----------
    values : OrderedDict
        The resolved configuration (defaults filled in).
    """

    def __init__(self, values):
        self.values = values

    @classmethod
    def from_dict(cls, d):
        violations = []
        values = _merge(DEFAULTS, d, "", violations)
        if not isinstance(values["seed"], int) or values["seed"] < 0:
            violations.append("seed must be a non-negative integer")
        # Sections without their own seed inherit the global one.
        for section, given in ((values["train"], d.get("train")),
                               (values["adapt"], d.get("adapt")),
                               (values["bench"]["synthetic"],
                                (d.get("bench") or {}).get("synthetic"))):
            if not isinstance(given, dict) or "seed" not in given:
                section["seed"] = values["seed"]

        extract = values["extract"]
        _collect(violations, lambda: FeatureConfig.parse(
            extract["features"], extract["llm_dim"]))
        if values["collate"]["scheme"] not in SCHEMES:
            violations.append("collate.scheme must be one of {}".format(
                SCHEMES))

        model = dict(values["model"])
        if model["input_dim"] is None:
            model["input_dim"] = 1
        if model["classes"] is None:
            model["classes"] = 2
        _collect(violations, lambda: ModelConfig(**model))
        _collect(violations, lambda: TrainConfig(**values["train"]))
        _collect(violations, lambda: AdaptConfig(**values["adapt"]))

        bench = values["bench"]
        for name in ("per_class", "max_nodes"):
            if not isinstance(bench[name], int) or bench[name] < 1:
                violations.append("bench.{} must be a positive integer"
                                  .format(name))
        _collect(violations, lambda: SyntheticConfig(**bench["synthetic"]))
        if not isinstance(values["io"]["batch_size"], int) or \
                values["io"]["batch_size"] < 1:
            violations.append("io.batch_size must be a positive integer")

        if violations:
            raise ConfigError(violations)
        return cls(values)

    @classmethod
    def from_json(cls, path):
        try:
            with io.open(path, "r", encoding="utf-8") as f:
                d = json.load(f, object_pairs_hook=OrderedDict)
        except (IOError, OSError) as e:
            raise ConfigError(["cannot read {}: {}".format(path, e)])
        except ValueError as e:
            raise ConfigError(["{} is not valid JSON: {}".format(path, e)])
        return cls.from_dict(d)

    @classmethod
    def default(cls):
        return cls.from_dict({})

    def to_json(self):
        return copy.deepcopy(self.values)

    def dumps(self):
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        """SHA-256 hex digest of the canonical JSON of the configuration."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def progress(self):
        return bool(self.values["io"]["progress"])

    @property
    def batch_size(self):
        return self.values["io"]["batch_size"]

    @property
    def scheme(self):
        return self.values["collate"]["scheme"]

    def feature_config(self):
        extract = self.values["extract"]
        return FeatureConfig.parse(extract["features"], extract["llm_dim"])

    def model_config(self, input_dim=None, classes=None):
        """The model section, with data-dependent fields filled in."""
        model = dict(self.values["model"])
        if model["input_dim"] is None:
            model["input_dim"] = input_dim
        if model["classes"] is None:
            model["classes"] = classes
        return ModelConfig(**model)

    def train_config(self):
        return TrainConfig(**self.values["train"])

    def adapt_config(self, method=None):
        adapt = dict(self.values["adapt"])
        if method is not None:
            adapt["method"] = method
        return AdaptConfig(**adapt)

    def synthetic_config(self):
        return SyntheticConfig(**self.values["bench"]["synthetic"])
