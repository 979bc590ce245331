#!/usr/bin/python

"""Built-in model and attack presets, looked up by name"""

import copy
import logging
import yaml

from gnnworkbench.utils.attacks import AttackConfig
from gnnworkbench.utils.common import ConfigError
from gnnworkbench.utils.gnn import ModelConfig

logger = logging.getLogger("gnnworkbench")

# This has to be a YAML string so
# it's important it starts with no indentation
MODEL_PRESETS: dict = yaml.safe_load(
    """
gcn-untuned:
  kind: GCN
  hidden: [16]
  dropout: 0.5
  patience: 50
  lr: 0.01
  weight_decay: 0.0005
gcn:
  kind: GCN
  hidden: [64]
  dropout: 0.9
  patience: 50
  lr: 0.01
  weight_decay: 0.001
jaccard-gcn-untuned:
  kind: JaccardGCN
  hidden: [16]
  dropout: 0.5
  jaccard_eps: 0.0
  patience: 200
  lr: 0.01
  weight_decay: 0.0005
jaccard-gcn:
  kind: JaccardGCN
  hidden: [64]
  dropout: 0.9
  jaccard_eps: 0.0
  patience: 50
  lr: 0.01
  weight_decay: 0.001
svd-gcn-untuned:
  kind: SvdGCN
  hidden: [16]
  dropout: 0.5
  rank: 50
  patience: 200
  lr: 0.01
  weight_decay: 0.0005
svd-gcn:
  kind: SvdGCN
  hidden: [64]
  dropout: 0.9
  rank: 50
  patience: 50
  lr: 0.01
  weight_decay: 0.001
rgcn-untuned:
  kind: RGCN
  hidden: [16]
  dropout: 0.6
  var_eps: 1.0e-8
  gamma: 1.0
  beta: 0.0005
  patience: 50
  lr: 0.01
  weight_decay: 0.0005
rgcn:
  kind: RGCN
  hidden: [32]
  dropout: 0.6
  var_eps: 1.0e-8
  gamma: 1.0
  beta: 0.0005
  patience: 50
  lr: 0.01
  weight_decay: 0.01
gnnguard:
  kind: GNNGuard
  hidden: [16]
  dropout: 0.5
  guard_eps: 1.0e-6
  max_epochs: 81
  patience: null
  lr: 0.01
  weight_decay: 0.0005
soft-median-gdc:
  kind: SoftMedianGDC
  hidden: [64]
  dropout: 0.5
  topk: 64
  ppr_alpha: 0.15
  temperature: 0.5
  patience: 50
  lr: 0.01
  weight_decay: 0.001
soft-median-gdc-citeseer:
  kind: SoftMedianGDC
  hidden: [64]
  dropout: 0.5
  topk: 64
  ppr_alpha: 0.25
  temperature: 0.5
  patience: 50
  lr: 0.01
  weight_decay: 0.001
mlp:
  kind: MLP
  hidden: [64]
  dropout: 0.5
  patience: 50
  lr: 0.01
  weight_decay: 0.001
"""
)

# GNNGuard was not improved by tuning; both names resolve to the same row
MODEL_PRESETS["gnnguard-untuned"] = MODEL_PRESETS["gnnguard"]
MODEL_PRESETS["soft-median-gdc-untuned"] = MODEL_PRESETS["soft-median-gdc"]

ATTACK_PRESETS: dict = yaml.safe_load(
    """
fga:
  algorithm: fga
  loss: TLM
pgd:
  algorithm: pgd
  loss: TLM
  iterations: 200
  samples: 100
  base_lr: 0.1
greedy-meta:
  algorithm: greedy_meta
  loss: TLM
  meta_lr: 1.0
  meta_epochs: 100
meta-pgd:
  algorithm: meta_pgd
  loss: TLM
  iterations: 200
  samples: 100
  base_lr: 0.01
  grad_clip: 1.0
  meta_lr: 1.0
  meta_epochs: 100
brute-force:
  algorithm: brute_force
  loss: TLM
"""
)

# the global attack ensemble run against the untuned GCN for non-adaptive transfer
BASELINE_ATTACKS = ("fga", "pgd", "greedy-meta", "meta-pgd")


def _lookup(presets: dict, name: str, what: str) -> dict:
    key = name.strip().lower().replace("_", "-")
    if key not in presets:
        raise ConfigError(
            f"Unknown {what} preset '{name}'. Built-in presets: {', '.join(sorted(presets))}"
        )
    logger.debug(f"Loading built-in {what} preset '{key}'")
    return copy.deepcopy(presets[key])


def model_config(preset: str, overrides: dict = None) -> ModelConfig:
    """Build a ModelConfig from a built-in preset, overridden key by key

    Args:
        preset (str): preset name, e.g. 'svd-gcn' or 'gcn-untuned'
        overrides (dict): ModelConfig fields to replace

    Returns:
        ModelConfig: the validated configuration
    """
    d = _lookup(MODEL_PRESETS, preset, "model")
    d.update(overrides or {})
    return ModelConfig.from_dict(d)


def attack_config(preset: str, overrides: dict = None) -> AttackConfig:
    d = _lookup(ATTACK_PRESETS, preset, "attack")
    d.update(overrides or {})
    return AttackConfig.from_dict(d)


def is_untuned(preset: str) -> bool:
    return preset.strip().lower().endswith("-untuned")
