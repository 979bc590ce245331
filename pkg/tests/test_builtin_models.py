import pytest

from gnnworkbench.utils.builtin_models import (
    ATTACK_PRESETS,
    BASELINE_ATTACKS,
    MODEL_PRESETS,
    attack_config,
    is_untuned,
    model_config,
)
from gnnworkbench.utils.common import ConfigError


@pytest.mark.parametrize("name", sorted(MODEL_PRESETS))
def test_every_model_preset_is_valid(name):
    assert model_config(name).kind in (
        "GCN", "MLP", "JaccardGCN", "SvdGCN", "RGCN", "GNNGuard", "SoftMedianGDC",
    )


@pytest.mark.parametrize("name", sorted(ATTACK_PRESETS))
def test_every_attack_preset_is_valid(name):
    assert attack_config(name).loss == "TLM"


def test_lookup_is_forgiving_about_spelling():
    assert model_config(" SVD_GCN ").kind == "SvdGCN"
    assert attack_config("Greedy_Meta").algorithm == "greedy_meta"


def test_untuned_and_tuned_rows():
    untuned, tuned = model_config("gcn-untuned"), model_config("gcn")
    assert (untuned.hidden, untuned.dropout) == ([16], 0.5)
    assert (tuned.hidden, tuned.dropout, tuned.weight_decay) == ([64], 0.9, 1e-3)
    assert model_config("gnnguard-untuned") == model_config("gnnguard")
    guard = model_config("gnnguard")
    assert (guard.max_epochs, guard.patience) == (81, None)
    assert model_config("soft-median-gdc-citeseer").ppr_alpha == 0.25
    assert is_untuned("rgcn-untuned") and not is_untuned("rgcn")


def test_overrides():
    assert model_config("gcn", {"hidden": [8]}).hidden == [8]
    assert attack_config("pgd", {"iterations": 5}).iterations == 5
    with pytest.raises(ConfigError, match="Unknown model config keys"):
        model_config("gcn", {"depth": 3})


def test_unknown_presets():
    with pytest.raises(ConfigError, match="Built-in presets"):
        model_config("gat")
    with pytest.raises(ConfigError):
        attack_config("nettack")


def test_baseline_attacks_are_presets():
    assert set(BASELINE_ATTACKS) <= set(ATTACK_PRESETS)
