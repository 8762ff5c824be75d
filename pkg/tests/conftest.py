import pytest

from specverify.models import ModelPairSpec, generate_model_pair


@pytest.fixture
def small_pair():
    """V=3, depth 4 pair with a moderate draft/target gap."""
    spec = ModelPairSpec(vocab_size=3, max_depth=4, seed=101, divergence_knob=0.8, concentration=1.2)
    return generate_model_pair(spec)


@pytest.fixture
def identical_pair():
    """Draft and target bit-identical (zero divergence knob)."""
    spec = ModelPairSpec(vocab_size=3, max_depth=4, seed=101, divergence_knob=0.0, concentration=1.2)
    return generate_model_pair(spec)


def pair_for(seed, vocab=3, depth=4, eps=0.8, conc=1.2):
    return generate_model_pair(
        ModelPairSpec(vocab_size=vocab, max_depth=depth, seed=seed, divergence_knob=eps, concentration=conc)
    )
