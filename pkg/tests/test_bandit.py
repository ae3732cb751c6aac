import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from banditprobe.bandit import (
    PRESETS,
    BanditEnv,
    Choice,
    RewardStructure,
    draw_reward,
    preset,
    structure_from_label,
)


def test_presets_match_published_probabilities():
    assert (preset("symmetric").p_x, preset("symmetric").p_y) == (0.25, 0.25)
    assert (preset("asymmetric").p_x, preset("asymmetric").p_y) == (0.75, 0.25)


def test_unknown_preset_rejected():
    with pytest.raises(KeyError):
        preset("banana")


@pytest.mark.parametrize("px,py", [(-0.1, 0.5), (0.5, 1.1), (math.nan, 0.2)])
def test_probabilities_validated(px, py):
    with pytest.raises(ValueError):
        RewardStructure(px, py)


def test_degenerate_arm():
    env = BanditEnv(RewardStructure(1.0, 0.0), seed=1)
    assert draw_reward(env, Choice.X) == 1
    assert draw_reward(env, Choice.Y) == 0


def test_invalid_gives_zero_without_consuming_rng():
    env = BanditEnv(preset("asymmetric"), seed=3)
    for _ in range(5):
        assert env.draw_reward(Choice.INVALID) == 0
    assert env.n_draws == 0


def test_law_of_large_numbers_on_x():
    env = BanditEnv(preset("asymmetric"), seed=11)
    draws = [env.draw_reward(Choice.X) for _ in range(100_000)]
    assert 0.74 <= np.mean(draws) <= 0.76


@pytest.mark.parametrize("p", [0.25, 0.75, 0.5])
def test_marginal_correctness_bound(p):
    m = 100_000
    env = BanditEnv(RewardStructure(p, p), seed=int(p * 100))
    mean = np.mean([env.draw_reward(Choice.Y) for _ in range(m)])
    assert abs(mean - p) < 4 * math.sqrt(p * (1 - p) / m)


def test_auto_label_roundtrip():
    s = RewardStructure(0.6, 0.4)
    assert structure_from_label(s.label) == s
    assert structure_from_label("asymmetric") == PRESETS["asymmetric"]
    with pytest.raises(KeyError):
        structure_from_label("nope")


def test_symmetric_target_is_x_by_convention():
    assert preset("symmetric").target is Choice.X
    assert RewardStructure(0.2, 0.7).target is Choice.Y


choice_seqs = st.lists(st.sampled_from([Choice.X, Choice.Y]), min_size=1, max_size=60)


@given(st.integers(0, 2**32), choice_seqs)
def test_determinism(seed, seq):
    a = BanditEnv(preset("asymmetric"), seed)
    b = BanditEnv(preset("asymmetric"), seed)
    assert [a.draw_reward(c) for c in seq] == [b.draw_reward(c) for c in seq]


@given(st.integers(0, 2**32), choice_seqs, st.lists(st.booleans(), min_size=60, max_size=60))
def test_invalid_neutrality(seed, seq, mask):
    plain = BanditEnv(preset("symmetric"), seed)
    mixed = BanditEnv(preset("symmetric"), seed)
    expected = [plain.draw_reward(c) for c in seq]
    got = []
    for c, inject in zip(seq, mask):
        if inject:
            assert mixed.draw_reward(Choice.INVALID) == 0
        got.append(mixed.draw_reward(c))
    assert got == expected


@given(st.integers(0, 2**32), st.sampled_from(list(Choice)))
def test_reward_binary(seed, choice):
    assert BanditEnv(preset("asymmetric"), seed).draw_reward(choice) in (0, 1)
