"""Two-arm Bernoulli bandit environment."""

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .rng import make_generator


class Choice(str, Enum):
    X = "X"
    Y = "Y"
    INVALID = "Invalid"

    @property
    def is_valid(self) -> bool:
        return self is not Choice.INVALID

    @classmethod
    def parse_label(cls, label: str) -> "Choice":
        for c in cls:
            if c.value == label:
                return c
        raise ValueError(f"unknown choice label {label!r}")


@dataclass(frozen=True)
class RewardStructure:
    p_x: float
    p_y: float
    label: str = ""

    def __post_init__(self):
        for name in ("p_x", "p_y"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not self.label:
            object.__setattr__(self, "label", self.auto_label)

    @property
    def auto_label(self) -> str:
        return f"p{float(self.p_x)!r}_{float(self.p_y)!r}"

    @property
    def log_label(self) -> str:
        """Label that :func:`structure_from_label` maps back to these probabilities."""
        known = PRESETS.get(self.label)
        if known is not None and (known.p_x, known.p_y) == (self.p_x, self.p_y):
            return self.label
        return self.auto_label

    @property
    def is_symmetric(self) -> bool:
        return self.p_x == self.p_y

    @property
    def target(self) -> Choice:
        """Higher-probability arm; X by convention under ties."""
        return Choice.Y if self.p_y > self.p_x else Choice.X

    def prob(self, choice: Choice) -> float:
        if choice is Choice.X:
            return self.p_x
        if choice is Choice.Y:
            return self.p_y
        return 0.0


PRESETS = {
    "symmetric": RewardStructure(0.25, 0.25, "symmetric"),
    "asymmetric": RewardStructure(0.75, 0.25, "asymmetric"),
}


def preset(name: str) -> RewardStructure:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown reward structure {name!r}; expected one of {sorted(PRESETS)}") from None


class BanditEnv:
    """Seeded two-arm bandit. Rewards are drawn on demand, one uniform per valid choice."""

    def __init__(self, structure: RewardStructure, seed: int):
        self.structure = structure
        self.seed = seed
        self._rng = make_generator(seed)
        self.n_draws = 0

    def draw_reward(self, choice: Choice) -> int:
        if not choice.is_valid:
            return 0
        u = self._rng.random()
        self.n_draws += 1
        return int(u < self.structure.prob(choice))

    def initial_uniforms(self, n: int) -> np.ndarray:
        """First ``n`` uniforms of this env's stream, without touching its state."""
        return make_generator(self.seed).random(n)


def structure_from_label(label: str) -> RewardStructure:
    """Inverse of ``RewardStructure.label`` for presets and auto-generated labels.

    Auto labels look like ``p0.6_0.4`` and carry full float precision.
    """
    if label in PRESETS:
        return PRESETS[label]
    m = re.fullmatch(r"p([0-9.eE+-]+)_([0-9.eE+-]+)", label)
    if m is None:
        raise KeyError(f"cannot resolve reward structure label {label!r}")
    return RewardStructure(float(m.group(1)), float(m.group(2)), label)


def draw_reward(env: BanditEnv, choice: Choice) -> int:
    return env.draw_reward(choice)
