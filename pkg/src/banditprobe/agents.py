"""Bandit agents: reference policies, a generative RW learner, and an LLM-backed agent.

Every agent exposes ``choose(history) -> Choice`` and ``observe(choice, reward)``.
``history`` is the list of :class:`~banditprobe.records.TrialRecord` seen so far.
``last_token`` holds the raw token behind the most recent choice.
"""

from dataclasses import dataclass, replace

from ._kernels import _sigmoid
from .bandit import BanditEnv, Choice, RewardStructure
from .records import RunLog, TrialRecord
from .rng import make_generator, run_seeds
from .rw_model import GroupHyper, RWParams, transform


class Agent:
    name = "agent"
    last_token = ""

    def choose(self, history) -> Choice:
        raise NotImplementedError

    def observe(self, choice: Choice, reward: int) -> None:
        pass

    def _emit(self, choice: Choice) -> Choice:
        self.last_token = choice.value
        return choice


def _coin(u: float) -> Choice:
    return Choice.Y if u < 0.5 else Choice.X


class RandomAgent(Agent):
    name = "random"

    def __init__(self, seed: int, prime_x: bool = False):
        self._rng = make_generator(seed)
        self.prime_x = prime_x

    def choose(self, history) -> Choice:
        u = self._rng.random()
        if self.prime_x and not history:
            return self._emit(Choice.X)
        return self._emit(_coin(u))


class OracleAgent(Agent):
    """Always picks the arm with the larger true probability (X on ties)."""

    name = "oracle"

    def __init__(self, structure: RewardStructure):
        self.structure = structure

    def choose(self, history) -> Choice:
        return self._emit(self.structure.target)


class EpsilonGreedyAgent(Agent):
    name = "epsilon_greedy"

    def __init__(self, seed: int, epsilon: float = 0.1, prime_x: bool = False):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self._rng = make_generator(seed)
        self.epsilon = epsilon
        self.prime_x = prime_x

    def choose(self, history) -> Choice:
        explore = self._rng.random() < self.epsilon
        u = self._rng.random()
        if self.prime_x and not history:
            return self._emit(Choice.X)
        if explore:
            return self._emit(_coin(u))
        sums = {Choice.X: 0, Choice.Y: 0}
        counts = {Choice.X: 0, Choice.Y: 0}
        for rec in history:
            if rec.choice.is_valid:
                sums[rec.choice] += rec.reward
                counts[rec.choice] += 1
        means = {c: sums[c] / counts[c] if counts[c] else 0.0 for c in sums}
        return self._emit(Choice.Y if means[Choice.Y] > means[Choice.X] else Choice.X)


class WSLSAgent(Agent):
    """Win-stay lose-shift; opens with X."""

    name = "wsls"

    def choose(self, history) -> Choice:
        if not history or not history[-1].choice.is_valid:
            return self._emit(Choice.X)
        last = history[-1]
        if last.reward == 1:
            return self._emit(last.choice)
        return self._emit(Choice.Y if last.choice is Choice.X else Choice.X)


@dataclass(frozen=True)
class RWAgentState:
    a: float
    tau: float
    v_x: float = 0.0
    v_y: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"learning rate must lie in (0, 1), got {self.a}")
        if not 0.0 <= self.tau <= 5.0:
            raise ValueError(f"inverse temperature must lie in [0, 5], got {self.tau}")


def prob_y(state: RWAgentState) -> float:
    return _sigmoid(state.tau * (state.v_y - state.v_x))


def update(state: RWAgentState, choice: Choice, reward: int) -> RWAgentState:
    """Delta-rule step on the chosen arm; Invalid is a no-op."""
    if choice is Choice.X:
        return replace(state, v_x=state.v_x + state.a * (reward - state.v_x))
    if choice is Choice.Y:
        return replace(state, v_y=state.v_y + state.a * (reward - state.v_y))
    return state


class RWAgent(Agent):
    """Rescorla-Wagner learner with a logistic (two-arm softmax) policy.

    Draws exactly one uniform per choice, including a primed first trial, so
    its stream lines up with :func:`banditprobe.rw_model.simulate_run`.
    """

    name = "rw"

    def __init__(self, a: float, tau: float, seed: int, prime_x: bool = False):
        self.state = RWAgentState(a, tau)
        self._rng = make_generator(seed)
        self.prime_x = prime_x

    def choose(self, history) -> Choice:
        u = self._rng.random()
        if self.prime_x and not history:
            return self._emit(Choice.X)
        return self._emit(Choice.Y if u < prob_y(self.state) else Choice.X)

    def observe(self, choice: Choice, reward: int) -> None:
        self.state = update(self.state, choice, reward)


class LLMAgent(Agent):
    """Delegates each choice to a chat model via :class:`banditprobe.llm.ChatClient`."""

    name = "llm"

    def __init__(self, client, decoding):
        self.client = client
        self.decoding = decoding
        self.exchanges = []

    def choose(self, history) -> Choice:
        from .llm import render_prompt

        prompt = render_prompt(history, len(history) + 1)
        exchange = self.client.complete_or_invalid(self.decoding, prompt)
        self.exchanges.append(exchange)
        self.last_token = exchange.raw_response
        return exchange.parsed


def play(agent: Agent, env: BanditEnv, n_trials: int) -> list:
    """Run one session and return its trial records."""
    history = []
    for t in range(1, n_trials + 1):
        choice = agent.choose(history)
        reward = env.draw_reward(choice)
        agent.observe(choice, reward)
        history.append(TrialRecord(t, choice, reward, agent.last_token))
    return history


@dataclass(frozen=True)
class CohortSpec:
    hyper: GroupHyper
    n_runs: int
    n_trials: int
    structure: RewardStructure
    prime_x: bool = False
    condition_id: str = "cohort"

    def __post_init__(self):
        if self.n_runs < 0 or self.n_trials < 1:
            raise ValueError(f"need n_runs >= 0 and n_trials >= 1, got {self.n_runs}, {self.n_trials}")


def draw_cohort_params(spec: CohortSpec, env_seed: int) -> list:
    rng = make_generator(env_seed, spec.condition_id, "latents")
    z = rng.standard_normal((2, spec.n_runs))
    a, tau = transform(spec.hyper, z[0], z[1])
    return [RWParams(float(x), float(y)) for x, y in zip(a, tau)]


def simulate_cohort(spec: CohortSpec, env_seed: int) -> list:
    """Synthetic RW participants drawn from the hierarchy, one RunLog each.

    Run ``i`` is seeded exactly like run ``i`` of an orchestrated condition with
    ``master_seed = env_seed``; its generative parameters sit in ``true_params``.
    """
    runs = []
    for i, p in enumerate(draw_cohort_params(spec, env_seed)):
        env_seed_i, agent_seed_i = run_seeds(env_seed, spec.condition_id, i)
        agent = RWAgent(p.a, p.tau, agent_seed_i, spec.prime_x)
        env = BanditEnv(spec.structure, env_seed_i)
        runs.append(RunLog(
            condition_id=spec.condition_id,
            run_id=i,
            structure=spec.structure,
            agent="rw",
            trials=play(agent, env, spec.n_trials),
            true_params=(p.a, p.tau),
        ))
    return runs


def make_agent(kind: str, *, seed: int, structure: RewardStructure, **params) -> Agent:
    """Factory for synthetic agents by kind name."""
    if kind == "random":
        return RandomAgent(seed, prime_x=params.get("prime_x", False))
    if kind == "oracle":
        return OracleAgent(structure)
    if kind == "epsilon_greedy":
        return EpsilonGreedyAgent(seed, params.get("epsilon", 0.1), params.get("prime_x", False))
    if kind == "wsls":
        return WSLSAgent()
    if kind == "rw":
        return RWAgent(params["a"], params["tau"], seed, params.get("prime_x", False))
    raise ValueError(f"unknown agent kind {kind!r}")
