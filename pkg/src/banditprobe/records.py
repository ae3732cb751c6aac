"""Trial and run logs, and their CSV representation."""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .bandit import Choice, RewardStructure, structure_from_label

COLUMNS = (
    "condition_id",
    "agent",
    "reward_structure",
    "temperature",
    "top_p",
    "run_id",
    "trial",
    "choice",
    "reward",
    "raw_token",
    "valid",
)


class LogParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    choice: Choice
    reward: int
    raw_token: str = ""

    @property
    def valid(self) -> bool:
        return self.choice.is_valid


@dataclass
class RunLog:
    condition_id: str
    run_id: int
    structure: RewardStructure
    agent: str = ""
    temperature: Optional[float] = None
    top_p: Optional[float] = None
    trials: list = field(default_factory=list)
    # generative (A, tau) for synthetic RW participants
    true_params: Optional[tuple] = None

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def choices(self) -> list:
        return [t.choice for t in self.trials]

    @property
    def rewards(self) -> list:
        return [t.reward for t in self.trials]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def iter_rows(run: RunLog):
    for rec in run.trials:
        yield {
            "condition_id": run.condition_id,
            "agent": run.agent,
            "reward_structure": run.structure.log_label,
            "temperature": _fmt(run.temperature),
            "top_p": _fmt(run.top_p),
            "run_id": str(run.run_id),
            "trial": str(rec.trial),
            "choice": rec.choice.value,
            "reward": str(rec.reward),
            "raw_token": rec.raw_token,
            "valid": "1" if rec.valid else "0",
        }


def write_runs(path, runs: Iterable[RunLog]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for run in runs:
            writer.writerows(iter_rows(run))


def read_runs(path) -> list:
    """Parse a run-log CSV back into RunLogs, validating trial numbering."""
    path = Path(path)
    runs: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise LogParseError(path, 1, f"missing columns {sorted(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                key = (row["condition_id"], int(row["run_id"]))
                choice = Choice.parse_label(row["choice"])
                reward = int(row["reward"])
                trial = int(row["trial"])
                valid = row["valid"] == "1"
                structure = structure_from_label(row["reward_structure"])
                temperature = float(row["temperature"]) if row["temperature"] else None
                top_p = float(row["top_p"]) if row["top_p"] else None
            except (KeyError, ValueError, TypeError) as exc:
                raise LogParseError(path, line, str(exc)) from None
            if reward not in (0, 1):
                raise LogParseError(path, line, f"reward must be 0 or 1, got {reward}")
            if valid != choice.is_valid:
                raise LogParseError(path, line, "valid flag disagrees with choice")
            if not valid and reward != 0:
                raise LogParseError(path, line, "invalid trial with nonzero reward")
            run = runs.get(key)
            if run is None:
                run = runs[key] = RunLog(
                    condition_id=key[0],
                    run_id=key[1],
                    structure=structure,
                    agent=row["agent"],
                    temperature=temperature,
                    top_p=top_p,
                )
            if trial != len(run.trials) + 1:
                raise LogParseError(path, line, f"run {key[1]}: expected trial {len(run.trials) + 1}, got {trial}")
            run.trials.append(TrialRecord(trial, choice, reward, row["raw_token"]))
    return list(runs.values())
