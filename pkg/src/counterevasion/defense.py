"""The defender: proactive training of anticipatory trees and majority-vote
detection that always keeps the original detector as first line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import MALICIOUS, ConstraintSet, Dataset, SchemaMismatch
from .dtree import DecisionTree, TrainParams
from .evasion import MANIPULATIONS, STRATEGIES, adaptation_rounds


@dataclass(frozen=True)
class DefenseConfig:
    strategy: str = "full"
    manipulation: str = "F1"
    rounds: int = 0
    constraints: ConstraintSet | None = None
    train_params: TrainParams = TrainParams()
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.manipulation not in MANIPULATIONS:
            raise ValueError(f"unknown manipulation {self.manipulation!r}")
        if self.rounds < 0:
            raise ValueError("gamma must be >= 0")

    def provenance(self) -> dict:
        return {
            "strategy": self.strategy,
            "manipulation": self.manipulation,
            "gamma": self.rounds,
            "seed": self.seed,
            "train_params": self.train_params.to_dict(),
        }


def proactive_train(m0: DecisionTree, d0_dag: Dataset, cfg: DefenseConfig) -> list[DecisionTree]:
    """Self-attack ``d0_dag`` for ``cfg.rounds`` rounds, training one tree per round."""
    if cfg.rounds == 0:
        return []
    if m0.schema != d0_dag.schema:
        raise SchemaMismatch("model and data schemas differ")
    constraints = cfg.constraints or ConstraintSet(d0_dag.schema)
    rounds = adaptation_rounds(
        m0, d0_dag, cfg.strategy, cfg.manipulation, cfg.rounds, constraints,
        cfg.train_params, cfg.seed, "defense", retrain_last=True,
    )
    return [r.model for r in rounds]


@dataclass(frozen=True, eq=False)
class Ensemble:
    m0: DecisionTree
    proactive: tuple[DecisionTree, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "proactive", tuple(self.proactive))
        for t in self.proactive:
            if t.schema != self.m0.schema:
                raise SchemaMismatch("ensemble trees must share one schema")

    @property
    def gamma(self) -> int:
        return len(self.proactive)

    def prefix(self, gamma: int) -> "Ensemble":
        """The ensemble a shorter proactive run with the same seed would give."""
        prov = dict(self.provenance, gamma=gamma)
        return Ensemble(self.m0, self.proactive[:gamma], prov)

    def to_json(self) -> str:
        return json.dumps(
            {
                "m0": self.m0.to_dict(),
                "proactive": [t.to_dict() for t in self.proactive],
                "provenance": self.provenance,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        d = json.loads(text)
        m0 = DecisionTree.from_dict(d["m0"])
        return cls(m0, tuple(DecisionTree.from_dict(t, m0.schema) for t in d["proactive"]), d.get("provenance", {}))


def build_ensemble(m0: DecisionTree, d0_dag: Dataset, cfg: DefenseConfig) -> Ensemble:
    return Ensemble(m0, tuple(proactive_train(m0, d0_dag, cfg)), cfg.provenance())


def vote_threshold(gamma: int) -> int:
    return (gamma + 1) // 2 + 1


def vote_decision(votes: np.ndarray) -> np.ndarray:
    """Decision per row of a ``(n, gamma+1)`` malicious-vote matrix whose
    first column is the original detector."""
    votes = np.asarray(votes, dtype=bool)
    if votes.ndim == 1:
        votes = votes[None, :]
    gamma = votes.shape[1] - 1
    return votes[:, 0] | (votes.sum(axis=1) >= vote_threshold(gamma))


def proactive_detect(ens: Ensemble, data: Dataset) -> tuple[set[str], np.ndarray]:
    """Ids flagged malicious plus the per-vector vote matrix (column 0 = M_0)."""
    if data.schema != ens.m0.schema:
        raise SchemaMismatch("data schema differs from ensemble schema")
    votes = np.column_stack([t.predict(data.X) == MALICIOUS for t in (ens.m0, *ens.proactive)])
    flagged = vote_decision(votes)
    return {data.ids[i] for i in np.flatnonzero(flagged)}, votes


def detect_labels(ens: Ensemble, data: Dataset) -> np.ndarray:
    """Predicted label codes under proactive detection, row-aligned with ``data``."""
    _, votes = proactive_detect(ens, data)
    return np.where(vote_decision(votes), MALICIOUS, 0).astype(np.int8)
