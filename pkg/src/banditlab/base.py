"""Shared policy plumbing: the harness-facing protocol and tiny helpers."""

from __future__ import annotations

import numpy as np

from .envs import Environment, FeedbackEvent

__all__ = ["Policy", "argmax_lowest_id", "gap_confidence"]


def argmax_lowest_id(scores: np.ndarray, ids) -> int:
    """Index of the max score; exact ties go to the lowest arm id."""
    ids = np.asarray(ids)
    mask = scores == scores.max()
    winner = ids[mask].min()
    return int(winner)


def gap_confidence(t) -> np.ndarray:
    """Per-user confidence width f(T) = sqrt((1 + ln(1+T)) / (1+T)).

    Drives every estimate-gap test for edge deletion / cluster splitting.
    Accepts scalars or arrays.
    """
    t = np.asarray(t, dtype=float)
    return np.sqrt((1.0 + np.log1p(t)) / (1.0 + t))


class Policy:
    """Base class for all policies.

    Scalar-reward protocol: ``select`` then ``observe``.  Dueling policies
    implement ``select_pair`` instead of ``select``; conversational ones
    additionally implement ``conversations`` / ``select_key`` /
    ``observe_key`` and are driven before the arm choice each round.

    Concrete classes set ``name`` (registry key) and ``kinds`` (environment
    kinds they accept); construction is ``cls(env, rng, **params)``.
    """

    name: str = ""
    kinds: tuple = ()

    def __init__(self, env: Environment, rng: np.random.Generator | None = None):
        self.env = env
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def select(self, t: int, user: int, arm_ids) -> int:
        raise NotImplementedError

    def observe(self, event: FeedbackEvent) -> None:
        raise NotImplementedError
