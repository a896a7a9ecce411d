"""Tabular softmax strategist with closed-form gradients.

Each context key owns one row of logits over the strategy vocabulary. Rows
that were never updated read as all-zero (uniform) without being stored, so
reads never mutate the table.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from epo.backends.base import StrategistContext
from epo.core import Strategy, Trajectory

if TYPE_CHECKING:
    from epo.train import UpdateBatch

HISTORY_WINDOW = 2


class GreedyModeError(ValueError):
    pass


def base_context_key(goal_id: str, observation_key: str, previous_tokens: Sequence[str | int]) -> str:
    window = [str(t) for t in previous_tokens][-HISTORY_WINDOW:]
    return f"{goal_id}|{observation_key}|{','.join(window)}"


def token_context_key(base: str, prefix: Sequence[str | int]) -> str:
    """Key for token i of a strategy, conditioned on the tokens already emitted."""
    return base if not prefix else base + "|" + ",".join(str(t) for t in prefix)


def previous_tokens(strategies: Iterable[Strategy | None]) -> list[str | int]:
    out: list[str | int] = []
    for s in strategies:
        if s is not None:
            out.extend(s.tokens)
    return out


def context_key(context: StrategistContext) -> str:
    return base_context_key(context.goal.agent_id, context.observation_key, previous_tokens(context.strategies))


def trajectory_context_keys(trajectory: Trajectory, observation_key) -> list[list[str]]:
    """Per strategist turn, the context key of every token (recomputed from the record)."""
    keys, prev = [], []
    for turn in trajectory.turns:
        if turn.strategy is None:
            continue
        base = base_context_key(trajectory.participant_id, observation_key(turn.observation.content), prev)
        toks = turn.strategy.tokens
        keys.append([token_context_key(base, toks[:i]) for i in range(len(toks))])
        prev.extend(toks)
    return keys


class ContextSoftmaxPolicy:
    def __init__(
        self,
        vocabulary: Sequence[str],
        temperature: float = 1.0,
        strategy_length: int = 1,
        logits: Mapping[str, Sequence[float]] | None = None,
        updates: int = 0,
    ):
        if temperature < 0 or not np.isfinite(temperature):
            raise ValueError(f"temperature must be >= 0, got {temperature}")
        if strategy_length < 1:
            raise ValueError("strategy_length must be >= 1")
        self.vocabulary = tuple(vocabulary)
        if len(set(self.vocabulary)) != len(self.vocabulary) or not self.vocabulary:
            raise ValueError("vocabulary must be non-empty with unique names")
        self._index = {name: i for i, name in enumerate(self.vocabulary)}
        self.temperature = float(temperature)
        self.strategy_length = strategy_length
        self._logits: dict[str, np.ndarray] = {}
        for key, row in (logits or {}).items():
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (len(self.vocabulary),) or not np.all(np.isfinite(arr)):
                raise ValueError(f"bad logits row for {key!r}")
            self._logits[key] = arr.copy()
        self._updates = updates

    # --- table access ----------------------------------------------------

    @property
    def n_tokens(self) -> int:
        return len(self.vocabulary)

    def token_id(self, token: str | int) -> int:
        if isinstance(token, int) and not isinstance(token, bool):
            if not 0 <= token < self.n_tokens:
                raise KeyError(f"token id {token} outside vocabulary of size {self.n_tokens}")
            return token
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def row(self, key: str) -> np.ndarray:
        r = self._logits.get(key)
        return np.zeros(self.n_tokens) if r is None else r.copy()

    def set_row(self, key: str, values: Sequence[float]) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (self.n_tokens,) or not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite with one entry per token")
        self._logits[key] = arr.copy()

    @property
    def rows(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._logits.items()}

    def _check_temperature(self) -> None:
        if self.temperature == 0.0:
            raise GreedyModeError("greedy mode: use greedy_decode")

    def log_softmax(self, key: str) -> np.ndarray:
        self._check_temperature()
        z = self.row(key) / self.temperature
        z = z - z.max()
        return z - np.log(np.exp(z).sum())

    def probabilities(self, key: str) -> np.ndarray:
        return np.exp(self.log_softmax(key))

    def softmax_logprob(self, key: str, token: str | int) -> float:
        return float(self.log_softmax(key)[self.token_id(token)])

    def softmax_grad(self, key: str, token: str | int) -> np.ndarray:
        """d log pi(token | key) / d logits[key]."""
        g = -self.probabilities(key)
        g[self.token_id(token)] += 1.0
        return g / self.temperature

    # --- PolicyBackend ---------------------------------------------------

    def _decode(self, context: StrategistContext, pick) -> Strategy:
        base = context_key(context)
        tokens, lps = [], []
        for _ in range(self.strategy_length):
            key = token_context_key(base, tokens)
            i, lp = pick(key)
            tokens.append(self.vocabulary[i])
            lps.append(lp)
        return Strategy(tuple(tokens), tuple(lps), " ".join(tokens))

    def sample(self, context: StrategistContext, rng: np.random.Generator) -> Strategy:
        def pick(key: str) -> tuple[int, float]:
            logp = self.log_softmax(key)
            cdf = np.cumsum(np.exp(logp))
            i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            i = min(i, self.n_tokens - 1)
            return i, float(logp[i])

        return self._decode(context, pick)

    def greedy_decode(self, context: StrategistContext) -> Strategy:
        def pick(key: str) -> tuple[int, float]:
            row = self.row(key)
            i = int(np.argmax(row))  # ties resolve to the lowest token id
            if self.temperature == 0.0:
                return i, 0.0
            return i, float(self.log_softmax(key)[i])

        return self._decode(context, pick)

    def logprobs(self, context: StrategistContext, tokens: Sequence[str | int]) -> list[float]:
        base = context_key(context)
        return [self.softmax_logprob(token_context_key(base, tokens[:i]), tok) for i, tok in enumerate(tokens)]

    def apply_gradient(self, gradient: Mapping[str, np.ndarray], step_size: float) -> str:
        """Plain gradient descent: theta <- theta - step_size * gradient."""
        for key, g in gradient.items():
            if not np.any(g):
                continue
            self._logits[key] = self.row(key) - step_size * np.asarray(g, dtype=np.float64)
        self._updates += 1
        return self.version()

    def update(self, batch: UpdateBatch, step_size: float) -> str:
        from epo.train import loss_gradient

        return self.apply_gradient(loss_gradient(batch, self), step_size)

    def version(self) -> str:
        return f"toy-v{self._updates}"

    def param_digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.vocabulary, self.temperature, self.strategy_length]).encode())
        for key in sorted(self._logits):
            row = self._logits[key] + 0.0  # folds -0.0 into 0.0
            if not np.any(row):
                continue
            h.update(key.encode())
            h.update(row.tobytes())
        return h.hexdigest()

    # --- snapshots -------------------------------------------------------

    def copy(self) -> ContextSoftmaxPolicy:
        return ContextSoftmaxPolicy(
            self.vocabulary, self.temperature, self.strategy_length, self._logits, self._updates
        )

    def to_dict(self) -> dict:
        return {
            "kind": "context_softmax",
            "vocabulary": list(self.vocabulary),
            "temperature": self.temperature,
            "strategy_length": self.strategy_length,
            "updates": self._updates,
            "logits": {k: v.tolist() for k, v in sorted(self._logits.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ContextSoftmaxPolicy:
        return cls(d["vocabulary"], d["temperature"], d.get("strategy_length", 1), d["logits"], d.get("updates", 0))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path: str | os.PathLike) -> ContextSoftmaxPolicy:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
