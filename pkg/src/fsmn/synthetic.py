"""Synthetic corpora with a known long-range dependency.

Every sentence has ``length`` symbols. The first ``lag`` are drawn uniformly
from ``num_symbols`` symbols; each later symbol is a fixed permutation of the
symbol ``lag`` positions earlier. Seen from any position the symbols in
between are independent uniform noise, so a model limited to the previous
few words cannot do better than chance on the deterministic positions.

Symbols are ids ``3 .. 3 + num_symbols - 1`` (after the reserved tokens).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EOS_ID, RESERVED


@dataclass(frozen=True)
class LagCopyGenerator:
    num_symbols: int = 8
    lag: int = 10
    length: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.length <= self.lag:
            raise ValueError("sentence length must exceed the lag")

    @property
    def vocab_size(self) -> int:
        return len(RESERVED) + self.num_symbols

    def permutation(self) -> np.ndarray:
        return np.random.default_rng([self.seed, 0]).permutation(self.num_symbols)

    def sentences(self, num_tokens: int, stream: int) -> list[np.ndarray]:
        """About ``num_tokens`` words (EOS not counted) of i.i.d. sentences.

        Different ``stream`` values give independent corpora (train/valid/test).
        """
        rng = np.random.default_rng([self.seed, 1, stream])
        perm = self.permutation()
        out = []
        for _ in range(max(1, num_tokens // self.length)):
            sym = np.empty(self.length, dtype=np.int64)
            sym[: self.lag] = rng.integers(0, self.num_symbols, size=self.lag)
            for t in range(self.lag, self.length):
                sym[t] = perm[sym[t - self.lag]]
            out.append(np.append(sym + len(RESERVED), EOS_ID))
        return out

    def entropy_per_position(self) -> float:
        """Conditional entropy (nats) per prediction position given the full history.

        Only the first ``lag`` words carry information; the remaining words
        and the EOS (fixed sentence length) are determined by the past.
        """
        return self.lag * math.log(self.num_symbols) / (self.length + 1)

    def perplexity_bound(self) -> float:
        return math.exp(self.entropy_per_position())
