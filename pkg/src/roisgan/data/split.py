"""Reproducible train/validation/test partitioning.

The shuffle uses xoshiro256** seeded through SplitMix64 so the partition is
pinned independently of numpy's generator versions:

* SplitMix64: ``state += 0x9E3779B97F4A7C15``; ``z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9``;
  ``z = (z ^ (z >> 27)) * 0x94D049BB133111EB``; ``z ^ (z >> 31)``.  Four outputs
  fill the xoshiro state.
* xoshiro256**: ``result = rotl(s1 * 5, 7) * 9``, then the standard
  ``t = s1 << 17`` state update with ``rotl(s3, 45)``.
* Fisher-Yates from the last index down; bounded draws use rejection on the
  top of the 64-bit range so they are unbiased.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 64-bit generator."""

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next()
            if r < limit:
                return r % n


def shuffled(items: Sequence, seed: int) -> list:
    out = list(items)
    rng = Xoshiro256(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.80
    val: float = 0.05
    test: float = 0.15
    seed: int = 42

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be non-negative")
        if not math.isclose(self.train + self.val + self.test, 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {self.train + self.val + self.test}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """(train, val, test) sizes: rounded fractions, at least one validation and one test item."""
    if n < 3:
        raise ValueError(f"need at least 3 items to split, got {n}")
    n_train = min(_round_half_up(spec.train * n), n - 2)
    n_val = max(1, _round_half_up(spec.val * n))
    n_val = min(n_val, n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def split_dataset(ids: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[list, list, list]:
    """Seeded shuffle followed by contiguous train/val/test slices."""
    if len(ids) == 0:
        raise ValueError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    n_train, n_val, _ = split_sizes(len(ids), spec)
    order = shuffled(ids, spec.seed)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
