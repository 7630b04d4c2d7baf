"""Encounter histories and the sufficient statistics they reduce to.

A history is a length-T row over {0, 1, ..., R}: 0 means not captured,
r means captured in state r.  Internally everything is 0-based in time
(occasion t is index t-1) while state labels stay 1-based in the raw
histories and become 0-based indices in the count arrays.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent encounter data."""


_SPLIT = re.compile(r"[\s,]+")


@dataclass(frozen=True)
class Dataset:
    """Observed encounter histories.

    Attributes
    ----------
    histories : ndarray of int, shape (n, T)
        One row per observed individual.
    R : int
        Number of states.
    """

    histories: np.ndarray
    R: int

    def __post_init__(self):
        h = np.asarray(self.histories, dtype=np.int64)
        if h.ndim != 2 or h.shape[0] == 0 or h.shape[1] == 0:
            raise DataError("histories must be a non-empty 2-D array")
        if self.R < 1:
            raise DataError(f"R must be positive, got {self.R}")
        if h.min() < 0 or h.max() > self.R:
            bad = h[(h < 0) | (h > self.R)][0]
            raise DataError(f"state label {bad} outside [0, {self.R}]")
        empty = np.flatnonzero(~h.any(axis=1))
        if empty.size:
            raise DataError(f"history {empty[0] + 1} is all zeros")
        h.setflags(write=False)
        object.__setattr__(self, "histories", h)

    @property
    def n(self) -> int:
        return self.histories.shape[0]

    @property
    def T(self) -> int:
        return self.histories.shape[1]

    def collapse_states(self) -> "Dataset":
        """Drop state labels, leaving a binary (R=1) dataset."""
        return Dataset((self.histories > 0).astype(np.int64), 1)

    def relabel(self, mapping) -> "Dataset":
        """Return a copy with state ``r`` renamed to ``mapping[r-1]``."""
        lut = np.concatenate([[0], np.asarray(mapping, dtype=np.int64)])
        return Dataset(lut[self.histories], self.R)

    def to_text(self) -> str:
        return "".join(" ".join(map(str, row)) + "\n" for row in self.histories)


def _parse_line(line: str, R: int) -> list[int]:
    tokens = [tok for tok in _SPLIT.split(line.strip()) if tok]
    if len(tokens) == 1 and len(tokens[0]) > 1:
        if R > 9:
            raise DataError(f"compact history {tokens[0]!r} is ambiguous with R={R}")
        tokens = list(tokens[0])
    try:
        return [int(tok) for tok in tokens]
    except ValueError as exc:
        raise DataError(f"non-integer entry in line {line!r}") from exc


def parse_dataset(text: str | Iterable[str], R: int) -> Dataset:
    """Parse encounter histories, one per line.

    Entries are separated by whitespace or commas.  A separator-free row
    such as ``100320`` is read digit by digit when ``R <= 9``.  Blank lines
    and ``#`` comments are skipped.  T is taken from the first row.
    """
    if R < 1:
        raise DataError(f"R must be positive, got {R}")
    lines = text.splitlines() if isinstance(text, str) else list(text)
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        row = _parse_line(line, R)
        if rows and len(row) != len(rows[0]):
            raise DataError(
                f"line {lineno}: expected {len(rows[0])} occasions, got {len(row)}"
            )
        for x in row:
            if not 0 <= x <= R:
                raise DataError(f"line {lineno}: state {x} outside [0, {R}]")
        if not any(row):
            raise DataError(f"line {lineno}: all-zero history")
        rows.append(row)
    if not rows:
        raise DataError("no encounter histories found")
    return Dataset(np.array(rows, dtype=np.int64), R)


def read_dataset(path, R: int) -> Dataset:
    with open(path) as fh:
        return parse_dataset(fh.read(), R)


def infer_states(text: str) -> int:
    """Largest state label in a history file (at least 1)."""
    top = 1
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            top = max(top, max(_parse_line(line, 9)))
    return top


@dataclass(frozen=True)
class SingleStateStats:
    """Reductions that ignore the state labels.

    ``schnabel[j-1]`` is the number of individuals caught on exactly j
    occasions, ``occasion_totals[t]`` and ``first_totals[t]`` the number
    caught and first caught at occasion t+1.
    """

    schnabel: np.ndarray
    occasion_totals: np.ndarray
    first_totals: np.ndarray
    n: int
    y: int
    f: int


@dataclass(frozen=True)
class SufficientStats:
    """Counts the multi-state likelihood depends on.

    Attributes
    ----------
    z : ndarray, shape (T, R)
        ``z[t, r]`` individuals first seen at occasion t in state r.
    pairs : dict
        Sparse ``(t1, t2, r, s) -> count`` of consecutive sightings: seen
        at t1 in state r and next seen at t2 > t1 in state s (0-based).
    v : ndarray, shape (T-1, R)
        ``v[t, r]`` individuals last seen at occasion t < T in state r.
    n : int
        Number of observed individuals.
    single : SingleStateStats
    """

    T: int
    R: int
    z: np.ndarray
    pairs: dict
    v: np.ndarray
    n: int
    single: SingleStateStats = field(repr=False)

    @cached_property
    def nmat(self) -> np.ndarray:
        """Dense view of ``pairs`` with shape (T-1, T, R, R)."""
        out = np.zeros((max(self.T - 1, 0), self.T, self.R, self.R), dtype=np.int64)
        for key, count in self.pairs.items():
            out[key] = count
        return out

    @cached_property
    def inflow(self) -> np.ndarray:
        """Arrivals at each (t, r): first captures plus recaptures."""
        m = self.z.copy()
        for (t1, t2, r, s), count in self.pairs.items():
            m[t2, s] += count
        return m

    @cached_property
    def pair_arrays(self) -> tuple:
        """``pairs`` as parallel index arrays ``(t1, t2, r, s, count)``."""
        if not self.pairs:
            empty = np.zeros(0, dtype=np.int64)
            return (empty,) * 5
        keys = sorted(self.pairs)
        cols = np.array(keys, dtype=np.int64).T
        counts = np.array([self.pairs[k] for k in keys], dtype=np.int64)
        return (*cols, counts)

    @cached_property
    def nonzero_cells(self) -> dict:
        """Flat indices and counts of the non-empty z, v and pair cells."""
        zf, vf = self.z.ravel(), self.v.ravel()
        zi, vi = np.flatnonzero(zf), np.flatnonzero(vf)
        t1, t2, r, s, counts = self.pair_arrays
        return {
            "z": (zi, zf[zi].astype(float)),
            "v": (vi, vf[vi].astype(float)),
            "pairs": ((t1, t2, r, s), counts.astype(float)),
        }

    @cached_property
    def last_at_end(self) -> np.ndarray:
        """Individuals whose final capture is at occasion T, by state."""
        m = self.inflow
        return m[self.T - 1].copy()

    def collapsed(self) -> "SufficientStats":
        """Statistics of the same data with state labels dropped."""
        pairs: dict = {}
        for (t1, t2, r, s), count in self.pairs.items():
            key = (t1, t2, 0, 0)
            pairs[key] = pairs.get(key, 0) + count
        return SufficientStats(
            T=self.T,
            R=1,
            z=self.z.sum(axis=1, keepdims=True),
            pairs=pairs,
            v=self.v.sum(axis=1, keepdims=True),
            n=self.n,
            single=self.single,
        )

    def to_dict(self) -> dict:
        """JSON-ready form; times and states are 1-based."""
        pairs = [
            [t1 + 1, t2 + 1, r + 1, s + 1, int(c)]
            for (t1, t2, r, s), c in sorted(self.pairs.items())
        ]
        return {
            "T": self.T,
            "R": self.R,
            "n": self.n,
            "z": self.z.tolist(),
            "pairs": pairs,
            "v": self.v.tolist(),
            "schnabel": self.single.schnabel.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "SufficientStats":
        T, R = int(doc["T"]), int(doc["R"])
        z = np.array(doc["z"], dtype=np.int64).reshape(T, R)
        v = np.array(doc["v"], dtype=np.int64).reshape(T - 1, R)
        pairs = {
            (t1 - 1, t2 - 1, r - 1, s - 1): int(c) for t1, t2, r, s, c in doc["pairs"]
        }
        n = int(doc["n"])
        m = z.copy()
        for (t1, t2, r, s), c in pairs.items():
            m[t2, s] += c
        single = _single_state(
            np.array(doc["schnabel"], dtype=np.int64), m.sum(axis=1), z.sum(axis=1), n
        )
        return cls(T=T, R=R, z=z, pairs=pairs, v=v, n=n, single=single)

    @classmethod
    def from_json(cls, text: str) -> "SufficientStats":
        return cls.from_dict(json.loads(text))


def _single_state(schnabel, occasion_totals, first_totals, n) -> SingleStateStats:
    T = len(occasion_totals)
    return SingleStateStats(
        schnabel=np.asarray(schnabel, dtype=np.int64),
        occasion_totals=np.asarray(occasion_totals, dtype=np.int64),
        first_totals=np.asarray(first_totals, dtype=np.int64),
        n=int(n),
        y=int(np.dot(np.arange(T), first_totals)),
        f=int(np.sum(occasion_totals)),
    )


def sufficient_stats(data: Dataset) -> SufficientStats:
    """Reduce a dataset to first-capture, next-capture and last-capture counts."""
    h = data.histories
    n, T = h.shape
    R = data.R
    z = np.zeros((T, R), dtype=np.int64)
    v = np.zeros((max(T - 1, 0), R), dtype=np.int64)
    pairs: dict = {}
    seen = h > 0
    for row, mask in zip(h, seen):
        times = np.flatnonzero(mask)
        z[times[0], row[times[0]] - 1] += 1
        for t1, t2 in zip(times[:-1], times[1:]):
            key = (int(t1), int(t2), int(row[t1] - 1), int(row[t2] - 1))
            pairs[key] = pairs.get(key, 0) + 1
        last = times[-1]
        if last < T - 1:
            v[last, row[last] - 1] += 1

    captures = seen.sum(axis=1)
    schnabel = np.bincount(captures, minlength=T + 1)[1:]
    single = _single_state(schnabel, seen.sum(axis=0), z.sum(axis=1), n)
    return SufficientStats(T=T, R=R, z=z, pairs=pairs, v=v, n=n, single=single)
