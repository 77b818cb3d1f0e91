"""Operator-index controls and bounded delay models.

Operator indices are 0-based throughout: a control on ``m`` operators
emits values in ``range(m)``. Iteration counters are 1-based, so the
first iterate is ``x^1`` and ``k`` starts at 1.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import ContractViolation, InvalidParameter


def almost_cyclic_check(window, m: int, M: int) -> bool:
    """True iff every length-``M`` contiguous run of ``window`` contains all of ``range(m)``."""
    if M < m:
        raise InvalidParameter(f"almost cyclicality constant M={M} is smaller than m={m}")
    seq = np.asarray(window, dtype=np.int64).ravel()
    if seq.size < M:
        raise ContractViolation(f"window of length {seq.size} is shorter than M={M}")
    if seq.size and (seq.min() < 0 or seq.max() >= m):
        raise ContractViolation(f"indices must lie in [0, {m})")
    counts = np.bincount(seq[:M], minlength=m)
    missing = int(np.count_nonzero(counts == 0))
    if missing:
        return False
    for j in range(M, seq.size):
        out, inc = seq[j - M], seq[j]
        counts[out] -= 1
        if counts[out] == 0:
            missing += 1
        if counts[inc] == 0:
            missing -= 1
        counts[inc] += 1
        if missing:
            return False
    return True


def smallest_cyclicality_constant(window, m: int) -> int | None:
    """Smallest ``M`` for which ``window`` passes :func:`almost_cyclic_check`, or None."""
    seq = np.asarray(window, dtype=np.int64).ravel()
    if seq.size < m or np.unique(seq).size < m:
        return None
    # a window must reach from each occurrence of an index to the next one,
    # and from either end of the sequence to the nearest occurrence
    worst = 0
    for i in range(m):
        pos = np.flatnonzero(seq == i)
        gaps = np.diff(np.concatenate(([-1], pos, [seq.size])))
        worst = max(worst, int(gaps.max()))
    M = max(m, worst)
    return M if M <= seq.size else None


def merge_bound(subset_sizes, max_foreign_run: int) -> int:
    """Almost cyclicality constant of a per-node cyclic merge.

    Each node cycles through its own subcollection; if at most
    ``max_foreign_run`` consecutive arrivals come from other nodes, any
    window of ``n_max * (max_foreign_run + 1)`` arrivals holds ``n_max``
    consecutive outputs of every node and thus covers every operator.
    """
    sizes = list(subset_sizes)
    m = sum(sizes)
    return max(m, max(sizes) * (int(max_foreign_run) + 1))


class ControlSequence:
    """Index stream ``i_k`` over ``m`` operators with almost cyclicality constant ``M``."""

    def __init__(self, m: int, indices, kind: str, M: int | None = None):
        self.m = int(m)
        self.kind = kind
        self._seq = np.asarray(indices, dtype=np.int64).ravel()
        if self._seq.size == 0:
            raise InvalidParameter("control needs at least one index")
        if self._seq.min() < 0 or self._seq.max() >= self.m:
            raise InvalidParameter(f"control indices must lie in [0, {self.m})")
        if M is None:
            # periodic repetition: two periods expose every wrap-around window
            M = smallest_cyclicality_constant(np.tile(self._seq, 2), self.m)
            if M is None:
                raise InvalidParameter("scripted control never visits every operator")
        if M < self.m:
            raise InvalidParameter(f"M={M} must be >= m={self.m}")
        self.M = int(M)

    @classmethod
    def cyclic(cls, m: int, order=None) -> "ControlSequence":
        order = np.arange(m) if order is None else np.asarray(order)
        if sorted(order.tolist()) != list(range(m)):
            raise InvalidParameter("cyclic order must be a permutation of range(m)")
        return cls(m, order, "cyclic", M=m)

    @classmethod
    def scripted(cls, indices, m: int, M: int | None = None) -> "ControlSequence":
        return cls(m, indices, "user-scripted", M=M)

    @classmethod
    def per_node_cyclic(cls, subsets, arrivals) -> "ControlSequence":
        """Merge per-node cyclic cursors in the order nodes deliver outputs.

        ``subsets[l]`` lists the operators stored on node ``l``; ``arrivals``
        is the node id of each delivered output. The stream is finite and
        repeats periodically past its end.
        """
        subsets = [np.asarray(s, dtype=np.int64) for s in subsets]
        m = int(sum(s.size for s in subsets))
        cursor = [0] * len(subsets)
        out = []
        for node in arrivals:
            s = subsets[node]
            out.append(int(s[cursor[node] % s.size]))
            cursor[node] += 1
        run = max_foreign_run(arrivals, len(subsets))
        M = merge_bound([s.size for s in subsets], run)
        return cls(m, out, "per-node-cyclic", M=M)

    @property
    def period(self) -> int:
        return self._seq.size

    def __call__(self, k: int) -> int:
        """Operator index for iteration ``k`` (1-based)."""
        return int(self._seq[(k - 1) % self._seq.size])

    def window(self, start: int, length: int) -> np.ndarray:
        return np.array([self(k) for k in range(start, start + length)], dtype=np.int64)


def max_foreign_run(arrivals, w: int) -> int:
    """Longest run of consecutive arrivals that excludes some node, over all nodes."""
    arr = np.asarray(arrivals, dtype=np.int64)
    worst = 0
    for node in range(w):
        pos = np.flatnonzero(arr == node)
        if pos.size == 0:
            return arr.size
        gaps = np.diff(np.concatenate(([-1], pos, [arr.size]))) - 1
        worst = max(worst, int(gaps.max()))
    return worst


class DelayModel:
    """Bounded-staleness schedule ``d(k, node)`` with hard cap ``tau``.

    Delays are clipped to ``k - 1`` so no pre-initial iterate is ever
    referenced.
    """

    def __init__(self, tau: int, kind: str, values=None, seed: int | None = None):
        if tau < 0:
            raise InvalidParameter("tau must be nonnegative")
        self.tau = int(tau)
        self.kind = kind
        self.seed = seed
        self._values = None if values is None else np.asarray(values, dtype=np.int64).ravel()
        if self._values is not None:
            if self._values.size == 0:
                raise InvalidParameter("scripted delay list is empty")
            if self._values.min() < 0 or self._values.max() > self.tau:
                raise InvalidParameter(f"scripted delays must lie in [0, {self.tau}]")
        self._rng = np.random.default_rng(seed) if kind == "uniform" else None
        self._drawn = np.empty(0, dtype=np.int64)

    @classmethod
    def zero(cls) -> "DelayModel":
        return cls(0, "zero")

    @classmethod
    def scripted(cls, values, tau: int | None = None) -> "DelayModel":
        """Delay ``values[(k - 1) % len(values)]`` at iteration ``k``."""
        values = list(values)
        return cls(max(values) if tau is None else tau, "scripted", values=values)

    @classmethod
    def uniform(cls, tau: int, seed: int = 0) -> "DelayModel":
        return cls(tau, "uniform", seed=seed)

    @classmethod
    def measured(cls, delays, tau: int) -> "DelayModel":
        """Replays delays realised by an earlier run."""
        return cls(tau, "runtime-measured", values=list(delays))

    def raw(self, k: int) -> int:
        if self.kind == "zero":
            return 0
        if self.kind == "uniform":
            while self._drawn.size < k:
                more = self._rng.integers(0, self.tau + 1, size=4096)
                self._drawn = np.concatenate((self._drawn, more))
            return int(self._drawn[k - 1])
        return int(self._values[(k - 1) % self._values.size])

    def __call__(self, k: int, node: int = 0) -> int:
        return min(self.raw(k), k - 1)

    def describe(self) -> dict:
        return {"kind": self.kind, "tau": self.tau, "seed": self.seed}


def delay_histogram(delays) -> dict[int, int]:
    return dict(sorted(Counter(int(d) for d in delays).items()))
