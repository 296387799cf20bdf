"""Tree-based continual release over per-firing buckets.

Buckets are 1-based. A node ``(h, a)`` covers buckets ``a*2^h + 1 .. (a+1)*2^h``
and lives on level ``k = h + 1``.
"""

from __future__ import annotations

from typing import Callable, Optional

from .rng import geometric_budget, level_budgets

Node = tuple[int, int]


def dyadic_cover(lo: int, hi: int, max_height: Optional[int] = None) -> list[Node]:
    """Canonical cover of the bucket interval ``[lo, hi]`` by aligned dyadic blocks."""
    nodes = []
    i = lo
    while i <= hi:
        h = 0
        while True:
            size = 1 << (h + 1)
            if (i - 1) % size or i - 1 + size > hi or (max_height is not None and h + 1 > max_height):
                break
            h += 1
        nodes.append((h, (i - 1) >> h))
        i += 1 << h
    return nodes


def dyadic_prefix(j: int) -> list[Node]:
    """Blocks of ``[1, j]`` following the binary representation of ``j``."""
    return dyadic_cover(1, j)


def sliding_height(window_buckets: int) -> int:
    """Highest level a cover of ``window_buckets`` consecutive buckets can use."""
    return window_buckets.bit_length() - 1


class TreeState:
    """Leaves, cached noisy nodes and level budgets of one tree barrier.

    ``noise(h, a, scale)`` draws the perturbation for node ``(h, a)``; with
    ``noise=None`` releases are exact. Leaf values may be any numbers
    (``int``/``Fraction`` for exact checks, ``float`` at runtime).
    """

    def __init__(self, sensitivity, epsilon, window_buckets: Optional[int] = None,
                 budget: str = "geometric", noise: Optional[Callable] = None):
        self.sensitivity = float(sensitivity)
        self.epsilon = epsilon
        self.window = window_buckets
        self.budget = budget
        self.noise = noise
        self.prefix = [0]
        self.count_prefix = [0]
        self.noisy: dict[Node, float] = {}
        if window_buckets is not None:
            self.max_height = sliding_height(window_buckets)
            self.eps = [float(e) for e in level_budgets(self.max_height + 1, epsilon, budget)]
        else:
            if budget == "uniform":
                raise ValueError("an all-aggregation tree has unbounded height; uniform budget impossible")
            self.max_height = None
            self.eps = []

    @property
    def buckets(self) -> int:
        return len(self.prefix) - 1

    def level_epsilon(self, h: int) -> float:
        if self.window is not None:
            return self.eps[h]
        return geometric_budget(h + 1, self.epsilon)

    def level_scale(self, h: int) -> float:
        if self.sensitivity == 0:
            return 0.0
        return self.sensitivity / self.level_epsilon(h)

    def add_leaf(self, value, count: int = 1) -> None:
        self.prefix.append(self.prefix[-1] + value)
        self.count_prefix.append(self.count_prefix[-1] + count)

    def exact(self, node: Node):
        h, a = node
        return self.prefix[(a + 1) << h] - self.prefix[a << h]

    def node_value(self, node: Node):
        if self.noise is None:
            return self.exact(node)
        if node not in self.noisy:
            h, a = node
            self.noisy[node] = self.exact(node) + self.noise(h, a, self.level_scale(h))
        return self.noisy[node]

    def interval(self, j: Optional[int] = None) -> tuple[int, int]:
        j = self.buckets if j is None else j
        if self.window is None:
            return 1, j
        return max(1, j - self.window + 1), j

    def nodes(self, j: Optional[int] = None) -> list[Node]:
        lo, hi = self.interval(j)
        return dyadic_cover(lo, hi, self.max_height)

    def release(self, j: Optional[int] = None):
        """Noisy aggregate and exact count over the current prefix or window."""
        lo, hi = self.interval(j)
        total = 0
        for node in dyadic_cover(lo, hi, self.max_height):
            total = total + self.node_value(node)
        return total, self.count_prefix[hi] - self.count_prefix[lo - 1]


def tree_release(state: TreeState, j: Optional[int] = None, func: str = "sum"):
    """Release of ``func`` at bucket ``j``; ``None`` for an empty average."""
    total, count = state.release(j)
    if func == "avg":
        return None if count == 0 else total / count
    return total
