"""
Cyclic permutations of view indices.

All public maps are 1-based: ``map[i - 1] == sigma(i)``. A permutation is
cyclic on its ``observed`` set (one cycle through every observed index) and
fixes every other index, which is how missing views are carried along
without changing the array length.
"""

from dataclasses import dataclass

from .errors import ContractViolation


def _check_bijection(perm_map):
    n = len(perm_map)
    if sorted(perm_map) != list(range(1, n + 1)):
        raise ContractViolation(f"{list(perm_map)} is not a bijection of 1..{n}")


def is_cyclic(perm_map, observed):
    """True iff ``perm_map`` fixes everything outside ``observed`` and is a
    single cycle on ``observed``. A singleton observed set counts as cyclic."""
    perm_map = [int(x) for x in perm_map]
    _check_bijection(perm_map)
    n = len(perm_map)
    observed = set(int(i) for i in observed)
    if not observed:
        raise ContractViolation("observed set must be nonempty")
    if not observed <= set(range(1, n + 1)):
        raise ContractViolation(f"observed {sorted(observed)} not within 1..{n}")
    for i in range(1, n + 1):
        if i not in observed and perm_map[i - 1] != i:
            return False
    start = min(observed)
    seen = {start}
    cur = perm_map[start - 1]
    while cur != start:
        if cur in seen or cur not in observed:
            return False
        seen.add(cur)
        cur = perm_map[cur - 1]
    return seen == observed


@dataclass(frozen=True)
class CyclicPermutation:
    map: tuple
    observed: frozenset

    def __post_init__(self):
        object.__setattr__(self, "map", tuple(int(x) for x in self.map))
        object.__setattr__(self, "observed", frozenset(int(i) for i in self.observed))
        if not is_cyclic(self.map, self.observed):
            raise ContractViolation(
                f"{list(self.map)} is not cyclic on {sorted(self.observed)}"
            )

    @classmethod
    def identity(cls, n, observed=None):
        if observed is None:
            observed = {1}
        return cls(tuple(range(1, n + 1)), frozenset(observed))

    @property
    def size(self):
        return len(self.map)

    def __call__(self, i):
        return self.map[i - 1]

    def inverse(self):
        return inverse(self)

    def zero_based(self):
        return [x - 1 for x in self.map]


@dataclass(frozen=True)
class PermutationBundle:
    """One column permutation per target view, all sharing an observed set."""

    columns: tuple

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise ContractViolation("bundle needs at least one column")
        obs = cols[0].observed
        L = cols[0].size
        for c in cols:
            if c.observed != obs or c.size != L:
                raise ContractViolation("all bundle columns must share L and the observed set")
        if len(cols) != L:
            raise ContractViolation(f"bundle has {len(cols)} columns for L={L}")

    @property
    def L(self):
        return len(self.columns)

    @property
    def observed(self):
        return self.columns[0].observed

    def __getitem__(self, l):
        """Column permutation for target view ``l`` (1-based)."""
        return self.columns[l - 1]

    def inverse(self):
        return PermutationBundle(tuple(c.inverse() for c in self.columns))

    def as_lists(self):
        return [list(c.map) for c in self.columns]

    @classmethod
    def from_lists(cls, maps, observed):
        return cls(tuple(CyclicPermutation(tuple(m), frozenset(observed)) for m in maps))


def sattolo(n, rng):
    """Uniform random n-cycle over {1..n}.

    Walks ``i`` from ``n-1`` down to ``1`` (0-based) and swaps slot ``i`` with
    a slot ``j`` drawn from ``rng.below(i)``, so ``j < i`` strictly. ``rng``
    only needs a ``below(n)`` method.
    """
    if n < 1:
        raise ContractViolation(f"sattolo needs n >= 1, got {n}")
    a = list(range(1, n + 1))
    for i in range(n - 1, 0, -1):
        j = rng.below(i)
        a[i], a[j] = a[j], a[i]
    return CyclicPermutation(tuple(a), frozenset(range(1, n + 1)))


def sattolo_with_fixed_points(L, observed, rng):
    """Cycle on ``observed`` drawn with Sattolo, identity on the remaining views."""
    obs = sorted(int(i) for i in observed)
    if not obs:
        raise ContractViolation("observed set must be nonempty")
    if obs[0] < 1 or obs[-1] > L:
        raise ContractViolation(f"observed {obs} not within 1..{L}")
    inner = sattolo(len(obs), rng)
    m = list(range(1, L + 1))
    for pos, v in enumerate(obs):
        m[v - 1] = obs[inner.map[pos] - 1]
    return CyclicPermutation(tuple(m), frozenset(obs))


def inverse(p):
    inv = [0] * p.size
    for i, target in enumerate(p.map, start=1):
        inv[target - 1] = i
    return CyclicPermutation(tuple(inv), p.observed)


def make_bundle(L, observed, rng):
    return PermutationBundle(
        tuple(sattolo_with_fixed_points(L, observed, rng) for _ in range(L))
    )


def compose(f, g):
    """Map of ``f o g`` (apply ``g`` first), both given as 1-based sequences."""
    return tuple(f[g[i] - 1] for i in range(len(g)))
