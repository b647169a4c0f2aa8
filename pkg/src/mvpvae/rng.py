"""
Portable 64-bit generator for everything that gets persisted.

Masks and permutation fingerprints must come out identical no matter which
language regenerates them, so they are drawn from xoshiro256** seeded through
SplitMix64 rather than from numpy's bit generators. Network initialisation and
training noise do not need that guarantee and use ``numpy.random.Generator``.
"""

MASK64 = (1 << 64) - 1

_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state):
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** with SplitMix64 seeding.

    ``below(n)`` draws uniformly from ``{0, ..., n-1}`` by rejecting raw
    outputs under ``2**64 mod n`` and returning ``x % n``; any port has to
    reproduce this exact rule for fingerprints to match.
    """

    def __init__(self, seed):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def below(self, n):
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        threshold = (1 << 64) % n
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % n

    def random(self):
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def jump(self):
        """Advance by 2**128 steps in place; used to split off an independent stream."""
        acc = [0, 0, 0, 0]
        for word in _JUMP:
            for b in range(64):
                if (word >> b) & 1:
                    acc = [a ^ x for a, x in zip(acc, self.s)]
                self.next_u64()
        self.s = acc
        return self


class ScriptedChoices:
    """Replays a fixed sequence of ``below`` results (for tracing algorithms by hand)."""

    def __init__(self, choices):
        self.choices = list(choices)
        self.pos = 0

    def below(self, n):
        if self.pos >= len(self.choices):
            raise ValueError("scripted choices exhausted")
        c = self.choices[self.pos]
        self.pos += 1
        if not 0 <= c < n:
            raise ValueError(f"scripted choice {c} outside [0, {n})")
        return c
