"""Deterministic 64-bit mixing generator used for seeding and workloads.

This is the splitmix64 finalizer (Steele, Lea, Flood; also used as the
seeding recurrence of xoshiro). Constants:

    gamma = 0x9E3779B97F4A7C15
    m1    = 0xBF58476D1CE4E5B9
    m2    = 0x94D049BB133111EB

Every port of the benchmark suite must use exactly this recurrence so that
generated blocks are reproducible across implementations.
"""

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One splitmix64 step: returns the mix of state x + gamma."""
    x = (x + _GAMMA) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix(seed: int, *salts: int) -> int:
    """Deterministic stream value for (seed, salts...), order sensitive."""
    x = seed & MASK64
    for salt in salts:
        x = splitmix64((x ^ salt) & MASK64)
    return splitmix64(x)


def uniform_below(seed: int, bound: int, *salts: int) -> int:
    """Map a mixed draw into [0, bound) by modulo; bound must be positive."""
    return mix(seed, *salts) % bound


def chance(seed: int, fraction: float, *salts: int) -> bool:
    """Deterministic biased coin: true with probability ~= fraction."""
    return mix(seed, *salts) < int(fraction * (MASK64 + 1))
