"""Protocol parameters.

Every tunable of the protocol stack lives in one validated, immutable
record: the processor count and adversary margin, the tournament-tree
shape (arity, leaf size, height), the election sizes (candidates, winners,
bins), the three edge-family degrees, and the share-field geometry.

Two constructors are provided:

- ``desk_params`` builds a record at experiment scale, filling defaults and
  checking every invariant; this is what simulations run on.
- ``derive_paper_params`` applies the asymptotic sizing formulas (cubic and
  higher polylog factors).  At any feasible experiment scale those factors
  are astronomically large, so records built this way exist for
  documentation and sanity printing only; they still pass full validation.

Parameter coupling notes:

- The tree satisfies ``n = k1 * q**ell_star``; internally the tree has
  ``ell_star + 1`` levels, level sizes ``k1 * q**(level-1)``, and the top
  level holds all ``n`` processors.
- Elections are coupled by ``w * num_bins == r == q * w``, which forces
  ``num_bins == q``.  A lightest-bin election over ``r`` candidates always
  returns exactly ``r / num_bins`` winners, and each of a node's ``q``
  children contributes ``w`` winners to the parent's candidate list, so no
  other choice keeps candidate counts stable across levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace


class ParamError(ValueError):
    """A parameter record violates one of its invariants."""


def is_prime(m: int) -> bool:
    if m < 2:
        return False
    if m < 4:
        return True
    if m % 2 == 0:
        return False
    f = 3
    while f * f <= m:
        if m % f == 0:
            return False
        f += 2
    return True


def next_prime(m: int) -> int:
    """Smallest prime strictly greater than m."""
    c = m + 1
    while not is_prime(c):
        c += 1
    return c


@dataclass(frozen=True)
class ProtocolParams:
    """Validated bundle of every protocol tunable.

    Immutable after construction; one record is shared read-only by any
    number of concurrent simulation trials.
    """

    n: int  # processor count
    epsilon: float  # adversary corrupts at most a 1/3 - epsilon fraction
    q: int  # tree arity
    k1: int  # leaf (level-1) node size
    ell_star: int  # tree height exponent: n = k1 * q**ell_star
    w: int  # winners per election
    r: int  # candidates per election at levels >= 3 (q * w)
    num_bins: int  # bins per lightest-bin election (= r / w = q)
    c: int = 1  # failure-exponent constant (desk default 1)
    uplink_degree: int = 12  # shares sent per holder when lifting one level
    elllink_degree: int = 16  # level-1 nodes each tree-node member reads from
    intra_degree: int = 24  # regular-graph degree for in-node agreement
    field_modulus: int = 37  # prime for share arithmetic
    word_bits: int = 5  # bits per protocol word
    seed: int = 0  # master RNG seed
    paper_mode: bool = False  # True when built from the asymptotic formulas

    def __post_init__(self):
        checks = [
            (self.n == self.k1 * self.q**self.ell_star,
             f"n = k1*q^ell_star violated: {self.n} != {self.k1}*{self.q}^{self.ell_star}"),
            (0.0 < self.epsilon < 1.0 / 3.0,
             f"epsilon in (0, 1/3) violated: {self.epsilon}"),
            (self.q >= 2, f"q >= 2 violated: {self.q}"),
            (self.k1 >= 1, f"k1 >= 1 violated: {self.k1}"),
            (self.ell_star >= 1, f"ell_star >= 1 violated: {self.ell_star}"),
            (self.w >= 1, f"w >= 1 violated: {self.w}"),
            (self.num_bins >= 2, f"num_bins >= 2 violated: {self.num_bins}"),
            (self.r == self.q * self.w,
             f"r = q*w violated: {self.r} != {self.q}*{self.w}"),
            (self.w * self.num_bins == self.r,
             f"w = r/num_bins violated: {self.w} != {self.r}/{self.num_bins}"),
            (self.c >= 1, f"c >= 1 violated: {self.c}"),
            (self.uplink_degree >= 2,
             f"uplink_degree >= 2 violated: {self.uplink_degree}"),
            (self.elllink_degree >= 1,
             f"elllink_degree >= 1 violated: {self.elllink_degree}"),
            (self.intra_degree >= 2,
             f"intra_degree >= 2 violated: {self.intra_degree}"),
            (is_prime(self.field_modulus),
             f"field_modulus prime violated: {self.field_modulus}"),
            (self.word_bits >= 1, f"word_bits >= 1 violated: {self.word_bits}"),
            (self.field_modulus > 2**self.word_bits,
             f"field_modulus > 2^word_bits violated: "
             f"{self.field_modulus} <= 2^{self.word_bits}"),
            (self.field_modulus > max(self.k1, self.uplink_degree),
             f"field_modulus > max(k1, uplink_degree) violated (share "
             f"evaluation points must be distinct): {self.field_modulus}"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ParamError("; ".join(bad))

    # -- derived quantities ------------------------------------------------

    @property
    def max_corruptions(self) -> int:
        """Adversary budget: floor((1/3 - epsilon) * n)."""
        return math.floor((1.0 / 3.0 - self.epsilon) * self.n)

    @property
    def root_level(self) -> int:
        """Level index of the root node (holds all n processors)."""
        return self.ell_star + 1

    def k_at_level(self, level: int) -> int:
        """Members per node at a tree level (k1 at leaves, n at the root)."""
        if not 1 <= level <= self.root_level:
            raise ParamError(f"level {level} outside 1..{self.root_level}")
        return self.k1 * self.q ** (level - 1)

    def node_count(self, level: int) -> int:
        return self.n // self.k_at_level(level)

    def candidates_at_level(self, level: int) -> int:
        """Election size: q at level 2 (each leaf sends one array), q*w above."""
        if level == 2:
            return self.q
        return self.r

    def winners_at_level(self, level: int) -> int:
        """Arrays promoted per election; capped by the candidate count."""
        return min(self.w, self.candidates_at_level(level))

    def bins_at_level(self, level: int) -> int:
        """Effective bin count so that candidates/bins = winners per level."""
        return max(1, self.candidates_at_level(level) // self.winners_at_level(level))

    @property
    def field_bits(self) -> int:
        """Bits accounted per share element on the wire."""
        return self.field_modulus.bit_length()

    @property
    def label_space(self) -> int:
        """Request-label range for the amplification stage: floor(sqrt(n))."""
        return max(2, math.isqrt(self.n))

    def intra_degree_at(self, size: int) -> int:
        """Regular-graph degree for a node of the given size."""
        return min(size - 1, self.intra_degree)

    # -- config file I/O ---------------------------------------------------

    def to_config(self) -> str:
        """Flat key=value form; keys match field names exactly."""
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def params_from_config(text: str) -> ProtocolParams:
    """Parse a flat key=value config into a validated record.

    Raises ParamError naming the offending line on malformed input.
    """
    kv = {}
    names = {f.name: f.type for f in fields(ProtocolParams)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ParamError(f"line {lineno}: unknown parameter {key!r}")
        try:
            if key == "epsilon":
                kv[key] = float(val)
            elif key == "paper_mode":
                kv[key] = _BOOL[val.lower()]
            else:
                kv[key] = int(val)
        except (ValueError, KeyError):
            raise ParamError(f"line {lineno}: bad value for {key!r}: {val!r}") from None
    missing = set(n for n in names) - set(kv) - {"c", "uplink_degree", "elllink_degree",
                                                "intra_degree", "field_modulus",
                                                "word_bits", "seed", "paper_mode"}
    if missing:
        raise ParamError(f"missing required parameters: {sorted(missing)}")
    return ProtocolParams(**kv)


# -- constructors ----------------------------------------------------------

_K1_PREFERENCE = (8, 4, 16, 2, 32, 1)
_Q_PREFERENCE = (4, 2, 3, 8, 5, 6, 7)


def _solve_tree(n: int, k1=None, q=None, ell_star=None):
    """Find (k1, q, ell_star) with n = k1*q^ell_star; prefer ell_star >= 2."""
    k1s = (k1,) if k1 else _K1_PREFERENCE
    qs = (q,) if q else _Q_PREFERENCE
    found = []
    for qq in qs:
        for kk in k1s:
            if n % kk:
                continue
            m, ell = n // kk, 0
            while m % qq == 0:
                m //= qq
                ell += 1
            if m == 1 and ell >= 1 and (ell_star is None or ell == ell_star):
                found.append((kk, qq, ell))
    if not found:
        raise ParamError(
            f"n = k1*q^ell_star has no integer solution for n={n} "
            f"with k1={k1 or 'auto'}, q={q or 'auto'}")
    deep = [f for f in found if f[2] >= 2]
    return (deep or found)[0]


def desk_params(n: int, **overrides) -> ProtocolParams:
    """Build a validated desk-scale record, filling defaults for n.

    Overrides must respect every invariant; violations are rejected with
    the failing equation spelled out.
    """
    unknown = set(overrides) - {f.name for f in fields(ProtocolParams)}
    if unknown:
        raise ParamError(f"unknown parameters: {sorted(unknown)}")
    if n < 4:
        raise ParamError(f"n >= 4 required, got {n}")

    k1, q, ell_star = _solve_tree(
        n, overrides.get("k1"), overrides.get("q"), overrides.get("ell_star"))
    w = overrides.get("w", min(q, max(1, k1 // 2)))
    r = overrides.get("r", q * w)
    num_bins = overrides.get("num_bins", max(2, r // w))
    log2n = max(1, math.ceil(math.log2(n)))
    intra = overrides.get(
        "intra_degree", max(8, min(n - 1, round(math.sqrt(n) * log2n))))
    uplink = overrides.get("uplink_degree", 12 if n >= 64 else max(4, k1))
    elllink = overrides.get("elllink_degree", 16 if n >= 64 else 4)
    word_bits = overrides.get(
        "word_bits",
        max(1, (max(2, num_bins) - 1).bit_length(), (max(2, math.isqrt(n)) - 1).bit_length()))
    field = overrides.get(
        "field_modulus",
        next_prime(max(2**word_bits, k1, uplink)))
    return ProtocolParams(
        n=n,
        epsilon=overrides.get("epsilon", 0.1),
        q=q, k1=k1, ell_star=ell_star, w=w, r=r, num_bins=num_bins,
        c=overrides.get("c", 1),
        uplink_degree=uplink, elllink_degree=elllink, intra_degree=intra,
        field_modulus=field, word_bits=word_bits,
        seed=overrides.get("seed", 0),
        paper_mode=overrides.get("paper_mode", False),
    )


def derive_paper_params(n: int, epsilon: float, c: int = 1,
                        delta: float = 5.0) -> ProtocolParams:
    """Size a record from the asymptotic formulas.

    Leaf size and winner count are cubic in log n, arity is log n to the
    delta (> 4), and the height is the matching base-q logarithm; all are
    rounded to the nearest feasible integers and n is adjusted upward to
    the nearest exact k1 * q**ell_star.  The result is marked paper mode:
    it documents the asymptotic regime and passes full validation, but the
    adjusted n is far too large to simulate.
    """
    if n < 16:
        raise ParamError(f"paper-mode derivation needs n >= 16, got {n}")
    if delta <= 4:
        raise ParamError(f"delta > 4 required, got {delta}")
    if not 0.0 < epsilon < 1.0 / 3.0:
        raise ParamError(f"epsilon in (0, 1/3) violated: {epsilon}")
    if n & (n - 1) == 0:
        log2n = n.bit_length() - 1  # exact integer log for powers of two
    else:
        log2n = math.log2(n)
    k1 = max(4, round(log2n**3))
    q = max(2, round(log2n**delta))
    w = max(1, round(5 * c * log2n**3))
    if n > k1:
        ell_star = max(2, math.ceil(math.log(n / k1) / math.log(q)))
    else:
        ell_star = 2
    n_adj = k1 * q**ell_star
    num_bins = q
    r = q * w
    word_bits = max(1, (num_bins - 1).bit_length(),
                    (max(2, math.isqrt(n_adj)) - 1).bit_length())
    uplink = max(2, round(q * log2n**3))
    elllink = max(1, round(log2n**3))
    intra = max(2, round(8 * log2n))
    field = next_prime(max(2**word_bits, k1, uplink))
    return ProtocolParams(
        n=n_adj, epsilon=epsilon, q=q, k1=k1, ell_star=ell_star,
        w=w, r=r, num_bins=num_bins, c=c,
        uplink_degree=uplink, elllink_degree=elllink, intra_degree=intra,
        field_modulus=field, word_bits=word_bits, seed=0, paper_mode=True,
    )


def with_seed(p: ProtocolParams, seed: int) -> ProtocolParams:
    return replace(p, seed=seed)
