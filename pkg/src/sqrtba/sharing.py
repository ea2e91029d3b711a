"""Threshold secret sharing over a prime field, with iterated re-sharing.

A secret word is split into n evaluations of a random degree-t polynomial
whose constant term is the secret: any t+1 shares reconstruct it, any t or
fewer are information-theoretically independent of it.  A share can itself
be re-shared (producing shares one level deeper, "i-shares"), and the
re-shared original is erased so that corrupting its holder afterwards
reveals nothing.

Reconstruction is robust against corrupted share values: when the supplied
shares are inconsistent, the value backed by the largest consistent subset
of size >= t+1 wins (ties broken toward the lexicographically smallest
index set).  Note the theoretical limit: with only t+1 honest shares an
adversary holding t slots and full knowledge of the honest polynomial can
forge a larger consistent subset, so robustness beyond the unique-decoding
radius relies on the adversary NOT knowing the polynomial (which is what
the hiding property provides in protocol use).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations


class SharingError(ValueError):
    pass


class ErasedShareError(SharingError):
    """The share value was erased and is irrecoverable."""


class ReconstructionError(SharingError):
    pass


@dataclass(frozen=True)
class SharingSpec:
    """(n_parties, threshold_t + 1) threshold scheme over GF(field_modulus)."""

    n_parties: int
    threshold_t: int
    field_modulus: int

    def __post_init__(self):
        if not 1 <= self.threshold_t < self.n_parties:
            raise SharingError(
                f"1 <= threshold_t < n_parties violated: "
                f"t={self.threshold_t}, n={self.n_parties}")
        if self.n_parties >= self.field_modulus:
            raise SharingError(
                f"n_parties must be < field_modulus for distinct evaluation "
                f"points: {self.n_parties} >= {self.field_modulus}")


def default_spec(n_parties: int, field_modulus: int) -> SharingSpec:
    """Threshold at half the parties (any fraction in [1/3, 2/3] works)."""
    return SharingSpec(n_parties, max(1, n_parties // 2), field_modulus)


class Share:
    """One evaluation of a sharing polynomial, with provenance.

    lineage records (tag, index) pairs from the original secret down to
    this share; its length equals the share's level.  Reading the value
    after erase() raises.
    """

    __slots__ = ("_value", "index", "level", "lineage", "_erased")

    def __init__(self, value: int, index: int, level: int, lineage: tuple):
        if level < 1:
            raise SharingError(f"level >= 1 violated: {level}")
        if len(lineage) != level:
            raise SharingError(
                f"lineage length {len(lineage)} != level {level}")
        self._value = value
        self.index = index
        self.level = level
        self.lineage = lineage
        self._erased = False

    @property
    def value(self) -> int:
        if self._erased:
            raise ErasedShareError(
                f"share {self.lineage} index {self.index} was erased")
        return self._value

    @property
    def erased(self) -> bool:
        return self._erased

    def __repr__(self):
        v = "<erased>" if self._erased else self._value
        return f"Share(value={v}, index={self.index}, level={self.level})"


def erase(sh: Share) -> None:
    """Destroy the share value; idempotent."""
    sh._value = None
    sh._erased = True


def _poly_eval(coeffs, x, p):
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def share(secret: int, spec: SharingSpec, rng, tag="secret") -> list:
    """Deal level-1 shares of a field element.

    The polynomial is uniformly random of degree threshold_t with constant
    term equal to the secret; share i is its value at x = i.
    """
    p = spec.field_modulus
    if not 0 <= secret < p:
        raise SharingError(f"secret {secret} outside field [0, {p})")
    coeffs = [secret] + [rng.randrange(p) for _ in range(spec.threshold_t)]
    return [
        Share(_poly_eval(coeffs, i, p), i, 1, ((tag, i),))
        for i in range(1, spec.n_parties + 1)
    ]


def reshare(sh: Share, spec: SharingSpec, rng, tag="reshare") -> list:
    """Split a share one level deeper and erase the original.

    Re-sharing an erased share is a hard failure: the memory-erasure
    contract says the value no longer exists.
    """
    value = sh.value  # raises ErasedShareError if already erased
    p = spec.field_modulus
    coeffs = [value] + [rng.randrange(p) for _ in range(spec.threshold_t)]
    out = [
        Share(_poly_eval(coeffs, i, p), i, sh.level + 1,
              sh.lineage + ((tag, i),))
        for i in range(1, spec.n_parties + 1)
    ]
    erase(sh)
    return out


def lagrange_at_zero(xs, p):
    """Interpolation weights at x=0 for the given evaluation points."""
    ws = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i == j:
                continue
            num = num * xj % p
            den = den * (xj - xi) % p
        ws.append(num * pow(den, p - 2, p) % p)
    return ws


_WEIGHT_CACHE: dict = {}


def interpolate_at_zero(points, p):
    """points: sequence of (x, y) with distinct x; value of the unique
    degree <= len(points)-1 polynomial at 0."""
    xs = tuple(x for x, _ in points)
    key = (xs, p)
    ws = _WEIGHT_CACHE.get(key)
    if ws is None:
        ws = lagrange_at_zero(xs, p)
        if len(_WEIGHT_CACHE) < 1 << 16:
            _WEIGHT_CACHE[key] = ws
    return sum(w * y for w, (_, y) in zip(ws, points)) % p


def _eval_weights(xs: tuple, x: int, p: int):
    """Cached barycentric weights to evaluate the poly through xs at x."""
    key = (xs, x, p)
    ws = _WEIGHT_CACHE.get(key)
    if ws is None:
        ws = lagrange_at_zero(tuple(xi - x for xi in xs), p)
        if len(_WEIGHT_CACHE) < 1 << 16:
            _WEIGHT_CACHE[key] = ws
    return ws


def _all_consistent(points, t, p):
    """Do all points lie on the degree <= t poly through the first t+1?"""
    base = points[: t + 1]
    xs = tuple(x for x, _ in base)
    ys = [y for _, y in base]
    for x, y in points[t + 1:]:
        ws = _eval_weights(xs, x, p)
        if sum(w * yb for w, yb in zip(ws, ys)) % p != y:
            return False
    return True


def reconstruct_values(pairs, spec: SharingSpec, margin: int = 0,
                       max_checks: int | None = None) -> int:
    """Robust interpolation at zero from (index, value) pairs.

    With exactly t+1 consistent shares this is plain interpolation.  With
    more, inconsistencies are resolved toward the largest consistent
    subset of size >= t+1: exclusion sets are enumerated smallest first
    (lexicographically within a size, which fixes the tie-break), so the
    first consistent remainder IS the largest consistent subset.

    margin > 0 is the protocol descent setting: once any share has to be
    excluded, the surviving subset must exceed the minimum by that many
    shares, otherwise reconstruction fails instead of returning one of the
    many bare (t+1)-point candidates, all of which look self-consistent.
    max_checks bounds the search for the same reason (hopeless garbage
    should fail fast, the callers treat failure as an unlearned value).

    Duplicate indices keep the first value received; repeats on one edge
    are a flooding artifact, not a second vote.
    """
    t = spec.threshold_t
    p = spec.field_modulus
    seen = {}
    for idx, val in pairs:
        if idx not in seen:
            seen[idx] = val
    points = sorted(seen.items())
    m = len(points)
    if m < t + 1:
        raise ReconstructionError(
            f"insufficient shares: {m} < t+1 = {t + 1}")
    if _all_consistent(points, t, p):
        return interpolate_at_zero(points[: t + 1], p)
    floor = t + 1 + margin
    checks = 0
    for excl in range(1, m - floor + 1):
        for gone in combinations(range(m), excl):
            checks += 1
            if max_checks is not None and checks > max_checks:
                raise ReconstructionError(
                    f"no consistent subset within {max_checks} checks")
            kept = [pt for j, pt in enumerate(points) if j not in gone]
            if _all_consistent(kept, t, p):
                return interpolate_at_zero(kept[: t + 1], p)
    raise ReconstructionError(
        f"no consistent subset of size >= {floor} among {m} shares")


def reconstruct(shares, spec: SharingSpec) -> int:
    """Reconstruct from Share objects sharing a common lineage prefix."""
    if not shares:
        raise ReconstructionError("no shares supplied")
    prefix = shares[0].lineage[:-1]
    level = shares[0].level
    for sh in shares:
        if sh.level != level or sh.lineage[:-1] != prefix:
            raise ReconstructionError(
                "shares mix lineages: "
                f"{sh.lineage} vs prefix {prefix}")
    return reconstruct_values([(sh.index, sh.value) for sh in shares], spec)
