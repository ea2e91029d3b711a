"""Averaging samplers: construction, verification, degree accounting.

A sampler assigns to every input x in [r] a size-d multiset H(x) over [s].
It is (theta, delta)-good when for every subset S of [s], at most a delta
fraction of inputs overshoot: |H(x) n S| / d > |S| / s + theta, with the
intersection counting multiplicity.  Every node set and edge family of the
network is drawn through one of these.

The classical existence argument is probabilistic, so construction here is
seeded uniform sampling followed by verification: exhaustive over all
subsets when s is small, statistical otherwise.  Multiset images are kept
as drawn (no dedup).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from math import e, log2

FEASIBILITY = "2*log2(e)*d*theta^2*delta > s/r + 1 - delta"


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    witness: tuple | None  # offending subset S when not ok
    worst_fraction: float  # max over checked S of the bad-input fraction

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class Sampler:
    r_size: int
    s_size: int
    d: int
    assignment: tuple  # r_size rows, each a tuple of d elements of range(s_size)
    theta: float
    delta: float
    verified: bool = False

    def __post_init__(self):
        if len(self.assignment) != self.r_size:
            raise SamplerError(
                f"assignment must cover all {self.r_size} inputs, "
                f"got {len(self.assignment)}")
        for x, img in enumerate(self.assignment):
            if len(img) != self.d:
                raise SamplerError(f"image of {x} has {len(img)} elements, want {self.d}")
            if any(not 0 <= v < self.s_size for v in img):
                raise SamplerError(f"image of {x} leaves [0, {self.s_size})")

    def image(self, x: int) -> tuple:
        return self.assignment[x]


def feasibility_margin(r_size, s_size, d, theta, delta) -> float:
    """LHS minus RHS of the existence inequality; positive means feasible."""
    return 2 * log2(e) * d * theta * theta * delta - (s_size / r_size + 1 - delta)


def build_random_sampler(r_size: int, s_size: int, d: int, theta: float,
                         delta: float, seed: int,
                         allow_infeasible: bool = False) -> Sampler:
    """Draw each image element independently and uniformly from [s].

    Same seed, same sampler.  Parameters must satisfy the existence
    inequality unless the caller waives it explicitly.
    """
    if min(r_size, s_size, d) < 1:
        raise SamplerError("r_size, s_size and d must be positive")
    if not allow_infeasible and feasibility_margin(r_size, s_size, d, theta, delta) <= 0:
        raise SamplerError(
            f"parameters infeasible for {FEASIBILITY}: "
            f"r={r_size} s={s_size} d={d} theta={theta} delta={delta}; "
            f"pass allow_infeasible=True to waive")
    rng = random.Random(seed)
    rows = tuple(tuple(rng.randrange(s_size) for _ in range(d))
                 for _ in range(r_size))
    return Sampler(r_size, s_size, d, rows, theta, delta)


def full_multiset_sampler(s_size: int, theta: float = 0.0) -> Sampler:
    """Every image is the full multiset [s]: a (theta, 0) sampler for any theta > 0."""
    row = tuple(range(s_size))
    rows = tuple(row for _ in range(s_size))
    return Sampler(s_size, s_size, s_size, rows, theta, 0.0)


def _count_matrix(smp: Sampler):
    """counts[x][v] = multiplicity of v in H(x)."""
    counts = [[0] * smp.s_size for _ in range(smp.r_size)]
    for x, img in enumerate(smp.assignment):
        row = counts[x]
        for v in img:
            row[v] += 1
    return counts


def _bad_fraction(smp: Sampler, subset_counts, subset_size: int) -> float:
    """Fraction of inputs x with |H(x) n S|/d > |S|/s + theta."""
    cutoff = smp.d * (subset_size / smp.s_size + smp.theta)
    bad = sum(1 for c in subset_counts if c > cutoff)
    return bad / smp.r_size


def verify_exhaustive(smp: Sampler, max_s_size: int = 20) -> VerifyResult:
    """Check every subset S of [s]; on failure return a witness subset.

    Only for s_size <= 20 (2^s subsets are enumerated); larger samplers
    should use verify_statistical.
    """
    import numpy as np

    if smp.s_size > max_s_size:
        raise SamplerError(
            f"s_size {smp.s_size} > {max_s_size}: exhaustive verification "
            f"infeasible, use verify_statistical")
    counts = np.array(_count_matrix(smp), dtype=np.int32)  # (r, s)
    r, s = smp.r_size, smp.s_size
    n_masks = 1 << s
    # inter[mask] = per-input intersection with the subset encoded by mask,
    # built by peeling the lowest set bit.
    inter = np.zeros((n_masks, r), dtype=np.int32)
    sizes = np.zeros(n_masks, dtype=np.int32)
    worst = 0.0
    witness = None
    for mask in range(1, n_masks):
        low = mask & -mask
        v = low.bit_length() - 1
        inter[mask] = inter[mask ^ low] + counts[:, v]
        size = sizes[mask ^ low] + 1
        sizes[mask] = size
        cutoff = smp.d * (size / s + smp.theta)
        frac = int(np.count_nonzero(inter[mask] > cutoff)) / r
        if frac > worst:
            worst = frac
            if frac > smp.delta:
                witness = tuple(u for u in range(s) if mask >> u & 1)
    ok = worst <= smp.delta
    return VerifyResult(ok, None if ok else witness, worst)


def verify_statistical(smp: Sampler, trials: int, seed: int) -> VerifyResult:
    """Sample random subsets of random sizes; report the worst observed
    bad-input fraction.  A confidence check, never a proof."""
    rng = random.Random(seed)
    counts = _count_matrix(smp)
    worst = 0.0
    witness = None
    for _ in range(trials):
        size = rng.randrange(1, smp.s_size + 1)
        subset = rng.sample(range(smp.s_size), size)
        inter = [sum(counts[x][v] for v in subset) for x in range(smp.r_size)]
        frac = _bad_fraction(smp, inter, size)
        if frac > worst:
            worst = frac
            witness = tuple(sorted(subset))
    ok = worst <= smp.delta
    return VerifyResult(ok, None if ok else witness, worst)


def mark_verified(smp: Sampler) -> Sampler:
    return replace(smp, verified=True)


def max_out_degree(smp: Sampler) -> int:
    """Max over s' of how many input images contain s' (with multiplicity)."""
    deg = [0] * smp.s_size
    for img in smp.assignment:
        for v in img:
            deg[v] += 1
    return max(deg) if deg else 0


# -- plain text export/import ------------------------------------------------

def dump_sampler(smp: Sampler) -> str:
    """Header 'r s d theta delta', then one line of d integers per input."""
    lines = [f"{smp.r_size} {smp.s_size} {smp.d} {smp.theta} {smp.delta}"]
    for img in smp.assignment:
        lines.append(" ".join(str(v) for v in img))
    return "\n".join(lines) + "\n"


def load_sampler(text: str) -> Sampler:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SamplerError("empty sampler text")
    head = lines[0].split()
    if len(head) != 5:
        raise SamplerError(f"bad header: {lines[0]!r}")
    r_size, s_size, d = int(head[0]), int(head[1]), int(head[2])
    theta, delta = float(head[3]), float(head[4])
    if len(lines) - 1 != r_size:
        raise SamplerError(f"expected {r_size} assignment lines, got {len(lines) - 1}")
    rows = tuple(tuple(int(tok) for tok in ln.split()) for ln in lines[1:])
    return Sampler(r_size, s_size, d, rows, theta, delta)
