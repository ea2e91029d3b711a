"""Lightest-bin elections over candidate blocks.

Candidates each commit a bin choice; the bin with the fewest occupants
wins and its occupants are the elected set, padded or truncated to exactly
candidates/num_bins winners.  The point of the rule: an adversary that
sees honest choices before making its own cannot cheaply crowd winners
out, because piling onto a bin makes that bin heavy and therefore lose.

Bin choices are agreed upon (one agreement instance per candidate, one
fresh coin word revealed per round per instance) before the rule is
applied, so all honest members act on the same occupancies.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import coinba
from .seeding import derive_seed


@dataclass(frozen=True)
class Block:
    """One election's worth of a candidate's randomness: a bin choice plus
    one coin word per agreement round."""

    bin_choice: int
    coin_words: tuple
    width: int  # bits per word

    def __post_init__(self):
        if not 0 <= self.bin_choice < 2**self.width:
            raise ValueError(f"bin choice {self.bin_choice} wider than {self.width} bits")

    def word(self, t: int) -> int:
        """Coin word for round t (1-based, as blocks are laid out)."""
        return self.coin_words[t - 1]


@dataclass(frozen=True)
class CandidateArray:
    """One block per tree level plus the final-agreement word and optional
    public-coin words; blocks[level] is consumed by that level's election."""

    owner: int
    blocks: dict  # level -> Block
    root_word: int
    gcs_words: tuple = ()


def generate_array(params, rng, owner: int, gcs_len: int = 0) -> CandidateArray:
    width = params.word_bits
    blocks = {}
    for level in range(2, params.root_level):
        r = params.candidates_at_level(level)
        blocks[level] = Block(
            bin_choice=rng.randrange(max(1, params.bins_at_level(level))),
            coin_words=tuple(rng.randrange(2**width) for _ in range(r)),
            width=width)
    return CandidateArray(
        owner=owner, blocks=blocks,
        root_word=rng.randrange(2**width),
        gcs_words=tuple(rng.randrange(2**width) for _ in range(gcs_len)))


@dataclass(frozen=True)
class ElectionOutcome:
    bins: tuple  # decided bin per candidate
    min_bin: int
    winners: tuple  # candidate indices, 0-based
    augmented: bool
    bad: bool = False  # agreement quality collapsed; arrays treated as bad
    agreement: float = 1.0  # worst per-instance good-member agreement


def decide_bins(bins, num_bins: int, winners: int | None = None):
    """Apply the lightest-bin rule to decided bin words.

    Ties between bins break toward the smaller bin value.  An over-full
    winner set keeps the smallest candidate indices; an under-full one is
    augmented with the smallest otherwise-omitted indices.  Returns
    (min_bin, winner tuple, augmented flag).
    """
    bins = [int(b) % num_bins for b in bins]
    want = winners if winners is not None else max(1, len(bins) // num_bins)
    occupancy = Counter(bins)
    min_bin = min(range(num_bins), key=lambda v: (occupancy.get(v, 10**9), v))
    chosen = [j for j, b in enumerate(bins) if b == min_bin]
    augmented = False
    if len(chosen) > want:
        chosen = chosen[:want]
    elif len(chosen) < want:
        augmented = True
        for j in range(len(bins)):
            if len(chosen) >= want:
                break
            if bins[j] != min_bin:
                chosen.append(j)
        chosen.sort()
    return min_bin, tuple(chosen), augmented


def run_election(adjacency, bin_views, coin_rows, num_bins: int,
                 winners: int, cp, seed: int, corrupted=(), strategy=None,
                 ctx=None, metrics=None, procs=None, word_width: int = 1,
                 agreement_floor: float = 0.95, phase: str = "election",
                 trace=None):
    """Agree on every candidate's bin choice, then apply the lightest-bin
    rule per member.

    bin_views: (k, r) member views of each candidate's bin word (-1 for
    unlearned).  coin_rows: per agreement round, (k, r) member views of
    the round's designated coin word per candidate (-1 unlearned);
    instance i consumes word t of candidate i in round t.  Bit b of a word
    drives the b-th parallel bit instance.

    Returns (ElectionOutcome from the good-plurality bins, per-member
    (min, winners) list).  The election is marked bad when some instance's
    good-member agreement lands under agreement_floor.
    """
    views = np.asarray(bin_views)
    k, r = views.shape
    width = word_width
    rng = np.random.default_rng(derive_seed(seed, "election-init"))
    inst = r * width

    def word_bits_matrix(words):
        """(k, r) words -> (k, r*width) bits; unlearned words stay -1."""
        out = np.empty((k, inst), dtype=np.int8)
        for b in range(width):
            bits = (words >> b) & 1
            out[:, b::width] = np.where(words >= 0, bits, -1)
        return out

    init = word_bits_matrix(views)
    fallback = rng.integers(0, 2, size=init.shape).astype(np.int8)
    init = np.where(init >= 0, init, fallback)

    st = coinba.Stepper(adjacency, init, cp, seed, corrupted=corrupted,
                        strategy=strategy, ctx=ctx, metrics=metrics,
                        phase=phase, procs=procs, trace=trace)
    for t in range(cp.rounds):
        row = np.asarray(coin_rows[min(t, len(coin_rows) - 1)])
        st.advance(word_bits_matrix(row))
    decided_bits = st.commits("plain")  # (k, r*width)

    # reassemble words, then per-member lightest-bin decisions
    decided_words = np.zeros((k, r), dtype=np.int64)
    for b in range(width):
        decided_words += (decided_bits[:, b::width].astype(np.int64) << b)
    member_views = []
    for slot in range(k):
        mb, win, _aug = decide_bins(decided_words[slot], num_bins, winners)
        member_views.append((mb, win))

    good_slots = [s for s in range(k) if st.good_mask[s]]
    agreement = 1.0 if good_slots else 0.0
    canonical = []
    for i in range(r):
        if not good_slots:
            canonical.append(0)
            continue
        col = decided_words[good_slots, i]
        vals, counts = np.unique(col, return_counts=True)
        top = int(counts.argmax())
        canonical.append(int(vals[top]))
        agreement = min(agreement, counts[top] / max(1, len(good_slots)))
    min_bin, win, aug = decide_bins(canonical, num_bins, winners)
    outcome = ElectionOutcome(
        bins=tuple(int(b) % num_bins for b in canonical), min_bin=min_bin,
        winners=win, augmented=aug, bad=agreement < agreement_floor,
        agreement=float(agreement))
    return outcome, member_views
