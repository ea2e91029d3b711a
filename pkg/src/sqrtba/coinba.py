"""Majority-or-coin agreement on a sparse regular graph.

Every round each processor sends its vote bit to its graph neighbors,
takes the majority of what it received, and either keeps that majority
(when the received fraction clears the commit threshold
(1 - epsilon0) * (2/3 + epsilon/2)) or adopts the round's coin.  After the
round budget it commits to its vote.  Agreement is driven entirely by coin
rounds: whenever a coin lands on the side some processors already locked,
almost everyone unifies, and validity (a near-unanimous vote never
unravels) holds round over round regardless of the coins.

The runner is vectorized over processors and over any number of parallel
instances (elections agree on many candidate words at once); votes are
exchanged along a shared regular graph.  The rushing order is preserved:
honest votes for the round are fixed first, then corrupted processors
choose theirs with full knowledge of them.

Informed-ness (per-processor received fraction close to the global vote
split) references global state no processor can see; it is computed only
as a simulator diagnostic and feeds the transcript assertions, never the
protocol.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .params import ParamError
from .seeding import derive_seed


@dataclass(frozen=True)
class CoinBAParams:
    epsilon: float
    epsilon0: float
    rounds: int

    def __post_init__(self):
        if not 0 < self.epsilon0 < self.epsilon / 4:
            raise ParamError(
                f"epsilon0 < epsilon/4 violated: {self.epsilon0} vs "
                f"{self.epsilon}/4 (two-sided threshold passes become "
                f"consistent otherwise)")
        if self.rounds < 1:
            raise ParamError(f"rounds >= 1 violated: {self.rounds}")

    @property
    def commit_threshold(self) -> float:
        return (1.0 - self.epsilon0) * (2.0 / 3.0 + self.epsilon / 2.0)


def default_coinba_params(epsilon: float, coin_reliability: float = 1.0,
                          rounds: int | None = None) -> CoinBAParams:
    """Round budget: four times the expected coin successes needed (one
    success unifies with probability 1/2, and a handful of successes make
    failure negligible at experiment scale)."""
    if rounds is None:
        rounds = max(8, int(round(4 * 2 / max(coin_reliability, 1e-9))))
    return CoinBAParams(epsilon=epsilon, epsilon0=epsilon / 5, rounds=rounds)


@dataclass(frozen=True)
class VoterState:
    """One processor's view after a round (scalar reference semantics)."""

    vote: int
    maj: int = 0
    fraction: float = 0.0
    committed: int | None = None


def step(state: VoterState, neighbor_votes, coin_bit: int,
         cp: CoinBAParams) -> VoterState:
    """One round of the update rule for a single processor.

    Votes may include None entries (silent neighbors); the majority is over
    votes actually received, ties resolved to 0.  The threshold comparison
    is inclusive.
    """
    received = [v for v in neighbor_votes if v is not None]
    if not received:
        return VoterState(vote=coin_bit, maj=0, fraction=0.0)
    ones = sum(received)
    maj = 1 if 2 * ones > len(received) else 0
    frac = (ones if maj == 1 else len(received) - ones) / len(received)
    if frac >= cp.commit_threshold:
        return VoterState(vote=maj, maj=maj, fraction=frac)
    return VoterState(vote=coin_bit, maj=maj, fraction=frac)


# -- coin sources --------------------------------------------------------------


class ReliableCoin:
    """Uniform global coin each round, delivered to a reach fraction of the
    good processors; the rest fall back to private randomness."""

    def __init__(self, seed: int, reach: float = 1.0):
        self.rng = random.Random(derive_seed(seed, "reliable-coin"))
        self.reach = reach

    def draw(self, round_, votes, good_mask, rng):
        n, inst = votes.shape
        bit = self.rng.randrange(2)
        bits = np.full((n, inst), bit, dtype=np.int8)
        if self.reach < 1.0:
            missed = rng.random(n) > self.reach
            bits[missed] = rng.integers(0, 2, size=(int(missed.sum()), inst))
        return bits, True


class PrivateCoin:
    """No global coin at all: everyone flips locally."""

    def draw(self, round_, votes, good_mask, rng):
        return rng.integers(0, 2, size=votes.shape).astype(np.int8), False


class AdversarialCoin:
    """Adversary controls every coin.  'mirror' hands each processor its own
    current vote (freezes any split); 'random' hands out junk."""

    def __init__(self, mode: str = "mirror"):
        if mode not in ("mirror", "random"):
            raise ParamError(f"unknown adversarial coin mode {mode!r}")
        self.mode = mode

    def draw(self, round_, votes, good_mask, rng):
        if self.mode == "mirror":
            return np.where(votes >= 0, votes, 0).astype(np.int8), False
        return rng.integers(0, 2, size=votes.shape).astype(np.int8), False


class SuppliedCoin:
    """Per-round per-processor coin words supplied by the caller (the tree
    protocol reveals them); entries < 0 mean unlearned -> private flip."""

    def __init__(self, rows, succeeded=None):
        self.rows = rows  # round -> array (n,) or (n, inst)
        self.succeeded = succeeded or [True] * len(rows)

    def draw(self, round_, votes, good_mask, rng):
        row = self.rows[min(round_, len(self.rows) - 1)]
        bits = np.asarray(row, dtype=np.int8)
        if bits.ndim == 1:
            bits = np.repeat(bits[:, None], votes.shape[1], axis=1)
        fallback = rng.integers(0, 2, size=bits.shape).astype(np.int8)
        return np.where(bits >= 0, bits, fallback), self.succeeded[
            min(round_, len(self.rows) - 1)]


@dataclass
class RoundRecord:
    """Simulator diagnostics for one round (per instance)."""

    round: int
    coin_success: bool
    f_prime: np.ndarray  # good-vote split toward 1, per instance
    passes_zero: np.ndarray  # good informed threshold passes for 0
    passes_one: np.ndarray
    any_pass: np.ndarray
    unified_after: np.ndarray  # >= 95% of good share a vote after the round


@dataclass
class CoinBAResult:
    commits: np.ndarray  # (n, inst); -1 where the processor stays undecided
    votes: np.ndarray  # final votes (n, inst)
    records: list = field(default_factory=list)

    def good_agreement(self, good_mask, inst: int = 0) -> float:
        votes = self.commits[good_mask, inst]
        votes = votes[votes >= 0]
        if votes.size == 0:
            return 0.0
        ones = int((votes == 1).sum())
        return max(ones, votes.size - ones) / votes.size


class Stepper:
    """Per-round driver for one graph and any number of parallel instances.

    Used directly by the tree protocol, which interleaves coin reveals with
    agreement rounds; run() below wraps it for standalone use.
    """

    def __init__(self, adjacency, inputs, cp: CoinBAParams, seed: int,
                 corrupted=(), strategy=None, ctx=None, metrics=None,
                 phase: str = "coinba", record: bool = True,
                 procs=None, trace: list | None = None):
        self.trace = trace
        votes = np.asarray(inputs, dtype=np.int8)
        if votes.ndim == 1:
            votes = votes[:, None]
        self.votes = votes.copy()
        self.k, self.inst = self.votes.shape
        deg = len(adjacency[0])
        if any(len(a) != deg for a in adjacency):
            raise ParamError("agreement requires a regular graph")
        self.deg = deg
        self.nbr = np.asarray(adjacency, dtype=np.int32)
        self.cp = cp
        self.rng = np.random.default_rng(derive_seed(seed, "coinba"))
        # procs maps local slots to global processor ids (for metrics and
        # corruption); identity when the graph covers everyone.
        self.procs = np.arange(self.k) if procs is None else np.asarray(procs)
        corrupted = set(corrupted)
        self.local_corrupted = [s for s in range(self.k)
                                if int(self.procs[s]) in corrupted]
        self.good_mask = np.ones(self.k, dtype=bool)
        self.good_mask[self.local_corrupted] = False
        self.strategy = strategy
        self.ctx = ctx
        self.metrics = metrics
        self.phase = phase
        self.record = record
        self.records: list = []
        self.round = 0
        self.last_pass_round = np.full((self.k, self.inst), -(10**9), dtype=np.int64)
        self.pass_vote = np.full((self.k, self.inst), -1, dtype=np.int8)

    def advance(self, coin_bits, coin_ok: bool = True):
        """One round: exchange votes, majority test, adopt maj or coin.

        coin_bits: (k,), (k, inst) or scalar; entries < 0 fall back to a
        private flip (an unlearned coin).
        """
        cp = self.cp
        votes = self.votes
        sent = votes.copy()
        if self.local_corrupted:
            # rushing: corrupted votes chosen after honest votes are fixed
            good_votes = votes[self.good_mask]
            maj_ctx = [
                1 if 2 * int((good_votes[:, i] == 1).sum()) > good_votes.shape[0]
                else 0
                for i in range(self.inst)]
            for slot in self.local_corrupted:
                prc = int(self.procs[slot])
                for i in range(self.inst):
                    hb = int(votes[slot, i]) if votes[slot, i] >= 0 else None
                    if self.strategy is not None:
                        v = self.strategy.vote_bit(prc, hb, self.round,
                                                   maj_ctx[i], self.ctx)
                    else:
                        v = hb
                    sent[slot, i] = -1 if v is None else v
        if self.metrics is not None:
            corrupted_procs = {int(self.procs[s]) for s in self.local_corrupted}
            self.metrics.add_uniform(
                (int(p) for p in self.procs), bits_each=self.inst,
                msgs_each=self.deg, phase=self.phase,
                corrupted_set=corrupted_procs)
            if self.trace is not None:
                for p in self.procs:
                    kind = self.phase + ("-flood" if int(p) in corrupted_procs
                                         else "")
                    self.trace.append(
                        f"{self.round} {kind} {int(p)} -1 {self.inst * self.deg}")

        got = sent[self.nbr]  # (k, deg, inst)
        ones = (got == 1).sum(axis=1)
        total = (got >= 0).sum(axis=1)
        total_safe = np.maximum(total, 1)
        maj = (2 * ones > total).astype(np.int8)
        maj_count = np.where(maj == 1, ones, total - ones)
        fraction = maj_count / total_safe
        fraction[total == 0] = 0.0
        passed = fraction >= cp.commit_threshold

        coin = np.asarray(coin_bits, dtype=np.int8)
        if coin.ndim == 0:
            coin = np.full((self.k, self.inst), int(coin), dtype=np.int8)
        elif coin.ndim == 1:
            coin = np.repeat(coin[:, None], self.inst, axis=1)
        fallback = self.rng.integers(0, 2, size=coin.shape).astype(np.int8)
        coin = np.where(coin >= 0, coin, fallback)
        new_votes = np.where(passed, maj, coin).astype(np.int8)

        if self.record:
            self._record_round(votes, new_votes, ones, total_safe, maj,
                               passed, coin_ok)
        self.last_pass_round[passed] = self.round
        self.pass_vote[passed] = maj[passed]
        self.votes = new_votes
        self.round += 1

    def _record_round(self, votes, new_votes, ones, total_safe, maj,
                      passed, coin_ok):
        eps, eps0 = self.cp.epsilon, self.cp.epsilon0
        gm = self.good_mask[:, None]
        frac1 = ones / total_safe
        frac0 = 1.0 - frac1
        if self.good_mask.any():
            f1 = (votes[self.good_mask] == 1).mean(axis=0) * self.good_mask.mean()
            f0 = (votes[self.good_mask] == 0).mean(axis=0) * self.good_mask.mean()
            after1 = (new_votes[self.good_mask] == 1).mean(axis=0)
        else:
            f1 = f0 = after1 = np.zeros(self.inst)
        informed0 = (frac0 >= (1 - eps0) * f0) & (frac0 <= (1 + eps0) * (f0 + 1 / 3 - eps))
        informed1 = (frac1 >= (1 - eps0) * f1) & (frac1 <= (1 + eps0) * (f1 + 1 / 3 - eps))
        pass0 = gm & (maj == 0)[:, :] & passed & informed0
        pass1 = gm & (maj == 1)[:, :] & passed & informed1
        unified = np.maximum(after1, 1 - after1) >= 0.95
        self.records.append(RoundRecord(
            round=self.round, coin_success=bool(coin_ok),
            f_prime=np.asarray(f1, dtype=float),
            passes_zero=pass0.any(axis=0), passes_one=pass1.any(axis=0),
            any_pass=(gm & passed).any(axis=0),
            unified_after=np.atleast_1d(unified)))

    def commits(self, mode: str = "plain") -> np.ndarray:
        """'plain' commits the final vote; 'confident' commits only where
        the threshold passed in one of the last two rounds (-1 otherwise)."""
        if mode == "plain":
            out = self.votes.copy()
        elif mode == "confident":
            recent = self.last_pass_round >= self.round - 2
            out = np.where(recent, self.pass_vote, -1).astype(np.int8)
        else:
            raise ParamError(f"unknown commit mode {mode!r}")
        out[~self.good_mask] = -1
        return out


def run(adjacency, inputs, coin_source, cp: CoinBAParams, seed: int,
        corrupted=(), strategy=None, ctx=None, metrics=None,
        phase: str = "coinba", commit_mode: str = "plain",
        record: bool = True) -> CoinBAResult:
    """Run the full round budget on one graph with a self-contained coin
    source (see Stepper for the per-round driver)."""
    st = Stepper(adjacency, inputs, cp, seed, corrupted=corrupted,
                 strategy=strategy, ctx=ctx, metrics=metrics, phase=phase,
                 record=record)
    for rnd in range(cp.rounds):
        bits, ok = coin_source.draw(rnd, st.votes, st.good_mask, st.rng)
        st.advance(bits, ok)
    return CoinBAResult(commits=st.commits(commit_mode), votes=st.votes,
                        records=st.records)
