"""Deterministic synchronous round engine with adversary plug-ins.

One Simulation object is one trial: private channels, rounds, an adaptive
rushing adversary, erasure-respecting corruption snapshots, and per
processor bit accounting.  Within a round the order of effects is fixed:

1. honest outboxes are fixed (the protocol queued them);
2. the adversary observes what it is entitled to see -- full contents of
   messages touching corrupted processors, metadata only (sender,
   recipient, bit length) for honest-to-honest traffic -- and may corrupt
   processors within budget;
3. messages pending from newly corrupted processors may be replaced;
4. everything is delivered simultaneously;
5. metrics are updated (messages sent while corrupted are counted as
   flooding, never as honest cost).

Whether the adversary sees the recipient identity of honest-to-honest
messages is a toggle (metadata_visible, default on).

Protocol state that must survive corruption snapshots lives in per
processor share stores; erased shares never appear in a snapshot.  A
secrecy ledger tracks how many shares of every sharing the adversary has
seen, so reveals can assert that no secret on an all-good path leaked
early.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .seeding import derive_seed

# payload kind tags (first element of payload tuples) the strategies match on
VOTE = "vote"
SHARES = "shares"
WORD = "word"
REQUEST = "request"
RESPONSE = "response"


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class Metrics:
    """Per-processor bit/message counts plus per-phase totals.

    Honest cost excludes everything a processor sent while corrupted;
    flooding by corrupted processors is tallied separately.
    """

    n: int = 0
    bits_sent: list = field(default_factory=list)
    msgs_sent: list = field(default_factory=list)
    flood_bits: int = 0
    flood_msgs: int = 0
    per_phase: dict = field(default_factory=dict)
    rounds: int = 0
    counters: dict = field(default_factory=dict)

    @classmethod
    def for_n(cls, n: int) -> "Metrics":
        return cls(n=n, bits_sent=[0] * n, msgs_sent=[0] * n)

    def add(self, sender: int, bits: int, phase: str, corrupted: bool):
        if corrupted:
            self.flood_bits += bits
            self.flood_msgs += 1
        else:
            self.bits_sent[sender] += bits
            self.msgs_sent[sender] += 1
            self.per_phase[phase] = self.per_phase.get(phase, 0) + bits

    def add_uniform(self, procs, bits_each: int, msgs_each: int, phase: str,
                    corrupted_set):
        """Bulk accounting for vectorized sub-protocols."""
        honest_bits = 0
        for prc in procs:
            if prc in corrupted_set:
                self.flood_bits += bits_each * msgs_each
                self.flood_msgs += msgs_each
            else:
                self.bits_sent[prc] += bits_each * msgs_each
                self.msgs_sent[prc] += msgs_each
                honest_bits += bits_each * msgs_each
        self.per_phase[phase] = self.per_phase.get(phase, 0) + honest_bits

    def bump(self, name: str, amount: int = 1):
        self.counters[name] = self.counters.get(name, 0) + amount

    @property
    def total_honest_bits(self) -> int:
        return sum(self.bits_sent)

    @property
    def max_honest_bits(self) -> int:
        return max(self.bits_sent) if self.bits_sent else 0


@dataclass(frozen=True)
class AdversaryBudget:
    max_corruptions: int
    used: int = 0


class AdversaryView:
    """What the adversary sees in one round before emitting its messages."""

    __slots__ = ("round", "phase", "metadata", "readable", "bulletin",
                 "corrupted", "budget_left")

    def __init__(self, round_, phase, metadata, readable, bulletin,
                 corrupted, budget_left):
        self.round = round_
        self.phase = phase
        self.metadata = metadata  # (sender, recipient-or-None, bits, phase)
        self.readable = readable  # full messages touching corrupted procs
        self.bulletin = bulletin  # public protocol events posted so far
        self.corrupted = corrupted
        self.budget_left = budget_left


class Strategy:
    """Adversary plug-in.  Subclasses override what they need."""

    name = "null"

    def setup(self, ctx):
        pass

    def observe(self, view: AdversaryView, ctx) -> list:
        """Return processor ids to corrupt this round (within budget)."""
        return []

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        """Rewrite a corrupted sender's protocol message.

        Return (payload, bits) or None to withhold.  Default: forward
        unchanged (a corrupted processor that behaves honestly).
        """
        return payload, bits

    def inject(self, view: AdversaryView, ctx) -> list:
        """Extra messages from corrupted processors (flooding)."""
        return []

    # hooks consumed by the vectorized sub-protocol runners
    def vote_bit(self, proc, honest_bit, round_, majority_context, ctx):
        """Vote emitted by a corrupted processor in agreement rounds."""
        return honest_bit


class SimContext:
    """Handle the strategies get: parameters, topology, their RNG stream,
    and the public bulletin."""

    __slots__ = ("params", "topology", "rng", "sim")

    def __init__(self, params, topology, rng, sim):
        self.params = params
        self.topology = topology
        self.rng = rng
        self.sim = sim

    @property
    def corrupted(self):
        return self.sim.corrupted

    @property
    def bulletin(self):
        return self.sim.bulletin


class SecrecyLedger:
    """Adversarial share-exposure bookkeeping per sharing.

    A sharing is registered when dealt: its threshold, the word it belongs
    to, and the tree path the word has traversed.  Exposures are recorded
    whenever a share value reaches the adversary (delivery to a corrupted
    recipient, or a corruption snapshot).  At reveal time, any sharing of
    the word whose path is all-good must have at most t exposures."""

    def __init__(self):
        self.sharings = {}  # key -> (t, word_id, path_nodes)
        self.exposures = {}  # key -> {index: first exposure round}
        self.reveal_round = {}  # word_id -> round

    def register(self, key, threshold_t, word_id, path_nodes):
        self.sharings[key] = (threshold_t, word_id, tuple(path_nodes))

    def expose(self, key, index, round_):
        if key not in self.sharings:
            return
        self.exposures.setdefault(key, {}).setdefault(index, round_)

    def mark_reveal(self, word_id, round_):
        self.reveal_round.setdefault(word_id, round_)

    def violations(self, good_nodes) -> list:
        """Sharings on all-good paths whose pre-reveal exposures exceed t."""
        out = []
        for key, (t, word_id, path) in self.sharings.items():
            reveal = self.reveal_round.get(word_id)
            exp = self.exposures.get(key, {})
            if reveal is None:
                early = exp
            else:
                early = {i: r for i, r in exp.items() if r < reveal}
            if len(early) <= t:
                continue
            if all(node in good_nodes for node in path):
                out.append((key, word_id, len(early), t))
        return out


class Simulation:
    """One protocol trial: message queue, corruption state, metrics, trace."""

    def __init__(self, params, topology, strategy: Strategy, trial_seed: int,
                 metadata_visible: bool = True, trace: list | None = None):
        self.params = params
        self.topology = topology
        self.strategy = strategy
        self.trial_seed = trial_seed
        self.metadata_visible = metadata_visible
        self.round = 0
        self.corrupted: set = set()
        self.budget = AdversaryBudget(params.max_corruptions)
        self.metrics = Metrics.for_n(params.n)
        self.bulletin: list = []
        self.trace = trace
        self.invalid = False
        self.stores = [dict() for _ in range(params.n)]  # key -> Share
        self.ledger = SecrecyLedger()
        self.ctx = SimContext(params, topology,
                              random.Random(derive_seed(trial_seed, "adversary")),
                              self)
        self._outbox: list = []
        strategy.setup(self.ctx)

    # -- share store ---------------------------------------------------------
    #
    # Store keys are (sharing_key, index); erasure is deletion, so snapshots
    # taken at corruption time cannot contain erased values by construction.

    def store_put(self, proc: int, key, value):
        self.stores[proc][key] = value
        if proc in self.corrupted:
            self.ledger.expose(key[0], key[1], self.round)

    def store_erase(self, proc: int, key):
        self.stores[proc].pop(key, None)

    def store_get(self, proc: int, key, default=None):
        return self.stores[proc].get(key, default)

    def snapshot(self, proc: int) -> dict:
        """Processor state as the adversary sees it: erased values are gone."""
        return dict(self.stores[proc])

    # -- protocol event bulletin --------------------------------------------

    def post_event(self, kind: str, **data):
        self.bulletin.append({"round": self.round, "kind": kind, **data})

    # -- messaging -----------------------------------------------------------

    def send(self, sender: int, recipient: int, payload, bits: int,
             phase: str, shares=None):
        """Queue a message for this round.

        shares: optional manifest of store keys [(sharing_key, index)] for
        ledger accounting when the payload carries share material.
        """
        self._outbox.append((sender, recipient, payload, bits, phase, shares))

    def run_round(self, phase: str) -> dict:
        """Deliver the queued round; returns {recipient: [(sender, payload)]}."""
        outbox, self._outbox = self._outbox, []

        # (2) adversary observes entitled content, then corrupts / injects
        metadata = []
        readable = []
        for sender, recipient, payload, bits, mphase, _ in outbox:
            if sender in self.corrupted or recipient in self.corrupted:
                readable.append((sender, recipient, payload, bits, mphase))
            else:
                metadata.append((sender,
                                 recipient if self.metadata_visible else None,
                                 bits, mphase))
        view = AdversaryView(self.round, phase, metadata, readable,
                             self.bulletin, frozenset(self.corrupted),
                             self.budget.max_corruptions - self.budget.used)
        wanted = list(self.strategy.observe(view, self.ctx))
        for proc in wanted:
            if proc in self.corrupted:
                continue
            if self.budget.used >= self.budget.max_corruptions:
                self.invalid = True
                self._trace_line("budget-reject", proc, -1, 0)
                break
            self.corrupt(proc)
        injected = self.strategy.inject(view, self.ctx)

        # (3)+(4) transform corrupted senders' pending messages, deliver all
        delivered: dict = {}
        for sender, recipient, payload, bits, mphase, manifest in outbox:
            if sender in self.corrupted:
                res = self.strategy.transform(sender, recipient, payload,
                                              bits, mphase, self.ctx)
                if res is None:
                    continue
                payload, bits = res
                self.metrics.add(sender, bits, mphase, corrupted=True)
            else:
                self.metrics.add(sender, bits, mphase, corrupted=False)
            if manifest and recipient in self.corrupted:
                for skey, index in manifest:
                    self.ledger.expose(skey, index, self.round)
            delivered.setdefault(recipient, []).append((sender, payload))
            self._trace_line(mphase, sender, recipient, bits)
        for sender, recipient, payload, bits in injected:
            if sender not in self.corrupted:
                continue  # adversary can only speak through corrupted procs
            self.metrics.add(sender, bits, phase, corrupted=True)
            delivered.setdefault(recipient, []).append((sender, payload))
            self._trace_line(phase + "-flood", sender, recipient, bits)

        self.round += 1
        self.metrics.rounds = self.round
        return delivered

    def corrupt(self, proc: int):
        """Adaptive takeover: snapshot state (minus erasures) to the ledger."""
        if proc in self.corrupted:
            return
        self.corrupted.add(proc)
        self.budget = AdversaryBudget(self.budget.max_corruptions,
                                      self.budget.used + 1)
        for key in self.stores[proc]:
            self.ledger.expose(key[0], key[1], self.round)
        self._trace_line("corrupt", proc, -1, 0)

    def tick(self, phase: str) -> dict:
        """Advance one round with whatever is queued (gives the adversary its
        per-round observation/corruption opportunity)."""
        return self.run_round(phase)

    def _trace_line(self, kind, sender, recipient, bits):
        if self.trace is not None:
            self.trace.append(f"{self.round} {kind} {sender} {recipient} {bits}")


# -- built-in strategies ------------------------------------------------------


class NullStrategy(Strategy):
    name = "null"


class CrashStrategy(Strategy):
    """Corrupt a fixed set at a given round; corrupted processors go silent."""

    name = "crash"

    def __init__(self, procs=(), at_round: int = 0, count: int | None = None):
        self.procs = tuple(procs)
        self.at_round = at_round
        self.count = count

    def observe(self, view, ctx):
        if view.round < self.at_round:
            return []
        procs = self.procs
        if not procs and self.count:
            pool = [p for p in range(ctx.params.n) if p not in view.corrupted]
            procs = tuple(ctx.rng.sample(pool, min(self.count, len(pool))))
            self.procs = procs
        return [p for p in procs if p not in view.corrupted]

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        return None

    def vote_bit(self, proc, honest_bit, round_, majority_context, ctx):
        return None  # silent


class StaticByzantineStrategy(Strategy):
    """Corrupt a seeded random set at the start; votes are flipped
    (a corrupted voter always sends the flip of its honest vote at entry),
    share and word payloads are randomized."""

    name = "static_byzantine"

    def __init__(self, count: int = 0, fraction: float | None = None):
        self.count = count
        self.fraction = fraction
        self._chosen = None

    def _target_count(self, ctx):
        if self.fraction is not None:
            return int(self.fraction * ctx.params.n)
        return self.count

    def observe(self, view, ctx):
        if self._chosen is None:
            want = min(self._target_count(ctx), view.budget_left)
            self._chosen = sorted(ctx.rng.sample(range(ctx.params.n), want))
        return [p for p in self._chosen if p not in view.corrupted]

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        return corrupt_payload(payload, ctx.rng, ctx.params), bits

    def vote_bit(self, proc, honest_bit, round_, majority_context, ctx):
        return None if honest_bit is None else 1 - honest_bit


class EquivocatorStrategy(StaticByzantineStrategy):
    """Different payloads per recipient: every transform is freshly random."""

    name = "equivocator"

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        return corrupt_payload(payload, ctx.rng, ctx.params, force_random=True), bits

    def vote_bit(self, proc, honest_bit, round_, majority_context, ctx):
        return ctx.rng.randrange(2)


class AdaptiveChaseWinnersStrategy(Strategy):
    """Corrupt holders of elected arrays as soon as election outcomes become
    visible on the bulletin (the attack the share-splitting defends against).
    Also spends a small head start on random corruption."""

    name = "adaptive_chase_winners"

    def __init__(self, budget_fraction: float | None = None, head_start: int = 0):
        self.budget_fraction = budget_fraction
        self.head_start = head_start
        self._seen_events = 0
        self._spent_head_start = False

    def _cap(self, ctx):
        if self.budget_fraction is None:
            return ctx.params.max_corruptions
        return min(ctx.params.max_corruptions,
                   int(self.budget_fraction * ctx.params.n))

    def observe(self, view, ctx):
        cap = self._cap(ctx)
        room = cap - len(view.corrupted)
        if room <= 0:
            return []
        targets = []
        if not self._spent_head_start and self.head_start:
            pool = [p for p in range(ctx.params.n) if p not in view.corrupted]
            targets.extend(ctx.rng.sample(pool, min(self.head_start, room, len(pool))))
            self._spent_head_start = True
        # chase: newest election outcomes first, most advanced level first
        events = [e for e in view.bulletin[self._seen_events:]
                  if e["kind"] == "election-outcome"]
        self._seen_events = len(view.bulletin)
        events.sort(key=lambda e: -e.get("level", 0))
        for ev in events:
            holders = list(ev.get("holders", ()))
            ctx.rng.shuffle(holders)
            for prc in holders:
                if len(targets) >= room:
                    break
                if prc not in view.corrupted and prc not in targets:
                    targets.append(prc)
        return targets[:room]

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        return corrupt_payload(payload, ctx.rng, ctx.params), bits

    def vote_bit(self, proc, honest_bit, round_, majority_context, ctx):
        maj = majority_context
        if maj is None:
            return ctx.rng.randrange(2)
        return 1 - maj  # push against the current good majority


class OverloaderStrategy(Strategy):
    """Amplification-stage flooder: picks request labels blind and floods
    them so that responders holding those labels go over quota."""

    name = "overloader"

    def __init__(self, count: int = 0, fraction: float | None = None,
                 labels: int = 1):
        self.count = count
        self.fraction = fraction
        self.labels = labels
        self._chosen = None

    def observe(self, view, ctx):
        if self._chosen is None:
            want = self.count
            if self.fraction is not None:
                want = int(self.fraction * ctx.params.n)
            want = min(want, view.budget_left)
            self._chosen = sorted(ctx.rng.sample(range(ctx.params.n), want))
        return [p for p in self._chosen if p not in view.corrupted]

    def flood_labels(self, ctx) -> list:
        """Labels (1-based) this adversary floods, chosen blind per loop."""
        space = ctx.params.label_space
        return [1 + ctx.rng.randrange(space) for _ in range(self.labels)]

    def transform(self, sender, recipient, payload, bits, phase, ctx):
        return corrupt_payload(payload, ctx.rng, ctx.params), bits


def corrupt_payload(payload, rng, params, force_random=False):
    """Default byzantine rewrite: flip votes, randomize share/word values."""
    if not isinstance(payload, tuple) or not payload:
        return payload
    kind = payload[0]
    if kind == VOTE and not force_random:
        return (VOTE,) + payload[1:-1] + (1 - payload[-1],)
    if kind == VOTE:
        return (VOTE,) + payload[1:-1] + (rng.randrange(2),)
    if kind == SHARES:
        # payload: (SHARES, [(store_key, value), ...])
        p = params.field_modulus
        return (SHARES, [(k, rng.randrange(p)) for k, _ in payload[1]])
    if kind == WORD:
        # payload: (WORD, word_id, value)
        return (WORD, payload[1], rng.randrange(2**params.word_bits))
    return payload


_REGISTRY = {}


def register_strategy(name: str, factory):
    _REGISTRY[name] = factory


def make_strategy(name: str, **kwargs) -> Strategy:
    if name not in _REGISTRY:
        raise KeyError(f"unknown adversary strategy {name!r}; "
                       f"known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def builtin_strategies() -> list:
    return sorted(_REGISTRY)


for _cls in (NullStrategy, CrashStrategy, StaticByzantineStrategy,
             EquivocatorStrategy, AdaptiveChaseWinnersStrategy,
             OverloaderStrategy):
    register_strategy(_cls.name, _cls)
