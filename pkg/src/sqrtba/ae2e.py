"""Almost-everywhere to everywhere amplification.

Entering this stage, more than half the good processors (the knowledgeable
ones) hold an agreed message; the rest are confused and know it.  Each
loop, every processor scatters request labels at random targets, a hidden
random label is then revealed, and only non-overloaded knowledgeable
holders of that label answer.  A confused processor adopts a message only
when the label with the most answers returned enough identical copies to
clear a threshold no coalition of corrupted responders can reach, which
is why a wrong message is never adopted (safety) while a fresh label each
loop keeps the adversary's blind floods cheap to dodge (liveness).

Requests ride private channels: the adversary cannot see which labels
honest processors chose, so it cannot concentrate floods where they will
matter.  The loop is vectorized; bit accounting is computed from the same
quantities the message objects would carry.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import aeba
from .netsim import OverloaderStrategy
from .params import ProtocolParams
from .seeding import derive_seed


class AmplifierCtx:
    """Minimal strategy context for the vectorized loops (no simulation)."""

    def __init__(self, params, rng):
        self.params = params
        self.rng = rng

UNDECIDED = -1


def requests_per_label(params: ProtocolParams, a_scale: float = 8.0) -> int:
    """Requests each processor sends per label value.

    The analysis wants a multiple of log n; at experiment scale the
    constant is a knob, capped at n-1 and floored at 5 so thresholds stay
    meaningful everywhere.
    """
    raw = int(round(a_scale * math.log2(params.n)))
    return max(5, min(params.n - 1, raw))


def decision_threshold(params: ProtocolParams, a_req: int) -> int:
    """Identical answers required to adopt a message:
    (1/2 + 3*epsilon/8) of the per-label request volume."""
    return math.ceil((0.5 + 3.0 * params.epsilon / 8.0) * a_req)


def overload_quota(params: ProtocolParams) -> int:
    """Answer-label requests a responder accepts before going silent."""
    return max(4, int(math.isqrt(params.n) * max(1, round(math.log2(params.n)))))


@dataclass
class KnowledgeState:
    """Who holds the message entering amplification.

    messages[p] is an opaque message id (>= 0) for knowledgeable p,
    UNDECIDED for confused good processors; corrupted processors are
    marked separately.
    """

    n: int
    messages: np.ndarray
    corrupted: np.ndarray  # bool mask
    decisions: np.ndarray = None

    def __post_init__(self):
        if self.decisions is None:
            self.decisions = np.full(self.n, UNDECIDED, dtype=np.int64)

    @classmethod
    def build(cls, n, knowledgeable, message_id, corrupted):
        msgs = np.full(n, UNDECIDED, dtype=np.int64)
        k = np.zeros(n, dtype=bool)
        k[list(knowledgeable)] = True
        msgs[k] = message_id
        cor = np.zeros(n, dtype=bool)
        cor[list(corrupted)] = True
        msgs[cor] = UNDECIDED
        return cls(n=n, messages=msgs, corrupted=cor)

    @property
    def knowledgeable_fraction(self) -> float:
        good = ~self.corrupted
        return float((self.messages[good] >= 0).mean()) if good.any() else 0.0


@dataclass
class LoopStats:
    loop: int
    k: int | None
    overloaded: int
    new_decisions: int
    wrong_decisions: int
    decision_events: list = field(default_factory=list)  # (proc, msg, count, label)


class RequestLedger:
    """Per-loop bookkeeping: who asked whom with which label, who was
    overloaded, what came back.  Vectorized over processors."""

    def __init__(self, params, rng, a_req):
        self.params = params
        self.rng = rng
        self.a_req = a_req
        self.label_space = params.label_space
        n = params.n
        # targets[p, i, j]: j-th target processor for label i+1 from p
        self.targets = rng.integers(
            0, n, size=(n, self.label_space, a_req), dtype=np.int32)

    def label_counts(self, label_1based: int, senders_mask) -> np.ndarray:
        """Requests per recipient carrying the given label from the given
        senders (duplicate draws collapse per sender at most lightly; at
        experiment scale repeats are negligible)."""
        t = self.targets[senders_mask, label_1based - 1, :].ravel()
        return np.bincount(t, minlength=self.params.n)


def run_loop(state: KnowledgeState, k, params: ProtocolParams, seed: int,
             adversary=None, metrics=None, loop_idx: int = 0,
             a_scale: float = 8.0, adversary_message: int = 666,
             equivocate: bool = False, adv_ctx=None) -> LoopStats:
    """One amplification loop.

    k: revealed random label, either a scalar in [1..sqrt(n)] or a
    per-processor array (entries < 1 mean the processor missed the
    reveal).  Decisions are sticky; only confused good processors decide.
    """
    n = params.n
    rng = np.random.default_rng(derive_seed(seed, "ae2e", loop_idx))
    a_req = requests_per_label(params, a_scale)
    thr = decision_threshold(params, a_req)
    quota = overload_quota(params)
    ledger = RequestLedger(params, rng, a_req)
    good = ~state.corrupted
    corrupt = state.corrupted

    k_arr = np.full(n, int(k), dtype=np.int64) if np.isscalar(k) else \
        np.asarray(k, dtype=np.int64)

    # overload: count per recipient the requests carrying its answer label
    flood = np.zeros(n, dtype=np.int64)
    flooded_labels = []
    if adversary is not None and isinstance(adversary, OverloaderStrategy) \
            and adv_ctx is not None and corrupt.any():
        flooded_labels = adversary.flood_labels(adv_ctx)
        n_corrupt = int(corrupt.sum())
        if metrics is not None:
            metrics.flood_bits += n_corrupt * n * max(1, params.label_space.bit_length())
            metrics.flood_msgs += n_corrupt * n
    honest_label_load = np.zeros(n, dtype=np.int64)
    for lbl in set(int(v) for v in np.unique(k_arr) if v >= 1):
        cnt = ledger.label_counts(lbl, good)
        mine = k_arr == lbl
        honest_label_load[mine] = cnt[mine]
    flood_hit = np.isin(k_arr, flooded_labels) & (k_arr >= 1)
    flood[flood_hit] = int(corrupt.sum())
    received = honest_label_load + flood
    overloaded = received > quota

    responders = good & (state.messages >= 0) & ~overloaded & (k_arr >= 1)

    # per requester: answers per label
    deciders = np.flatnonzero(good & (state.messages < 0)
                              & (state.decisions == UNDECIDED))
    stats = LoopStats(loop=loop_idx,
                      k=int(k) if np.isscalar(k) else None,
                      overloaded=int((overloaded & good).sum()),
                      new_decisions=0, wrong_decisions=0)
    if deciders.size:
        tgt = ledger.targets[deciders]  # (m, L, a_req)
        # honest answers arrive only on the revealed label of the responder
        resp_mask = responders[tgt] & (k_arr[tgt] == (
            np.arange(1, ledger.label_space + 1)[None, :, None]))
        corrupt_mask = corrupt[tgt]  # corrupted answer every label
        counts = resp_mask.sum(axis=2) + corrupt_mask.sum(axis=2)  # (m, L)
        i_max = counts.argmax(axis=1)  # smallest index wins ties
        rows = np.arange(deciders.size)
        # identical-message counting on the winning label
        win_tgt = tgt[rows, i_max, :]  # (m, a_req)
        win_resp = resp_mask[rows, i_max, :]
        win_corrupt = corrupt_mask[rows, i_max, :]
        msgs = state.messages[win_tgt]
        decide_msg = np.full(deciders.size, UNDECIDED, dtype=np.int64)
        decide_cnt = np.zeros(deciders.size, dtype=np.int64)
        for mid in np.unique(msgs[win_resp]) if win_resp.any() else []:
            cnt = ((msgs == mid) & win_resp).sum(axis=1)
            better = cnt > decide_cnt
            decide_cnt[better] = cnt[better]
            decide_msg[better] = mid
        if equivocate:
            # corrupted responders return per-sender junk: identical count 1
            corrupt_best = np.minimum(win_corrupt.sum(axis=1), 1)
        else:
            corrupt_best = win_corrupt.sum(axis=1)
        adv_better = corrupt_best > decide_cnt
        decide_cnt[adv_better] = corrupt_best[adv_better]
        decide_msg[adv_better] = adversary_message
        ok = decide_cnt >= thr
        for ridx in np.flatnonzero(ok):
            prc = int(deciders[ridx])
            msg = int(decide_msg[ridx])
            state.decisions[prc] = msg
            stats.new_decisions += 1
            stats.decision_events.append(
                (prc, msg, int(decide_cnt[ridx]), int(i_max[ridx]) + 1))

    if metrics is not None:
        label_bits = max(1, (params.label_space - 1).bit_length())
        req_bits = ledger.label_space * a_req * label_bits
        metrics.add_uniform(np.flatnonzero(good), bits_each=req_bits,
                            msgs_each=1, phase="ae2e-request",
                            corrupted_set=set())
        answer_bits = 16  # message id + loop id
        answered = np.minimum(received, quota)
        for prc in np.flatnonzero(responders):
            metrics.bits_sent[prc] += int(answered[prc]) * answer_bits
        metrics.per_phase["ae2e-response"] = (
            metrics.per_phase.get("ae2e-response", 0)
            + int(answered[responders].sum()) * answer_bits)
    return stats


def run_ae2e(state: KnowledgeState, coin_labels, params: ProtocolParams,
             seed: int, adversary=None, metrics=None, a_scale: float = 8.0,
             equivocate: bool = False, adv_ctx=None) -> list:
    """Independent loops with a fresh revealed label each; decisions stick.

    coin_labels: sequence of labels (scalar or per-processor arrays).
    Returns the per-loop stats list.
    """
    out = []
    for i, k in enumerate(coin_labels):
        out.append(run_loop(state, k, params, seed, adversary=adversary,
                            metrics=metrics, loop_idx=i, a_scale=a_scale,
                            equivocate=equivocate, adv_ctx=adv_ctx))
    return out


@dataclass
class EverywhereResult:
    outputs: np.ndarray  # per-processor bit, -1 when still undecided
    agreement: bool
    validity: bool
    aeba_result: object
    loop_stats: list
    metrics: object


BIT_MESSAGE = {0: 10, 1: 11}  # message ids carrying a decided bit


def run_everywhere_ba(params: ProtocolParams, inputs, strategy,
                      trial_seed: int, topology=None,
                      a_scale: float = 8.0) -> EverywhereResult:
    """Tree agreement, then one amplification loop per revealed coin word.

    Confused processors (tree output -1) adopt the message relayed by the
    knowledgeable majority; their final bit is the adopted one.  Loop i's
    label is processor-local: each responder checks requests against its
    own view of the i-th revealed coin word (mapped into [1..sqrt(n)]),
    which is exactly what almost-everywhere knowledge provides.
    """
    inputs = np.asarray(inputs, dtype=np.int8)
    res = aeba.run_aeba(params, inputs, strategy, trial_seed,
                        topology=topology, gcs_len=1)
    n = params.n
    corrupted = np.zeros(n, dtype=bool)
    corrupted[list(res.corrupted)] = True
    outputs = np.asarray(res.outputs)

    messages = np.full(n, UNDECIDED, dtype=np.int64)
    for bit, mid in BIT_MESSAGE.items():
        messages[(outputs == bit) & ~corrupted] = mid
    state = KnowledgeState(n=n, messages=messages, corrupted=corrupted)

    space = params.label_space
    labels = []
    if res.gcs_views is not None and res.gcs_views.size:
        for col in range(res.gcs_views.shape[1]):
            views = res.gcs_views[:, col]
            labels.append(np.where(views >= 0, views % space + 1, 0))
    if not labels:  # no surviving coin words: fall back to seeded labels
        rng = np.random.default_rng(derive_seed(trial_seed, "fallback-labels"))
        labels = [int(v) for v in rng.integers(1, space + 1, size=8)]

    adv_ctx = AmplifierCtx(params,
                           random.Random(derive_seed(trial_seed, "ae2e-adv")))
    loop_stats = run_ae2e(state, labels, params, trial_seed,
                          adversary=strategy, metrics=res.metrics,
                          a_scale=a_scale, adv_ctx=adv_ctx)

    final = np.full(n, UNDECIDED, dtype=np.int8)
    inv_msg = {mid: bit for bit, mid in BIT_MESSAGE.items()}
    for prc in range(n):
        if corrupted[prc]:
            continue
        mid = state.messages[prc] if state.messages[prc] >= 0 \
            else state.decisions[prc]
        final[prc] = inv_msg.get(int(mid), UNDECIDED)
    good = ~corrupted
    decided = final[good]
    agreement = bool(decided.size and (decided >= 0).all()
                     and np.unique(decided).size == 1)
    validity = bool(agreement and decided.size
                    and int(decided[0]) in set(int(b) for b in inputs[good]))
    return EverywhereResult(outputs=final, agreement=agreement,
                            validity=validity, aeba_result=res,
                            loop_stats=loop_stats, metrics=res.metrics)
