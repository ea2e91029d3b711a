"""Almost-everywhere agreement over the tournament tree.

The protocol elects arrays of secret words, not processors.  Every leaf
owner generates an array (one block per election level, a final-agreement
word, optionally public-coin words), secret-shares it into its leaf node,
and the leaf immediately lifts the shares one level up.  Each level then
runs elections: bin choices are revealed (shares travel down to every leaf
of the subtree, get rebuilt hop by hop, and come back up the level-links),
bin agreement burns one fresh coin word per round, and the winners' still
hidden blocks are re-shared upward and erased below.  Splitting winners
across ever larger processor sets is what defeats an adaptive adversary:
by the time it can see which arrays won, corrupting their holders no
longer helps and the erased lower shares tell it nothing.

At the top the whole network runs the majority-or-coin agreement on the
processors' input bits, consuming one hidden word per round from the
surviving arrays.  A processor commits its bit only if it cleared the
vote threshold near the end; everyone else reports "confused", which is
what the everywhere-amplification stage expects.

The reveal machinery (send_secret_up / send_down / send_open) is exposed
on the protocol object so fault-injection tests can drive it directly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from . import coinba, election
from .netsim import SHARES, Simulation
from .params import ProtocolParams
from .seeding import derive_seed
from .sharing import ReconstructionError, reconstruct_values
from .topology import GOOD, NodeId, classify_nodes

UNKNOWN = -1


@dataclass
class WordInfo:
    wid: int
    owner: int
    tag: tuple  # ("bin", level) | ("coin", level, t) | ("root",) | ("gcs", j)
    value: int
    revealed_round: int | None = None


@dataclass
class SubSharing:
    sid: int
    word: int  # wid
    level: int
    path: tuple  # dealer slots from the leaf up
    threshold: int
    node: NodeId  # residence node of the shares
    holders: tuple  # holder procs by share index-1
    path_nodes: tuple  # nodes the secret traversed, leaf up to residence


@dataclass
class AebaResult:
    outputs: np.ndarray  # per-processor bit, -1 for confused
    metrics: object
    stats: dict
    gcs: list = field(default_factory=list)  # (value, known_fraction, owner_good)
    gcs_views: np.ndarray | None = None  # per-processor learned gcs words
    corrupted: frozenset = frozenset()
    trial_valid: bool = True


class TreeProtocol:
    """One trial of the tree protocol on an existing Simulation."""

    def __init__(self, sim: Simulation, inputs, gcs_len: int = 0):
        self.sim = sim
        self.params: ProtocolParams = sim.params
        self.topo = sim.topology
        self.inputs = np.asarray(inputs, dtype=np.int8)
        self.gcs_len = gcs_len
        self.rng = random.Random(derive_seed(sim.trial_seed, "aeba"))
        self.words: list[WordInfo] = []
        self.subs: list[SubSharing] = []
        self._sub_index: dict = {}
        self.word_owner_arrays: dict = {}  # owner -> {tag: wid}
        self.stats: dict = {
            "winner_good_fraction": {},  # level -> fraction
            "election_agreement": {},  # level -> min agreement
            "bad_elections": 0,
            "root_coin_bits_used": 0,
        }

    # -- identifiers ---------------------------------------------------------

    def _new_word(self, owner, tag, value) -> int:
        wid = len(self.words)
        self.words.append(WordInfo(wid, owner, tag, value))
        return wid

    def _sub(self, word: int, level: int, path: tuple, threshold: int,
             node: NodeId, holders: tuple, path_nodes: tuple) -> SubSharing:
        key = (word, level, path)
        hit = self._sub_index.get(key)
        if hit is not None:
            return hit
        sub = SubSharing(len(self.subs), word, level, path, threshold,
                         node, holders, path_nodes)
        self.subs.append(sub)
        self._sub_index[key] = sub
        self.sim.ledger.register(sub.sid, threshold, word, path_nodes)
        return sub

    # -- array generation and dealing -----------------------------------------

    def deal_arrays(self):
        """Step one: every leaf owner generates an array and shares it with
        its leaf node; the leaf immediately lifts the shares to level 2."""
        p = self.params
        n_leaves = p.node_count(1)
        for owner in range(n_leaves):
            arr_rng = random.Random(derive_seed(self.sim.trial_seed, "array", owner))
            arr = election.generate_array(p, arr_rng, owner, self.gcs_len)
            tags = {}
            for level, blk in arr.blocks.items():
                tags[("bin", level)] = self._new_word(owner, ("bin", level),
                                                      blk.bin_choice)
                for t, wv in enumerate(blk.coin_words, start=1):
                    tags[("coin", level, t)] = self._new_word(
                        owner, ("coin", level, t), wv)
            tags[("root",)] = self._new_word(owner, ("root",), arr.root_word)
            for j, wv in enumerate(arr.gcs_words):
                tags[("gcs", j)] = self._new_word(owner, ("gcs", j), wv)
            self.word_owner_arrays[owner] = tags

            leaf = NodeId(1, owner)
            members = self.topo.members[leaf]
            spec = self._leaf_spec()
            per_member: dict = {m: [] for m in members}
            for tag, wid in tags.items():
                sub = self._sub(wid, 1, (), spec.threshold_t, leaf,
                                tuple(members), (leaf,))
                coeffs = [self.words[wid].value] + [
                    arr_rng.randrange(p.field_modulus)
                    for _ in range(spec.threshold_t)]
                for idx, member in enumerate(members, start=1):
                    val = _poly_eval(coeffs, idx, p.field_modulus)
                    per_member[member].append(((sub.sid, idx), val))
            for member, pairs in per_member.items():
                self.sim.send(owner, member, (SHARES, pairs),
                              bits=len(pairs) * p.field_bits, phase="deal",
                              shares=[k for k, _ in pairs])
        self._deliver_shares("deal")

    def _leaf_spec(self):
        from .sharing import SharingSpec
        k1 = self.params.k1
        return SharingSpec(k1, max(1, k1 // 2), self.params.field_modulus)

    def _lift_spec(self, parent_level):
        from .sharing import SharingSpec
        d = min(self.params.uplink_degree,
                self.params.k_at_level(parent_level))
        return SharingSpec(d, max(1, d // 2), self.params.field_modulus)

    def _deliver_shares(self, phase: str):
        delivered = self.sim.run_round(phase)
        for recipient, msgs in delivered.items():
            for _sender, payload in msgs:
                if isinstance(payload, tuple) and payload and payload[0] == SHARES:
                    for key, val in payload[1]:
                        self.sim.store_put(recipient, key, val)

    # -- sendSecretUp ----------------------------------------------------------

    def send_secret_up(self, node: NodeId, wids):
        """Every member re-shares its resident shares of the given words to
        its uplink targets in the parent node, then erases the originals."""
        p = self.params
        parent = self.topo.parent(node)
        spec = self._lift_spec(parent.level)
        up = self.topo.uplinks[parent]
        members = self.topo.members[node]
        parent_members = self.topo.members[parent]
        wid_set = set(wids)
        outgoing: dict = {}
        # store keys are (sid, index); walk each member's resident shares
        for slot, proc in enumerate(members):
            targets = up.image(slot)
            store = self.sim.stores[proc]
            resident = [(key, val) for key, val in store.items()
                        if self.subs[key[0]].word in wid_set
                        and self.subs[key[0]].node == node]
            if not resident:
                continue
            lift_rng = random.Random(
                derive_seed(self.sim.trial_seed, "lift", parent.level,
                            node.index, slot))
            for (sid, _index), val in resident:
                parent_sub = self._sub(
                    self.subs[sid].word, node.level + 1,
                    self.subs[sid].path + (slot,), spec.threshold_t, parent,
                    tuple(parent_members[t] for t in targets),
                    self.subs[sid].path_nodes + (parent,))
                coeffs = [val] + [lift_rng.randrange(p.field_modulus)
                                  for _ in range(spec.threshold_t)]
                for i, tslot in enumerate(targets, start=1):
                    tproc = parent_members[tslot]
                    outgoing.setdefault((proc, tproc), []).append(
                        ((parent_sub.sid, i),
                         _poly_eval(coeffs, i, p.field_modulus)))
            for key, _val in resident:
                self.sim.store_erase(proc, key)
        for (sender, recipient), pairs in outgoing.items():
            self.sim.send(sender, recipient, (SHARES, pairs),
                          bits=len(pairs) * p.field_bits, phase="lift",
                          shares=[k for k, _ in pairs])
        self._deliver_shares("lift")

    # -- sendDown / sendOpen ----------------------------------------------------

    def send_down(self, node: NodeId, wids):
        """Reveal words from a node down its subtree; returns
        (leaf_values, leaf_nodes) where leaf_values has shape
        (n_leaf_nodes_of_subtree, k1, len(wids)), UNKNOWN where a processor
        could not rebuild a word.

        Shares descend hop by hop: each holder returns its share to the
        dealer slot of that sub-sharing in every child (the shared uplink
        sampler makes sibling slots correspond), receivers rebuild the next
        level's shares, and at the bottom each leaf node pools its members'
        level-1 shares.
        """
        p = self.params
        fm = p.field_modulus
        corrupted = self.sim.corrupted
        adv_rng = self.sim.ctx.rng
        for wid in wids:
            if self.words[wid].revealed_round is None:
                self.words[wid].revealed_round = self.sim.round
                self.sim.ledger.mark_reveal(wid, self.sim.round)
        wid_set = set(wids)

        # working[(node, slot)] = {(sid, index): value}
        working: dict = {}
        for slot, proc in enumerate(self.topo.members[node]):
            mine = {key: val for key, val in self.sim.stores[proc].items()
                    if self.subs[key[0]].word in wid_set
                    and self.subs[key[0]].node == node}
            if mine:
                working[(node, slot)] = mine

        level = node.level
        cur_nodes = [node]
        while level > 1:
            spec = self._lift_spec(level)
            bits_sent = np.zeros(p.n, dtype=np.int64)
            # Shares of each sub-sharing regroup at the dealer slot of every
            # child.  A holder sends the same value down every child branch
            # (one corruption draw per share), so the regrouped input per
            # sub-sharing is identical across siblings and the rebuild can
            # be memoized per sub-sharing.
            regroup: dict = {}  # sid -> [(index, value)]; duplicates dedup later
            for cnode in cur_nodes:
                members = self.topo.members[cnode]
                children = self.topo.children(cnode)
                n_targets = len(children)
                for (wnode, slot), shares in working.items():
                    if wnode != cnode:
                        continue
                    proc = members[slot]
                    is_bad = proc in corrupted
                    for (sid, index), val in shares.items():
                        sent = adv_rng.randrange(fm) if is_bad else val
                        regroup.setdefault(sid, []).append((index, sent))
                        bits_sent[proc] += p.field_bits * n_targets
            for pr in np.flatnonzero(bits_sent):
                pr = int(pr)
                if pr in corrupted:
                    self.sim.metrics.flood_bits += int(bits_sent[pr])
                else:
                    self.sim.metrics.bits_sent[pr] += int(bits_sent[pr])
                    self.sim.metrics.per_phase["reveal"] = (
                        self.sim.metrics.per_phase.get("reveal", 0)
                        + int(bits_sent[pr]))
                if self.sim.trace is not None:
                    kind = "reveal-flood" if pr in corrupted else "reveal"
                    self.sim.trace.append(
                        f"{self.sim.round} {kind} {pr} -1 {int(bits_sent[pr])}")
            # rebuild once per sub-sharing, place at every child's dealer slot
            rebuilt: dict = {}  # sid -> (parent_sid, index, secret) or None
            for sid, pairs in regroup.items():
                sub = self.subs[sid]
                try:
                    secret = reconstruct_values(pairs, spec, margin=1,
                                                max_checks=400)
                except ReconstructionError:
                    rebuilt[sid] = None
                    continue
                parent_sub = self._sub_index.get(
                    (sub.word, sub.level - 1, sub.path[:-1]))
                if parent_sub is None:
                    rebuilt[sid] = None
                    continue
                index = self._share_index(parent_sub, sub.path[-1])
                rebuilt[sid] = None if index is None else (
                    parent_sub.sid, index, secret)
            nxt_working: dict = {}
            for cnode in cur_nodes:
                for child in self.topo.children(cnode):
                    for sid, hit in rebuilt.items():
                        if hit is None:
                            continue
                        parent_sid, index, secret = hit
                        dealer = self.subs[sid].path[-1]
                        nxt_working.setdefault((child, dealer), {})[
                            (parent_sid, index)] = secret
            working = nxt_working
            cur_nodes = [c for cn in cur_nodes for c in self.topo.children(cn)]
            level -= 1
            self.sim.tick("reveal")

        # Leaf exchange: members pool level-1 shares and reconstruct each
        # word.  Everyone in a leaf receives the same reports (one corruption
        # draw per sender), so one rebuild per (leaf, word) serves all slots.
        leaf_nodes = self.topo.leaf_descendants(node)
        k1 = p.k1
        result = np.full((len(leaf_nodes), k1, len(wids)), UNKNOWN, dtype=np.int64)
        wid_pos = {wid: i for i, wid in enumerate(wids)}
        leaf_spec = self._leaf_spec()
        for li, leaf in enumerate(leaf_nodes):
            members = self.topo.members[leaf]
            pool: dict = {}  # wid -> [(index, value)]
            for slot, proc in enumerate(members):
                held = working.get((leaf, slot), {})
                is_bad = proc in corrupted
                for (sid, index), val in held.items():
                    wid = self.subs[sid].word
                    sent = adv_rng.randrange(fm) if is_bad else val
                    pool.setdefault(wid, []).append((index, sent))
                if held:
                    bits = len(held) * p.field_bits * (k1 - 1)
                    if is_bad:
                        self.sim.metrics.flood_bits += bits
                    else:
                        self.sim.metrics.bits_sent[proc] += bits
                        self.sim.metrics.per_phase["reveal"] = (
                            self.sim.metrics.per_phase.get("reveal", 0) + bits)
                    if self.sim.trace is not None:
                        kind = "reveal-flood" if is_bad else "reveal"
                        self.sim.trace.append(
                            f"{self.sim.round} {kind} {proc} -1 {bits}")
            for wid, pairs in pool.items():
                try:
                    val = reconstruct_values(pairs, leaf_spec, margin=1,
                                             max_checks=400)
                except ReconstructionError:
                    continue
                result[li, :, wid_pos[wid]] = val
        self.sim.tick("reveal")
        return result, leaf_nodes

    def _share_index(self, sub: SubSharing, slot: int):
        """Index of the share of `sub` held at member slot `slot` of its
        residence node (None when that slot holds no share of it)."""
        if sub.level == 1:
            return slot + 1
        img = self.topo.uplinks[sub.node].image(sub.path[-1])
        try:
            return img.index(slot) + 1
        except ValueError:
            return None

    def send_open(self, node: NodeId, leaf_values: np.ndarray, leaf_nodes,
                  word_count: int) -> np.ndarray:
        """Two-stage majority: per level-1 node over its members' reports,
        then per target member over its linked level-1 nodes.  Returns
        (k_node, word_count) learned values, UNKNOWN on tie or no majority.
        """
        p = self.params
        corrupted = self.sim.corrupted
        adv_rng = self.sim.ctx.rng
        k1 = p.k1
        reported = leaf_values.copy()
        for li, leaf in enumerate(leaf_nodes):
            for slot, proc in enumerate(self.topo.members[leaf]):
                if proc in corrupted:
                    reported[li, slot, :] = [
                        adv_rng.randrange(2**p.word_bits)
                        for _ in range(word_count)]
        # stage 1: the node's version per leaf (strict majority of reports)
        node_version = np.full((len(leaf_nodes), word_count), UNKNOWN, dtype=np.int64)
        for li in range(len(leaf_nodes)):
            for wi in range(word_count):
                vals, counts = np.unique(reported[li, :, wi], return_counts=True)
                best = int(counts.argmax())
                if counts[best] * 2 > k1:
                    node_version[li, wi] = vals[best]
        # stage 2: plurality over linked leaf nodes, exact tie -> UNKNOWN
        members = self.topo.members[node]
        base = node.index * p.q ** (node.level - 1)
        out = np.full((len(members), word_count), UNKNOWN, dtype=np.int64)
        smp = self.topo.elllinks[node]
        for slot in range(len(members)):
            linked = [j for j in smp.image(slot)]
            for wi in range(word_count):
                versions = [int(node_version[j, wi]) for j in linked
                            if node_version[j, wi] != UNKNOWN]
                if not versions:
                    continue
                vals, counts = np.unique(versions, return_counts=True)
                top = counts.max()
                winners = vals[counts == top]
                if len(winners) == 1:
                    out[slot, wi] = winners[0]
        # bit accounting: each leaf member reports each word once per
        # incident ell-link (reverse edges of the link sampler)
        load = np.zeros(len(leaf_nodes), dtype=np.int64)
        for slot in range(len(members)):
            for j in smp.image(slot):
                load[j] += 1
        for li, leaf in enumerate(leaf_nodes):
            for proc in self.topo.members[leaf]:
                bits = int(load[li]) * word_count * p.word_bits
                if bits == 0:
                    continue
                if proc in corrupted:
                    self.sim.metrics.flood_bits += bits
                else:
                    self.sim.metrics.bits_sent[proc] += bits
                    self.sim.metrics.per_phase["open"] = (
                        self.sim.metrics.per_phase.get("open", 0) + bits)
                if self.sim.trace is not None:
                    kind = "open-flood" if proc in corrupted else "open"
                    self.sim.trace.append(
                        f"{self.sim.round} {kind} {proc} -1 {bits}")
        self.sim.tick("open")
        return out

    def reveal_words(self, node: NodeId, wids) -> np.ndarray:
        """send_down then send_open; (k_node, len(wids)) member views."""
        leaf_values, leaf_nodes = self.send_down(node, wids)
        return self.send_open(node, leaf_values, leaf_nodes, len(wids))

    # -- elections per level ------------------------------------------------------

    def run_level(self, level: int, candidates_per_node: dict) -> dict:
        """Run every level's elections and lift the winners.

        candidates_per_node: node -> list of owner ids (order fixes
        candidate slots).  Returns the next level's candidate lists.
        """
        p = self.params
        winners_upward: dict = {}
        r = p.candidates_at_level(level)
        nb = p.bins_at_level(level)
        want = p.winners_at_level(level)
        cp = coinba.CoinBAParams(epsilon=p.epsilon, epsilon0=p.epsilon / 5,
                                 rounds=r)
        for node in self.topo.nodes_at(level):
            owners = candidates_per_node.get(node, [])
            if not owners:
                continue
            bin_wids = [self.word_owner_arrays[o][("bin", level)] for o in owners]
            bin_views = self.reveal_words(node, bin_wids)
            coin_rows = []
            for t in range(1, r + 1):
                coin_wids = [self.word_owner_arrays[o][("coin", level, t)]
                             for o in owners]
                coin_rows.append(self.reveal_words(node, coin_wids))
            members = self.topo.members[node]
            outcome, member_views = election.run_election(
                self.topo.intra[node], bin_views, coin_rows,
                num_bins=max(2, nb) if nb > 1 else 1, winners=want,
                cp=cp, seed=derive_seed(self.sim.trial_seed, "election",
                                        level, node.index),
                corrupted=self.sim.corrupted, strategy=self.sim.strategy,
                ctx=self.sim.ctx, metrics=self.sim.metrics, procs=members,
                word_width=p.word_bits, phase="election",
                trace=self.sim.trace)
            if outcome.bad:
                self.stats["bad_elections"] += 1
            agg = self.stats["election_agreement"]
            agg[level] = min(agg.get(level, 1.0), outcome.agreement)
            winner_owners = [owners[j] for j in outcome.winners]
            self.sim.post_event(
                "election-outcome", level=level, node=(node.level, node.index),
                winners=winner_owners,
                holders=list(self.topo.members[self.topo.parent(node)]))
            # promote: members lift their own winners' remaining blocks
            self._promote(node, owners, member_views, winner_owners, level)
            winners_upward[node] = winner_owners
        # group winners under parent nodes for the next level
        nxt: dict = {}
        for node, owner_list in winners_upward.items():
            parent = self.topo.parent(node)
            nxt.setdefault(parent, []).extend(owner_list)
        return nxt

    def _remaining_tags(self, level: int):
        tags = []
        for lv in range(level + 1, self.params.root_level):
            r = self.params.candidates_at_level(lv)
            tags.append(("bin", lv))
            tags.extend(("coin", lv, t) for t in range(1, r + 1))
        tags.append(("root",))
        tags.extend(("gcs", j) for j in range(self.gcs_len))
        return tags

    def _promote(self, node: NodeId, owners, member_views, canonical_winners,
                 level: int):
        """Lift the canonical winners' remaining blocks to the parent.

        Members whose decided winner set disagrees with the canonical one
        withhold their lift for arrays they did not elect (their shares are
        simply missing above), which is the honest consequence of election
        disagreement.
        """
        p = self.params
        tags = self._remaining_tags(level)
        wids = []
        for owner in canonical_winners:
            arr = self.word_owner_arrays[owner]
            wids.extend(arr[tag] for tag in tags if tag in arr)
        # members that elected a different set drop their contribution for
        # the difference: emulate by erasing their shares of non-elected
        # winners before the lift
        members = self.topo.members[node]
        for slot, proc in enumerate(members):
            _mb, win = member_views[slot]
            mine = {owners[j] for j in win}
            for owner in canonical_winners:
                if owner in mine:
                    continue
                arr = self.word_owner_arrays[owner]
                drop = {arr[tag] for tag in tags if tag in arr}
                for key in [k for k, _ in list(self.sim.stores[proc].items())
                            if self.subs[k[0]].word in drop
                            and self.subs[k[0]].node == node]:
                    self.sim.store_erase(proc, key)
        self.send_secret_up(node, wids)
        # winners' good-array bookkeeping
        good = sum(1 for o in canonical_winners
                   if o not in self.sim.corrupted)
        frac = good / max(1, len(canonical_winners))
        lvl_stats = self.stats["winner_good_fraction"]
        prev = lvl_stats.get(level, [])
        prev.append(frac)
        lvl_stats[level] = prev

    # -- root agreement -------------------------------------------------------

    def root_agreement(self, contestants) -> np.ndarray:
        """Input-bit agreement across the whole network, one sealed word
        revealed per round; commits are confidence-gated (-1 = confused)."""
        p = self.params
        root = self.topo.root
        rounds = max(1, len(contestants))
        cp = coinba.CoinBAParams(epsilon=p.epsilon, epsilon0=p.epsilon / 5,
                                 rounds=rounds)
        st = coinba.Stepper(
            self.topo.intra[root], self.inputs, cp,
            derive_seed(self.sim.trial_seed, "root"),
            corrupted=self.sim.corrupted, strategy=self.sim.strategy,
            ctx=self.sim.ctx, metrics=self.sim.metrics, phase="root",
            trace=self.sim.trace)
        for i, owner in enumerate(contestants):
            wid = self.word_owner_arrays[owner][("root",)]
            views = self.reveal_words(root, [wid])[:, 0]
            coin = np.where(views >= 0, views & 1, -1).astype(np.int8)
            self.stats["root_coin_bits_used"] = 1  # bits consumed per block
            st.advance(coin)
        self.root_records = st.records
        return st.commits("confident")[:, 0]

    # -- public coin words ------------------------------------------------------

    def reveal_gcs(self, contestants):
        """Reveal each surviving array's public-coin words at the root.

        Returns (sequence entries, per-processor views).  An entry is
        (value, fraction of good processors that learned it, owner_good);
        owner_good is False when the owner was corrupted before its array
        was dealt -- those words are excluded from the "random" count.
        """
        p = self.params
        root = self.topo.root
        corrupted = self.sim.corrupted
        good_procs = [pr for pr in range(p.n) if pr not in corrupted]
        entries = []
        views_all = np.full((p.n, max(1, self.gcs_len) * len(contestants)),
                            UNKNOWN, dtype=np.int64)
        col = 0
        for owner in contestants:
            arr = self.word_owner_arrays[owner]
            for j in range(self.gcs_len):
                wid = arr.get(("gcs", j))
                if wid is None:
                    continue
                views = self.reveal_words(root, [wid])[:, 0]
                true_val = self.words[wid].value
                known = sum(1 for pr in good_procs if views[pr] == true_val)
                entries.append((int(true_val),
                                known / max(1, len(good_procs)),
                                owner not in corrupted))
                views_all[:, col] = views
                col += 1
        return entries, views_all[:, :col]

    # -- full protocol ----------------------------------------------------------

    def run(self) -> AebaResult:
        p = self.params
        self.deal_arrays()
        # leaves lift everything to level 2 before any election
        for leaf in self.topo.nodes_at(1):
            owner = leaf.index
            arr = self.word_owner_arrays[owner]
            self.send_secret_up(leaf, list(arr.values()))

        candidates = {}
        for leaf in self.topo.nodes_at(1):
            parent = self.topo.parent(leaf)
            candidates.setdefault(parent, []).append(leaf.index)
        for level in range(2, p.root_level):
            candidates = self.run_level(level, candidates)

        root_contestants = candidates.get(self.topo.root, [])
        outputs = self.root_agreement(root_contestants)

        gcs_entries, gcs_views = ([], None)
        if self.gcs_len:
            gcs_entries, gcs_views = self.reveal_gcs(root_contestants)

        classification = classify_nodes(self.topo, self.sim.corrupted)
        good_nodes = {nd for nd, v in classification.items() if v == GOOD}
        violations = self.sim.ledger.violations(good_nodes)
        self.stats["secrecy_violations"] = violations
        self.stats["root_contestants"] = list(root_contestants)
        wf = self.stats["winner_good_fraction"]
        self.stats["winner_good_fraction"] = {
            lv: sum(v) / len(v) for lv, v in wf.items()}
        return AebaResult(outputs=outputs, metrics=self.sim.metrics,
                          stats=self.stats, gcs=gcs_entries,
                          gcs_views=gcs_views,
                          corrupted=frozenset(self.sim.corrupted),
                          trial_valid=not self.sim.invalid)


def _poly_eval(coeffs, x, p):
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def run_aeba(params: ProtocolParams, inputs, strategy, trial_seed: int,
             topology=None, gcs_len: int = 0, metadata_visible=True,
             trace=None) -> AebaResult:
    """Build a simulation and run the whole tree protocol once."""
    from .topology import build_topology

    topo = topology if topology is not None else build_topology(params)
    sim = Simulation(params, topo, strategy, trial_seed,
                     metadata_visible=metadata_visible, trace=trace)
    proto = TreeProtocol(sim, inputs, gcs_len=gcs_len)
    return proto.run()


def run_gcs(params: ProtocolParams, s_len: int, strategy, trial_seed: int,
            topology=None) -> AebaResult:
    """Run the protocol for its public-coin sequence: every array carries
    coin words revealed at the root after the elections."""
    per_array = max(1, -(-s_len // (params.q * params.w)))
    inputs = np.zeros(params.n, dtype=np.int8)
    return run_aeba(params, inputs, strategy, trial_seed, topology=topology,
                    gcs_len=per_array)
