"""Event-driven simulation core.

A single totally ordered event loop drives every in-flight query, claim
exchange, reservation timeout and process release.  Query lifecycles
are generators that yield transit delays; everything they mutate is
therefore mutated at the simulated instant it happens, so concurrent
queries contend for resources exactly in event order.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import SimulationError
from .metrics import (MessageTally, QueryTrace, Snapshot, VisitRecord,
                      compute_mra, compute_raa)
from .overlay import Overlay, anycast_forward
from .query import (AttributeCondition, PivotMatcher, Query,
                    aggregate_results, split_query)
from .rmc import Directory, Reservation, Rmc, audit_pools
from .rng import substream
from .strategies import Strategy, frw_forward
from .topology import (ALL_TYPES, CONTROL_BYTES, CORE_ATTRS,
                       DESCRIPTION_BYTES, CoreType, SystemTopology,
                       chip_stamp, node_stamp)


class EventLoop:
    def __init__(self):
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.now = 0

    def schedule(self, time_ns: int, fn: Callable[[], None]) -> None:
        if time_ns < self.now:
            raise SimulationError("event scheduled in the past", self.now)
        heapq.heappush(self._heap, (time_ns, self._seq, fn))
        self._seq += 1

    def pending(self) -> bool:
        return bool(self._heap)

    def run(self) -> None:
        while self._heap:
            time_ns, _, fn = heapq.heappop(self._heap)
            if time_ns < self.now:
                raise SimulationError("event order violated", self.now)
            self.now = time_ns
            fn()


@dataclass
class EngineConfig:
    base_proc_ns: int = 10_000          # fixed local handling cost per query
    visit_proc_ns: int = 1_000          # handling cost per provider visit
    reservation_window_ns: int = 8_000_000_000
    dwell_ns: int = 0                   # free pool dwell before sharing
    checkpoint_ns: int = 20_000_000_000
    claim_rounds: int = 3               # discovery re-entries after lost claims
    compute_mra: bool = True
    keep_visits: bool = False
    keep_snapshots: bool = False
    hotspot_threshold: float = 0.9


@dataclass(frozen=True)
class ClaimMessage:
    runner: "QueryRunner"
    query_id: int
    rids: tuple[int, ...]


class Engine:
    def __init__(self, topo: SystemTopology, overlay: Overlay,
                 rmcs: list[Rmc], directory: Directory, strategy: Strategy,
                 seed: int, cfg: EngineConfig, window_ns: tuple[int, int],
                 setting: str = ""):
        self.topo = topo
        self.overlay = overlay
        self.rmcs = {r.rmc_id: r for r in rmcs}
        self.directory = directory
        self.strategy = strategy
        self.seed = seed
        self.cfg = cfg
        self.setting = setting
        self.loop = EventLoop()
        self.tally = MessageTally(window_ns)
        self.traces: list[QueryTrace] = []
        self.pool_log: list[tuple[int, int, int, int, int]] = []
        self.claim_buffers: dict[tuple[int, int], list[ClaimMessage]] = {}
        self.in_transit: set[int] = set()  # granted, adoption pending
        self.walk_rng = substream(seed, "walk")
        self.avail = np.zeros((topo.params.nodes, len(ALL_TYPES)), dtype=np.int64)
        for rmc in rmcs:
            for rid in rmc.free:
                self._avail_add(rid, +1)
            # initial pools become shareable once the dwell passes
            self._schedule_promotion(rmc)
        self._active = 0
        self._checkpoint_scheduled = False

    # -- availability bookkeeping -------------------------------------------

    def _avail_add(self, rid: int, delta: int) -> None:
        self.avail[self.topo.core_node[rid], int(self.topo.core_type[rid])] += delta

    def recompute_avail(self) -> np.ndarray:
        """Reference recount used by audits."""
        fresh = np.zeros_like(self.avail)
        for rmc in self.rmcs.values():
            for rid in rmc.free:
                fresh[self.topo.core_node[rid], int(self.topo.core_type[rid])] += 1
            for rid in rmc.free_ownership:
                if rid not in rmc.marks:
                    fresh[self.topo.core_node[rid], int(self.topo.core_type[rid])] += 1
        return fresh

    # -- pool transitions (all engine-mediated for the count matrix) ---------

    def reserve(self, rmc: Rmc, rid: int, res: Reservation) -> None:
        available = rid in rmc.free or (rid in rmc.free_ownership
                                        and rid not in rmc.marks)
        rmc.reserve_local(rid, res)
        if available:
            self._avail_add(rid, -1)

    def mark(self, rmc: Rmc, rid: int, query_id: int) -> bool:
        fresh = rid not in rmc.marks
        if not rmc.mark(rid, query_id, self.loop.now):
            return False
        if fresh:
            self._avail_add(rid, -1)
        t = self.loop.now
        # stale expiries no-op, so refreshing a mark just rearms the timer
        self.loop.schedule(
            t + self.cfg.reservation_window_ns,
            lambda: self._expire_mark(rmc, rid, query_id, t))
        return True

    def unmark(self, rmc: Rmc, rid: int, query_id: int) -> None:
        if rmc.marks.get(rid, (None,))[0] == query_id:
            rmc.unmark(rid, query_id)
            self._avail_add(rid, +1)

    def _expire_mark(self, rmc: Rmc, rid: int, query_id: int, t: int) -> None:
        if rmc.expire_mark(rid, query_id, t):
            self._avail_add(rid, +1)

    def release_process(self, rmc: Rmc, process_id: int) -> list[int]:
        freed = rmc.release(process_id, self.loop.now)
        for rid in freed:
            self._avail_add(rid, +1)
        self._schedule_promotion(rmc)
        return freed

    def return_to_pool(self, rmc: Rmc, rid: int, process_id: int) -> bool:
        if not rmc.drop_reservation(rid, process_id, self.loop.now):
            return False
        self._avail_add(rid, +1)
        self._schedule_promotion(rmc)
        return True

    def _schedule_promotion(self, rmc: Rmc) -> None:
        if self.cfg.dwell_ns == 0:
            rmc.promote_free_to_ownership(self.loop.now, 0)
        else:
            self.loop.schedule(
                self.loop.now + self.cfg.dwell_ns,
                lambda: rmc.promote_free_to_ownership(self.loop.now,
                                                      self.cfg.dwell_ns))

    # -- messaging ------------------------------------------------------------

    def head_of(self, vid: int) -> int:
        return self.overlay.head_of(vid)

    def transit_vnodes(self, src_vid: int, dst_vid: int, size: int) -> int:
        return self.topo.transit_ns(self.head_of(src_vid), self.head_of(dst_vid), size)

    def count_message(self, src_vid: int, dst_vid: int, size: int) -> None:
        self.tally.add(self.loop.now, src_vid, dst_vid,
                       self.overlay.by_id[src_vid].node,
                       self.overlay.by_id[dst_vid].node, size)

    # -- claims ----------------------------------------------------------------

    def enqueue_claim(self, owner_id: int, arrival_ns: int,
                      claim: ClaimMessage) -> None:
        key = (owner_id, arrival_ns)
        buf = self.claim_buffers.setdefault(key, [])
        buf.append(claim)
        if len(buf) == 1:
            self.loop.schedule(arrival_ns,
                               lambda: self._process_claims(owner_id, arrival_ns))

    def _process_claims(self, owner_id: int, t: int) -> None:
        claims = self.claim_buffers.pop((owner_id, t))
        # simultaneous arrivals are served in a random order
        rng = substream(self.seed, "contention", owner_id, t)
        rng.shuffle(claims)
        owner = self.rmcs[owner_id]
        for claim in claims:
            # a mark may have expired in flight, making the resource count
            # as available again; granted transfers must uncount it here
            counted = {rid: rid in owner.free
                       or (rid in owner.free_ownership and rid not in owner.marks)
                       for rid in claim.rids}
            verdicts = owner.handle_remote_claim(claim.query_id, list(claim.rids))
            for rid, verdict in verdicts.items():
                if verdict == "granted":
                    self.in_transit.add(rid)
                    if counted[rid]:
                        self._avail_add(rid, -1)
            runner = claim.runner
            self.count_message(owner.home_vnode, runner.rmc.home_vnode,
                               CONTROL_BYTES)
            runner.msg_count += 1
            delay = self.transit_vnodes(owner.home_vnode, runner.rmc.home_vnode,
                                        CONTROL_BYTES)
            self.loop.schedule(
                t + delay,
                lambda r=runner, o=owner_id, v=verdicts: r.on_claim_response(o, v))

    # -- run control -------------------------------------------------------------

    def submit(self, query: Query, rmc_id: int, start_ns: int,
               duration_ns: int) -> None:
        split_query(query)  # validates
        runner = QueryRunner(self, query, self.rmcs[rmc_id], duration_ns)
        self._active += 1
        self.loop.schedule(start_ns, runner.start)
        if not self._checkpoint_scheduled:
            self._checkpoint_scheduled = True
            self.loop.schedule(self.cfg.checkpoint_ns, self._checkpoint)

    def _checkpoint(self) -> None:
        self.audit_now()
        if self.loop.pending():
            self.loop.schedule(self.loop.now + self.cfg.checkpoint_ns,
                               self._checkpoint)

    def audit_now(self) -> None:
        problems = audit_pools(sorted(self.rmcs.values(),
                                      key=lambda r: r.rmc_id),
                               self.directory, self.in_transit)
        if not np.array_equal(self.avail, self.recompute_avail()):
            problems.append("availability counts drifted from pool state")
        t = self.loop.now
        if self.pool_log and self.pool_log[-1][0] == t:
            del self.pool_log[-len(self.rmcs):]  # refresh same-instant snapshot
        for rmc_id in sorted(self.rmcs):
            r = self.rmcs[rmc_id]
            self.pool_log.append((t, rmc_id, len(r.reserved), len(r.free),
                                  len(r.free_ownership)))
        if problems:
            raise SimulationError("pool audit failed: " + "; ".join(problems[:5]),
                                  t)

    def run(self) -> None:
        self.loop.run()
        self.audit_now()

    def core_stamp(self, rid: int) -> dict[str, object]:
        """Attributes of one core plus its chip and node context, so
        conditions at any layer can be credited against it."""
        t = self.topo.core_type[rid]
        stamp: dict[str, object] = {"core_type": t.letter}
        stamp.update(dict(CORE_ATTRS[t].as_stamp()))
        stamp["types"] = chip_stamp(self.topo, self.topo.core_chip[rid])["types"]
        node = node_stamp(self.topo, self.topo.core_node[rid])[0]
        stamp.update((k, v) for k, v in node.items() if k.startswith("bucket:"))
        return stamp


class QueryRunner:
    """State machine for one query, driven by the event loop."""

    def __init__(self, engine: Engine, query: Query, rmc: Rmc,
                 duration_ns: int):
        self.e = engine
        self.query = query
        self.rmc = rmc
        self.duration_ns = duration_ns
        self.msg_count = 0
        self.selections: list[list[int]] = [[] for _ in query.groups]
        self.local_picks: list[list[int]] = [[] for _ in query.groups]
        self.matchers: dict[int, PivotMatcher] = {}
        self.marked: dict[int, set[int]] = {}
        self.exclusions: set[int] = set()
        self.decisions: list[tuple] = []
        self.pos: int = rmc.home_vnode
        self.trace = QueryTrace(
            query_id=query.query_id,
            strategy=engine.strategy.name,
            seed=engine.seed,
            system_size=engine.topo.params.total_cores,
            setting=engine.setting,
            start_ns=0,
        )
        self._gen: Iterator | None = None
        self._claims_pending = 0
        self._claim_results: dict[int, dict[int, str]] = {}

    # -- generator driving -----------------------------------------------------

    def start(self) -> None:
        self.trace.start_ns = self.e.loop.now
        self._gen = self._lifecycle()
        self.step()

    def step(self) -> None:
        assert self._gen is not None
        while True:
            try:
                signal = next(self._gen)
            except StopIteration:
                return
            if signal == "suspend":
                return
            delay = int(signal)
            if delay > 0:
                self.e.loop.schedule(self.e.loop.now + delay, self.step)
                return
            # zero-delay continuations stay within the current instant

    def on_claim_response(self, owner_id: int, verdicts: dict[int, str]) -> None:
        self._claim_results[owner_id] = verdicts
        self._claims_pending -= 1
        if self._claims_pending == 0:
            self.step()

    # -- helpers ----------------------------------------------------------------

    def _send(self, dst_vid: int, size: int):
        """Charge one message from the current position and move there."""
        if self.pos != dst_vid:
            self.e.count_message(self.pos, dst_vid, size)
            self.msg_count += 1
            delay = self.e.transit_vnodes(self.pos, dst_vid, size)
            self.pos = dst_vid
            yield delay

    def _record_visit(self, layer: str, provider: int, anchor_node: int,
                      found: tuple[int, ...] = (), msgs: int = 0) -> None:
        if not self.e.cfg.keep_visits:
            return
        dist = self.e.topo.node_latency_ns(anchor_node,
                                           self.e.overlay.by_id[provider].node)
        self.trace.visits.append(VisitRecord(
            self.e.loop.now, provider, layer, dist, msgs, found))

    def _an_qualifies(self, sub, provider: int) -> bool:
        stamp = self.e.overlay.an_stamps.get(provider)
        if stamp is None:
            return False
        return all(c.matches(stamp) for c in sub.conds_for("an"))

    def _node_qualifies(self, sub, provider: int) -> bool:
        """Node-level conditions checked by the provider on its own node.

        Every provider can evaluate these locally; what distinguishes
        the strategies is whether their forwarding tables see the same
        information before paying the visit.
        """
        conds = sub.conds_for("sn")
        if not conds:
            return True
        ov = self.e.overlay
        stamp = ov.node_stamp(ov.by_id[provider].node)
        return all(c.matches(stamp) for c in conds)

    # -- lifecycle ----------------------------------------------------------------

    def _lifecycle(self):
        e, q = self.e, self.query
        selections, remote, decisions = self.rmc.local_request(
            q, q.query_id, e.topo)
        self.decisions = decisions
        for gi, picks in enumerate(selections):
            for rid in picks:
                e._avail_add(rid, -1)
            self.selections[gi] = list(picks)
            self.local_picks[gi] = list(picks)
        yield e.cfg.base_proc_ns

        if remote:
            origin = e.overlay.vnode_provider[self.rmc.home_vnode]
            pending = sorted({gi for gi, _ in remote})
            rounds = 0
            while True:
                yield from self._send(origin, DESCRIPTION_BYTES)
                for gi in pending:
                    yield from self._explore_group(gi, origin)
                yield from self._send(self.rmc.home_vnode, DESCRIPTION_BYTES)
                granted, lost = yield from self._trade(pending)
                rounds += 1
                if not lost or rounds >= e.cfg.claim_rounds or not granted:
                    break
                pending = [gi for gi in pending
                           if len(self.selections[gi]) < q.groups[gi].count]
                if not pending:
                    break
        self._finalize()

    # -- exploration -----------------------------------------------------------

    def _explore_group(self, gi: int, origin: int):
        e, q = self.e, self.query
        sub = q.groups[gi]
        matcher = PivotMatcher(sub.count, sub.comm_bound(), e.topo.latency_ns,
                               seed_members=self.selections[gi])
        self.matchers[gi] = matcher
        self.marked.setdefault(gi, set())
        if matcher.satisfied:
            return
        visited_an: set[int] = set()
        if e.strategy.layers == 3:
            yield from self._layered_walk(gi, origin, visited_an)
        else:
            yield from self._flat_walk(gi, origin, visited_an)

    def _layered_walk(self, gi: int, origin: int, visited_an: set[int]):
        e = self.e
        sub = self.query.groups[gi]
        matcher = self.matchers[gi]
        # node stamps advertise present types, so forwarding skips nodes
        # that provably cannot host the group
        coverage = AttributeCondition(layer="sn", attribute="covers_type",
                                      op="eq", value=sub.core_type_letter)
        sn_conds = sub.conds_for("sn") + (coverage,)
        anchor_sn = e.overlay.an_provider.get(origin, origin)
        anchor_node = e.overlay.by_id[anchor_sn].node
        visited_sn: set[int] = set()
        while not matcher.satisfied:
            target = anycast_forward(e.overlay, sn_conds, anchor_sn, visited_sn)
            if target is None:
                break
            visited_sn.add(target)
            yield from self._send(target, DESCRIPTION_BYTES)
            yield e.cfg.visit_proc_ns
            self._record_visit("sn", target, anchor_node)
            if target in e.overlay.ln_groups and self._an_qualifies(sub, target):
                yield from self._scan_provider(gi, target)
            if matcher.satisfied:
                break
            yield from self._guided_walk(
                gi, root=target, visited=visited_an,
                anchor_node=e.overlay.by_id[target].node)

    def _flat_walk(self, gi: int, origin: int, visited: set[int]):
        e = self.e
        sub = self.query.groups[gi]
        anchor_node = e.overlay.by_id[origin].node
        visited.add(origin)
        self._record_visit("an", origin, anchor_node)
        yield e.cfg.visit_proc_ns
        if self._an_qualifies(sub, origin) and self._node_qualifies(sub, origin):
            yield from self._scan_provider(gi, origin)
        yield from self._guided_walk(gi, root=origin, visited=visited,
                                     anchor_node=anchor_node)

    def _guided_walk(self, gi: int, root: int, visited: set[int],
                     anchor_node: int):
        """Depth-first walk over providers from the root; the strategy
        picks among unvisited neighbors, exhaustion backtracks."""
        e = self.e
        sub = self.query.groups[gi]
        matcher = self.matchers[gi]
        record = e.strategy.record_key(sub)
        stack = [root]
        while stack and not matcher.satisfied:
            guide = stack[-1]
            if e.strategy.guidance == "dpt":
                nxt = e.overlay.dpts[guide].select_next(record, visited)
            else:
                nxt = frw_forward(e.overlay.neighbors.get(guide, ()), visited,
                                  e.walk_rng)
            if nxt is None:
                stack.pop()
                if stack:
                    yield from self._send(stack[-1], CONTROL_BYTES)
                continue
            visited.add(nxt)
            yield from self._send(nxt, DESCRIPTION_BYTES)
            yield e.cfg.visit_proc_ns
            self._record_visit("an", nxt, anchor_node)
            an_ok = self._an_qualifies(sub, nxt)
            qualifies = an_ok and self._node_qualifies(sub, nxt)
            need_before = sub.count - len(matcher.selected)
            found = 0
            available_before = 0
            if qualifies:
                if e.strategy.broadcast:
                    found, available_before = yield from self._broadcast_scan(gi, nxt)
                else:
                    found, available_before = yield from self._scan_provider(gi, nxt)
            if e.strategy.guidance == "dpt":
                if e.strategy.sn_blind and an_ok and not qualifies:
                    # these tables track chip-level truth only, so a
                    # node-level refusal still reads as "type present"
                    e.overlay.dpts[guide].update(record, nxt, success=True)
                else:
                    e.overlay.dpts[guide].update(
                        record, nxt,
                        success=found > 0,
                        full_match=qualifies and 0 < need_before <= available_before,
                        exhausted=not qualifies or available_before == 0)
            stack.append(nxt)

    # -- provider scans -----------------------------------------------------------

    def _collect_candidates(self, gi: int, provider: int,
                            vids: list[int]) -> list[int]:
        """Available matching cores of the given vnodes, nearest first."""
        e = self.e
        sub = self.query.groups[gi]
        matcher = self.matchers[gi]
        conds = sub.conds_for("ln")
        head = e.head_of(provider)
        chosen = set(matcher.selected) | self.exclusions
        for sel in self.selections:
            chosen.update(sel)
        cands: list[tuple[int, int]] = []
        for vid in vids:
            v = e.overlay.by_id[vid]
            stamp = {"core_type": v.core_type.letter,
                     **dict(CORE_ATTRS[v.core_type].as_stamp())}
            if sub.mode == "exact" and not all(c.matches(stamp) for c in conds):
                continue
            for rid in v.members:
                if rid in chosen:
                    continue
                owner = e.rmcs[e.directory.owner[rid]]
                if not owner.is_available(rid, self.query.query_id):
                    continue
                cands.append((e.topo.latency_ns(head, rid), rid))
        cands.sort()
        return [rid for _, rid in cands]

    def _offer_candidates(self, gi: int, rids: list[int]) -> int:
        e = self.e
        matcher = self.matchers[gi]
        found = 0
        for rid in rids:
            if matcher.satisfied:
                break
            action = matcher.offer(rid)
            if action in ("pivot", "accept", "switch"):
                owner = e.rmcs[e.directory.owner[rid]]
                if not e.mark(owner, rid, self.query.query_id):
                    raise SimulationError("mark refused on available resource",
                                          e.loop.now)
                self.marked[gi].add(rid)
                found += 1
        return found

    def _scan_provider(self, gi: int, provider: int):
        """Ring lookup at the provider; matched resources are marked."""
        e = self.e
        sub = self.query.groups[gi]
        ring = e.overlay.ln_groups[provider].ring
        letter = sub.core_type_letter
        ct = CoreType[letter]
        key = (("core_type", letter),) + CORE_ATTRS[ct].as_stamp()
        if sub.mode == "similar":
            target = {"core_type": letter, **dict(CORE_ATTRS[ct].as_stamp())}
            siblings, path = ring.lookup_similar(target, provider)
        else:
            siblings, path = ring.lookup_exact(key, provider)
        scan_msgs = 0
        prev = path[0] if path else provider
        for nxt in path[1:]:
            e.count_message(prev, nxt, CONTROL_BYTES)
            self.msg_count += 1
            scan_msgs += 1
            yield e.topo.transit_ns(e.head_of(prev), e.head_of(nxt),
                                    CONTROL_BYTES)
            prev = nxt
        cands = self._collect_candidates(gi, provider, sorted(siblings))
        available_before = len(cands)
        found = self._offer_candidates(gi, cands)
        self._record_visit("ln", provider,
                           e.overlay.by_id[provider].node,
                           found=tuple(cands[:found]), msgs=scan_msgs)
        return found, available_before

    def _broadcast_scan(self, gi: int, provider: int):
        """Ask every ring member at once; one message per member."""
        e = self.e
        ring = e.overlay.ln_groups[provider].ring
        members = [vid for vid in ring.participants if vid != provider]
        longest = 0
        for vid in members:
            e.count_message(provider, vid, DESCRIPTION_BYTES)
            self.msg_count += 1
            longest = max(longest, e.transit_vnodes(provider, vid,
                                                    DESCRIPTION_BYTES))
        if members:
            yield 2 * longest  # answers come back in parallel
        cands = self._collect_candidates(gi, provider, ring.participants)
        available_before = len(cands)
        found = self._offer_candidates(gi, cands)
        self._record_visit("ln", provider, e.overlay.by_id[provider].node,
                           found=tuple(cands[:found]), msgs=len(members))
        return found, available_before

    # -- trading --------------------------------------------------------------------

    def _trade(self, pending: list[int]):
        e, q = self.e, self.query
        claim_gi: dict[int, int] = {}
        by_owner: dict[int, list[int]] = {}
        granted: list[int] = []
        for gi in pending:
            matcher = self.matchers.get(gi)
            if matcher is None:
                continue
            final = matcher.result()
            for rid in sorted(self.marked[gi] - set(final)):
                owner = e.rmcs[e.directory.owner[rid]]
                e.unmark(owner, rid, q.query_id)
                self.marked[gi].discard(rid)
            for rid in final:
                if rid in self.selections[gi]:
                    continue
                owner_id = e.directory.owner[rid]
                if owner_id == self.rmc.rmc_id:
                    # own pool: take it directly, no messages
                    e.reserve(self.rmc, rid,
                              Reservation(q.query_id, gi, q.query_id))
                    self.selections[gi].append(rid)
                    self.marked[gi].discard(rid)
                    granted.append(rid)
                else:
                    claim_gi[rid] = gi
                    by_owner.setdefault(owner_id, []).append(rid)
        lost: list[int] = []
        if by_owner:
            self._claim_results = {}
            self._claims_pending = len(by_owner)
            for owner_id in sorted(by_owner):
                owner = e.rmcs[owner_id]
                rids = tuple(sorted(by_owner[owner_id]))
                e.count_message(self.rmc.home_vnode, owner.home_vnode,
                                DESCRIPTION_BYTES)
                self.msg_count += 1
                arrival = e.loop.now + e.transit_vnodes(
                    self.rmc.home_vnode, owner.home_vnode, DESCRIPTION_BYTES)
                e.enqueue_claim(owner_id, arrival,
                                ClaimMessage(self, q.query_id, rids))
            yield "suspend"
            for owner_id in sorted(self._claim_results):
                verdicts = self._claim_results[owner_id]
                for rid in sorted(verdicts):
                    gi = claim_gi[rid]
                    if verdicts[rid] == "granted":
                        e.in_transit.discard(rid)
                        e.directory.transfer(rid, self.rmc.rmc_id)
                        self.rmc.adopt(rid, e.loop.now)
                        e._avail_add(rid, +1)
                        e.reserve(self.rmc, rid,
                                  Reservation(q.query_id, gi, q.query_id))
                        self.selections[gi].append(rid)
                        self.marked[gi].discard(rid)
                        granted.append(rid)
                    else:
                        lost.append(rid)
                        self.exclusions.add(rid)
                        self.marked[gi].discard(rid)
                        owner = e.rmcs[owner_id]
                        e.unmark(owner, rid, q.query_id)
        return granted, lost

    # -- completion -------------------------------------------------------------------

    def _finalize(self) -> None:
        e, q = self.e, self.query
        now = e.loop.now
        final_selections: list[list[int]] = []
        for gi, sub in enumerate(q.groups):
            matcher = self.matchers.get(gi)
            confirmed = set(self.selections[gi])
            if matcher is not None:
                ordered = [rid for rid in matcher.result() if rid in confirmed]
                extra = [rid for rid in self.selections[gi]
                         if rid not in ordered]
                ordered.extend(extra)
            else:
                ordered = list(self.selections[gi])
            final_selections.append(ordered[:sub.count])
            keep = set(final_selections[gi])
            for rid in self.selections[gi]:
                if rid not in keep:
                    # dropped by a pivot switch: back to the free pool
                    e.return_to_pool(self.rmc, rid, q.query_id)
            for rid in sorted(self.marked.get(gi, ())):
                owner = e.rmcs[e.directory.owner[rid]]
                e.unmark(owner, rid, q.query_id)

        result = aggregate_results(q, final_selections, e.topo.latency_ns,
                                   e.core_stamp, self.msg_count,
                                   now - self.trace.start_ns)
        self.trace.finish_ns = now
        self.trace.messages = self.msg_count
        self.trace.selections = final_selections
        self.trace.raa = compute_raa(result.terms)
        if e.cfg.compute_mra:
            snap = Snapshot(node_type_free=e.avail.copy())
            small = e.topo.params.total_cores <= 64
            if small:
                ids = []
                for rmc in e.rmcs.values():
                    ids.extend(rid for rid in rmc.free)
                    ids.extend(rid for rid in rmc.free_ownership
                               if rid not in rmc.marks)
                for sel in final_selections:
                    ids.extend(sel)
                snap.explicit_ids = tuple(sorted(ids))
            for sel in final_selections:
                for rid in sel:
                    snap.node_type_free[e.topo.core_node[rid],
                                        int(e.topo.core_type[rid])] += 1
            self.trace.mra = compute_mra(q, snap, e.topo)
            self.trace.mra_unavailable = self.trace.mra is None
            if e.cfg.keep_snapshots:
                self.trace.snapshot = snap
        e.traces.append(self.trace)

        if any(final_selections):
            end = now + self.duration_ns
            self.trace.release_ns = end
            e.loop.schedule(end, lambda: e.release_process(self.rmc, q.query_id))
        else:
            self.trace.release_ns = now
        e._active -= 1
