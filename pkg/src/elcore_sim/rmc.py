"""Resource management component (RMC).

Each instance owns a set of resources and keeps them in three disjoint
pools: reserved (bound to a process), free (released, private), and
free-ownership (claimable by remote instances).  Remote discovery only
ever sees the free-ownership pool; a discovery mark hides a resource
from everyone but the marking query until it is claimed or the mark
times out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .metrics import qualifying_types
from .query import Query, SubQuery
from .topology import ALL_TYPES, SystemTopology, chip_stamp, node_stamp

log = logging.getLogger(__name__)


@dataclass
class Reservation:
    process_id: int
    group_index: int
    query_id: int


@dataclass
class MigrationAction:
    process_id: int
    old_resource: int
    new_resource: int


class Rmc:
    def __init__(self, rmc_id: int, home_vnode: int, home_core: int,
                 vnode_ids: list[int], resources: list[int],
                 topo: SystemTopology):
        self.rmc_id = rmc_id
        self.home_vnode = home_vnode
        self.home_core = home_core
        self.vnode_ids = list(vnode_ids)
        self.topo = topo
        self.reserved: dict[int, Reservation] = {}
        self.free: dict[int, int] = {rid: 0 for rid in sorted(resources)}
        self.free_ownership: dict[int, int] = {}
        self.marks: dict[int, tuple[int, int]] = {}  # rid -> (query_id, time)
        self.by_process: dict[int, list[int]] = {}
        self._ctx_cache: dict[tuple, dict[tuple[int, int], bool]] = {}

    # -- pool mechanics -----------------------------------------------------

    def owned(self) -> set[int]:
        return set(self.reserved) | set(self.free) | set(self.free_ownership)

    def is_available(self, rid: int, query_id: int | None = None) -> bool:
        """Visible to remote discovery: in free-ownership and not marked
        for a different query."""
        if rid not in self.free_ownership:
            return False
        mark = self.marks.get(rid)
        return mark is None or (query_id is not None and mark[0] == query_id)

    def mark(self, rid: int, query_id: int, now: int) -> bool:
        if not self.is_available(rid, query_id):
            return False
        self.marks[rid] = (query_id, now)
        return True

    def unmark(self, rid: int, query_id: int) -> None:
        mark = self.marks.get(rid)
        if mark and mark[0] == query_id:
            del self.marks[rid]

    def expire_mark(self, rid: int, query_id: int, marked_at: int) -> bool:
        """Timeout sweep: drop the mark if it is still the same one."""
        if self.marks.get(rid) == (query_id, marked_at):
            del self.marks[rid]
            return True
        return False

    def reserve_local(self, rid: int, res: Reservation) -> None:
        if rid in self.free:
            del self.free[rid]
        elif rid in self.free_ownership:
            del self.free_ownership[rid]
            self.marks.pop(rid, None)
        else:
            raise ConfigurationError(f"resource {rid} is not free at rmc {self.rmc_id}")
        self.reserved[rid] = res
        self.by_process.setdefault(res.process_id, []).append(rid)

    def release(self, process_id: int, now: int) -> list[int]:
        """Reserved resources of the process return to the free pool.
        Unknown processes are ignored with a warning; repeats are no-ops."""
        rids = self.by_process.pop(process_id, None)
        if rids is None:
            log.warning("rmc %d: release of unknown process %d",
                        self.rmc_id, process_id)
            return []
        out = []
        for rid in rids:
            if self.reserved.pop(rid, None) is not None:
                self.free[rid] = now
                out.append(rid)
        return out

    def drop_reservation(self, rid: int, process_id: int, now: int) -> bool:
        """Give back one reserved resource without ending the process."""
        res = self.reserved.get(rid)
        if res is None or res.process_id != process_id:
            return False
        del self.reserved[rid]
        members = self.by_process.get(process_id, [])
        if rid in members:
            members.remove(rid)
        self.free[rid] = now
        return True

    def promote_free_to_ownership(self, now: int, dwell_ns: int) -> list[int]:
        moved = [rid for rid, ts in self.free.items() if now - ts >= dwell_ns]
        for rid in moved:
            self.free_ownership[rid] = self.free.pop(rid)
        return moved

    # -- local request handling ---------------------------------------------

    def _context_ok(self, sub: SubQuery, rid: int) -> bool:
        """Chip and node level conditions, evaluated on local knowledge."""
        an_conds = sub.conds_for("an")
        sn_conds = sub.conds_for("sn")
        if not an_conds and not sn_conds:
            return True
        key = tuple((c.layer, c.attribute, c.op, c.value, c.lo, c.hi)
                    for c in an_conds + sn_conds)
        verdicts = self._ctx_cache.setdefault(key, {})
        place = (self.topo.core_chip[rid], self.topo.core_node[rid])
        ok = verdicts.get(place)
        if ok is None:
            cs = chip_stamp(self.topo, place[0])
            ns = node_stamp(self.topo, place[1])[0]
            ok = (all(c.matches(cs) for c in an_conds)
                  and all(c.matches(ns) for c in sn_conds))
            verdicts[place] = ok
        return ok

    def find_free_resource(self, sub: SubQuery, exclude: set[int],
                           anchor: int | None) -> int | None:
        """Nearest unclaimed local resource matching the descriptor.

        Searches the free pool first, then free-ownership; marked
        resources belong to someone else's in-flight query and are
        skipped.
        """
        letters = {ALL_TYPES[t].letter for t in qualifying_types(sub.conds_for("ln"))}
        near = anchor if anchor is not None else self.home_core
        best: tuple[int, int] | None = None
        for pool in (self.free, self.free_ownership):
            for rid in pool:
                if rid in exclude or rid in self.marks:
                    continue
                if self.topo.core_type[rid].letter not in letters:
                    continue
                if not self._context_ok(sub, rid):
                    continue
                d = self.topo.latency_ns(near, rid)
                if best is None or (d, rid) < best:
                    best = (d, rid)
            if best is not None:
                return best[1]
        return None

    def local_request(self, query: Query, process_id: int,
                      topo: SystemTopology) -> tuple[list[list[int]],
                                                     list[tuple[int, int]],
                                                     list[tuple]]:
        """One pass of the local allocation procedure.

        For each requested group, repeatedly pick a free local resource
        matching the descriptor and check its dependency constraints
        against what is already picked; on a miss or a failed check the
        group's remaining count is deferred to the remote batch and the
        pass moves on.  Discovery for the whole batch is invoked once by
        the caller.  Returns (per-group picks, remote batch, decisions).
        """
        selections: list[list[int]] = [[] for _ in query.groups]
        remote: list[tuple[int, int]] = []
        decisions: list[tuple] = []
        taken: set[int] = set()
        for gi, sub in enumerate(query.groups):
            remaining = sub.count
            while remaining > 0:
                anchor = selections[gi][-1] if selections[gi] else None
                rid = self.find_free_resource(sub, taken, anchor)
                if rid is None:
                    decisions.append(("defer", gi, "no-local", remaining))
                    remote.append((gi, remaining))
                    break
                if not self._dependencies_ok(query, gi, selections, rid, topo):
                    decisions.append(("defer", gi, "dependency", remaining))
                    remote.append((gi, remaining))
                    break
                self.reserve_local(rid, Reservation(process_id, gi, query.query_id))
                selections[gi].append(rid)
                taken.add(rid)
                decisions.append(("local", gi, rid))
                remaining -= 1
        if remote:
            decisions.append(("discover", tuple(remote)))
        return selections, remote, decisions

    @staticmethod
    def _dependencies_ok(query: Query, gi: int, selections: list[list[int]],
                         rid: int, topo: SystemTopology) -> bool:
        sub = query.groups[gi]
        picks = selections[gi]
        if picks:
            j = len(picks) - 1
            if j < len(sub.intra_links):
                if not sub.intra_links[j].contains(topo.latency_ns(picks[-1], rid)):
                    return False
        else:
            for ga, gb, bound in query.inter_links:
                if gi not in (ga, gb):
                    continue
                other = selections[gb if ga == gi else ga]
                if other and not bound.contains(topo.latency_ns(other[0], rid)):
                    return False
        return True

    # -- remote claims --------------------------------------------------------

    def handle_remote_claim(self, query_id: int, rids: list[int]) -> dict[int, str]:
        """Ownership transfer requests, processed in arrival order.

        Grants remove the resource from this instance; the caller moves
        it into the claimant's pools.
        """
        verdicts: dict[int, str] = {}
        for rid in rids:
            if rid in self.reserved:
                verdicts[rid] = "already-reserved"
            elif rid in self.free:
                verdicts[rid] = "not-shared"
            elif rid in self.free_ownership:
                mark = self.marks.get(rid)
                if mark is not None and mark[0] != query_id:
                    verdicts[rid] = "already-reserved"
                else:
                    del self.free_ownership[rid]
                    self.marks.pop(rid, None)
                    verdicts[rid] = "granted"
            else:
                verdicts[rid] = "not-owned"
        return verdicts

    def adopt(self, rid: int, now: int) -> None:
        """Receive ownership of a transferred resource."""
        self.free[rid] = now

    # -- hotspot handling ------------------------------------------------------

    def hotspot_scan(self, loads: dict[int, float], threshold: float,
                     query_lookup: dict[int, Query]) -> list[MigrationAction]:
        """Swap overloaded reserved resources for free local equivalents."""
        actions: list[MigrationAction] = []
        for rid in sorted(self.reserved):
            if loads.get(rid, 0.0) <= threshold:
                continue
            res = self.reserved[rid]
            query = query_lookup.get(res.query_id)
            if query is None:
                continue
            sub = query.groups[res.group_index]
            replacement = self.find_free_resource(sub, {rid}, rid)
            if replacement is None:
                continue
            actions.append(MigrationAction(res.process_id, rid, replacement))
        return actions

    def apply_migration(self, action: MigrationAction, now: int) -> None:
        res = self.reserved.pop(action.old_resource, None)
        if res is None:
            return
        self.free[action.old_resource] = now
        self.reserve_local(action.new_resource, res)
        members = self.by_process.get(res.process_id, [])
        if action.old_resource in members:
            members.remove(action.old_resource)


@dataclass
class Directory:
    """Global resource-to-owner map kept by the harness for routing and
    auditing; the per-instance pools stay authoritative."""

    owner: dict[int, int] = field(default_factory=dict)
    total: int = 0

    def transfer(self, rid: int, new_owner: int) -> None:
        self.owner[rid] = new_owner


def build_rmcs(topo: SystemTopology, vnodes, count: int) -> tuple[list[Rmc], Directory]:
    """Partition vnodes into contiguous blocks of near-equal core count."""
    if count < 1 or count > len(vnodes):
        raise ConfigurationError("rmc count must be in [1, vnode count]")
    ordered = sorted(vnodes, key=lambda v: v.vnode_id)
    total_cores = sum(v.size for v in ordered)
    directory = Directory(total=total_cores)
    rmcs: list[Rmc] = []
    i = 0
    cum = 0
    for k in range(count):
        target = total_cores * (k + 1) / count
        block = [ordered[i]]
        cum += ordered[i].size
        i += 1
        while i < len(ordered) and cum < target and \
                len(ordered) - i > count - k - 1:
            block.append(ordered[i])
            cum += ordered[i].size
            i += 1
        rmcs.append(_make_rmc(k, block, topo, directory))
    while i < len(ordered):  # rounding spill goes to the last instance
        v = ordered[i]
        last = rmcs[-1]
        last.vnode_ids.append(v.vnode_id)
        for rid in v.members:
            last.free[rid] = 0
            directory.owner[rid] = last.rmc_id
        i += 1
    return rmcs, directory


def _make_rmc(rmc_id: int, block: list, topo: SystemTopology,
              directory: Directory) -> Rmc:
    if not block:
        raise ConfigurationError("rmc partition produced an empty block")
    resources = [rid for v in block for rid in v.members]
    for rid in resources:
        directory.owner[rid] = rmc_id
    return Rmc(rmc_id, block[0].vnode_id, block[0].head,
               [v.vnode_id for v in block], resources, topo)


def audit_pools(rmcs: list[Rmc], directory: Directory,
                in_transit: frozenset[int] | set[int] = frozenset()) -> list[str]:
    """Disjointness, conservation, directory agreement and mark sanity.

    `in_transit` names resources granted to a claimant whose transfer
    has not arrived yet; they belong to no pool until adopted.
    """
    problems: list[str] = []
    seen: dict[int, int] = {}
    for rmc in rmcs:
        pools = [set(rmc.reserved), set(rmc.free), set(rmc.free_ownership)]
        for i in range(3):
            for j in range(i + 1, 3):
                inter = pools[i] & pools[j]
                if inter:
                    problems.append(
                        f"rmc {rmc.rmc_id}: pools overlap on {sorted(inter)[:4]}")
        for rid in set().union(*pools):
            if rid in seen:
                problems.append(f"resource {rid} owned by rmc {seen[rid]} "
                                f"and rmc {rmc.rmc_id}")
            if rid in in_transit:
                problems.append(f"resource {rid} pooled while in transit")
            seen[rid] = rmc.rmc_id
            if directory.owner.get(rid) != rmc.rmc_id:
                problems.append(f"directory disagrees on resource {rid}")
        for rid in rmc.marks:
            if rid not in rmc.free_ownership:
                problems.append(
                    f"rmc {rmc.rmc_id}: mark on non-claimable resource {rid}")
    if len(seen) + len(in_transit) != directory.total:
        problems.append(
            f"resource count drifted: {len(seen)} pooled plus "
            f"{len(in_transit)} in transit vs {directory.total} total")
    return problems
