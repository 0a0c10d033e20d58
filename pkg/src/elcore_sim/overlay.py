"""Three-layer discovery overlay over vnodes.

Roles: every vnode is a leaf (LN), a per-chip provider (AN), or a
per-node top provider (SN; only in three-layer mode).  Chip rings of
vnodes form DHTs keyed by attribute stamps, ANs of one node guide each
other with learned probability tables, and SNs form anycast groups
keyed by node-level stamps.  Two-layer mode (used by the reference
strategies) elects no SNs and links every AN into one flat layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np

from .clustering import VNode
from .errors import ConfigurationError
from .rng import stable_hash64
from .topology import CORE_ATTRS, SystemTopology, node_stamp

DPT_ALPHA = 0.2
DPT_RECORD_CAP = 64
TWO_LAYER_NEIGHBOR_CAP = 64

class Role(IntEnum):
    LN = 0
    AN = 1
    SN = 2


def ln_stamp(vnode: VNode) -> dict[str, object]:
    attrs = CORE_ATTRS[vnode.core_type]
    stamp: dict[str, object] = {"core_type": vnode.core_type.letter}
    stamp.update(dict(attrs.as_stamp()))
    return stamp


def ln_stamp_key(vnode: VNode) -> tuple:
    attrs = CORE_ATTRS[vnode.core_type]
    return (("core_type", vnode.core_type.letter),) + attrs.as_stamp()


def an_stamp(ring_vnodes: list[VNode]) -> dict[str, object]:
    """Aggregated attribute summary over the vnodes of one chip ring."""
    types = frozenset(v.core_type.letter for v in ring_vnodes)
    stamp: dict[str, object] = {"types": types}
    numeric = ("clock_ghz", "l1_kb", "l2_kb", "cache_line_b", "mem_bw_gbps")
    for attr in numeric:
        vals = [dict(CORE_ATTRS[v.core_type].as_stamp())[attr] for v in ring_vnodes]
        stamp[attr] = (min(vals), max(vals))
    return stamp


# -- DHT ring ---------------------------------------------------------------


class DhtRing:
    """Chord-style ring over the vnodes of one group.

    Entries are keyed by the canonical attribute stamp; vnodes with an
    identical stamp share one entry as a sibling list.  Exact lookups
    route greedily over finger tables; similar lookups walk the whole
    ring and return the entry minimizing the similarity distance.
    """

    def __init__(self, provider: int):
        self.provider = provider
        self.positions: list[tuple[int, int]] = []  # (ring position, vnode id)
        self.entries: dict[tuple, list[int]] = {}
        self.entry_stamps: dict[tuple, dict[str, object]] = {}
        self.entry_home: dict[tuple, int] = {}
        self.fingers: dict[int, list[int]] = {}

    @property
    def participants(self) -> list[int]:
        return [vid for _, vid in self.positions]

    def insert(self, vnode: VNode) -> None:
        pos = stable_hash64("ring-pos", vnode.vnode_id)
        self.positions.append((pos, vnode.vnode_id))
        self.positions.sort()
        key = ln_stamp_key(vnode)
        siblings = self.entries.setdefault(key, [])
        siblings.append(vnode.vnode_id)
        siblings.sort()
        self.entry_stamps[key] = ln_stamp(vnode)
        self._rebuild()

    def _successor(self, point: int) -> int:
        for pos, vid in self.positions:
            if pos >= point:
                return vid
        return self.positions[0][1]

    def _rebuild(self) -> None:
        self.entry_home = {
            key: self._successor(stable_hash64("entry", key))
            for key in self.entries
        }
        pos_of = {vid: pos for pos, vid in self.positions}
        self.fingers = {}
        for _, vid in self.positions:
            table = []
            for k in range(64):
                target = (pos_of[vid] + (1 << k)) % (1 << 64)
                succ = self._successor(target)
                if succ != vid and (not table or table[-1] != succ):
                    table.append(succ)
            self.fingers[vid] = table

    @staticmethod
    def _between(pos: int, lo: int, hi: int) -> bool:
        # circular (lo, hi] interval
        if lo < hi:
            return lo < pos <= hi
        return pos > lo or pos <= hi

    def lookup_exact(self, key: tuple, start: int) -> tuple[list[int], list[int]]:
        """Return (sibling list, routing path) for an equal stamp.

        The path starts at the querying vnode and ends at the entry's
        home position, one element per routing participant.
        """
        if not self.positions:
            return [], [start]
        pos_of = {vid: pos for pos, vid in self.positions}
        target = stable_hash64("entry", key)
        home = self._successor(target)
        current = start
        path = [start]
        while current != home:
            step = None
            for f in reversed(self.fingers[current]):
                if self._between(pos_of[f], pos_of[current], target):
                    step = f
                    break
            if step is None:
                step = self._successor((pos_of[current] + 1) % (1 << 64))
            current = step
            path.append(step)
            if len(path) > 2 * len(self.positions) + 1:
                raise ConfigurationError("ring routing failed to converge")
        return list(self.entries.get(key, [])), path

    def walk_order(self, start: int) -> list[int]:
        vids = self.participants
        if start in vids:
            i = vids.index(start)
            return vids[i:] + vids[:i]
        return vids

    def lookup_similar(self, target: dict[str, object],
                       start: int) -> tuple[list[int], list[int]]:
        """Full ring walk; never empty on a populated ring.

        The path covers every participant once, starting at the caller.
        """
        if not self.entries:
            return [], [start]
        path = self.walk_order(start)
        if not path or path[0] != start:
            path = [start] + path
        spans: dict[str, tuple[float, float]] = {}
        for stamp in self.entry_stamps.values():
            for attr, val in stamp.items():
                if isinstance(val, (int, float)):
                    lo, hi = spans.get(attr, (float(val), float(val)))
                    spans[attr] = (min(lo, float(val)), max(hi, float(val)))
        best: tuple[float, tuple] | None = None
        for key in self.entries:
            stamp = self.entry_stamps[key]
            dist = 0.0
            for attr, want in target.items():
                have = stamp.get(attr)
                if attr == "core_type" or isinstance(want, str):
                    dist += 0.0 if have == want else 1.0
                    continue
                if have is None:
                    dist += 1.0
                    continue
                lo, hi = spans.get(attr, (0.0, 0.0))
                span = hi - lo
                diff = abs(float(have) - float(want))  # type: ignore[arg-type]
                dist += diff / span if span > 0 else (1.0 if diff else 0.0)
            if best is None or (dist, key) < best:
                best = (dist, key)
        assert best is not None
        return list(self.entries[best[1]]), path


# -- probability tables -----------------------------------------------------


@dataclass
class DptRecord:
    attribute: str
    value: str
    factors: dict[int, float]
    sor: int | None = None


class Dpt:
    """Per-provider probability table guiding the next layer-an hop.

    Records hold factors only for neighbors whose advertised stamps can
    cover the record's resource type; a neighbor that provably lacks the
    type is never proposed for it.
    """

    def __init__(self, owner: int, neighbors: tuple[int, ...],
                 record_keys: list[tuple[str, str]],
                 presence: Callable[[tuple[str, str], int], bool] | None = None):
        if len(record_keys) > DPT_RECORD_CAP:
            raise ConfigurationError("record cap exceeded")
        self.owner = owner
        self.neighbors = tuple(sorted(neighbors))
        self.presence = presence
        self.records: dict[tuple[str, str], DptRecord] = {}
        for key in record_keys:
            self.records[key] = self._new_record(key)

    def _new_record(self, key: tuple[str, str]) -> DptRecord:
        factors = {n: 0.5 for n in self.neighbors
                   if self.presence is None or self.presence(key, n)}
        return DptRecord(key[0], key[1], factors)

    def select_next(self, record_key: tuple[str, str],
                    visited: set[int]) -> int | None:
        """Unvisited SoR wins; otherwise the unvisited neighbor with the
        highest factor, ties to the lowest vnode id; None when exhausted."""
        rec = self.records.get(record_key)
        if rec is None:
            rec = self.records[record_key] = self._new_record(record_key)
            if len(self.records) > DPT_RECORD_CAP:
                raise ConfigurationError("record cap exceeded")
        if rec.sor is not None and rec.sor not in visited \
                and rec.sor in rec.factors:
            return rec.sor
        best: tuple[float, int] | None = None
        for n, f in rec.factors.items():
            if n in visited:
                continue
            if best is None or f > best[0]:
                best = (f, n)
        return best[1] if best else None

    def update(self, record_key: tuple[str, str], neighbor: int, *,
               success: bool, full_match: bool = False,
               exhausted: bool = False) -> None:
        rec = self.records.get(record_key)
        if rec is None or neighbor not in rec.factors:
            return
        f = rec.factors[neighbor]
        if success:
            rec.factors[neighbor] = f + DPT_ALPHA * (1.0 - f)
        else:
            rec.factors[neighbor] = f * (1.0 - DPT_ALPHA)
        if full_match:
            rec.sor = neighbor
        if exhausted and rec.sor == neighbor:
            rec.sor = None


# -- election and overlay ---------------------------------------------------


@dataclass
class LnGroup:
    provider: int
    members: list[int]      # ring participants other than the provider
    ring: DhtRing


@dataclass
class AnGroup:
    provider: int           # SN vnode id
    members: list[int]      # AN vnode ids


def elect_roles(topo: SystemTopology, vnodes: list[VNode],
                layers: int = 3) -> dict[int, Role]:
    """Pick one SN per node (three-layer) and one AN per chip.

    The SN is the largest vnode of the node, lowest id on ties, chosen
    among vnodes whose home chip has other vnodes left to serve as that
    chip's AN whenever any such vnode exists.  Each chip's AN is its
    lowest-id remaining vnode; everything else is an LN.
    """
    if layers not in (2, 3):
        raise ConfigurationError("layers must be 2 or 3")
    roles: dict[int, Role] = {v.vnode_id: Role.LN for v in vnodes}
    by_node: dict[int, list[VNode]] = {}
    for v in vnodes:
        by_node.setdefault(v.node, []).append(v)
    for node, vs in sorted(by_node.items()):
        by_chip: dict[int, list[VNode]] = {}
        for v in vs:
            by_chip.setdefault(v.home_chip, []).append(v)
        sn_id: int | None = None
        if layers == 3:
            preferred = [v for v in vs if len(by_chip[v.home_chip]) >= 2]
            pool = preferred or vs
            sn = sorted(pool, key=lambda v: (-v.size, v.vnode_id))[0]
            sn_id = sn.vnode_id
            roles[sn_id] = Role.SN
        for chip, chip_vs in sorted(by_chip.items()):
            rest = [v for v in chip_vs if v.vnode_id != sn_id]
            if rest:
                an = min(rest, key=lambda v: v.vnode_id)
                roles[an.vnode_id] = Role.AN
    return roles


class Overlay:
    def __init__(self, topo: SystemTopology, vnodes: list[VNode], *,
                 layers: int = 3, sn_records: bool = False,
                 stamp_informed: bool = True):
        self.topo = topo
        self.vnodes = vnodes
        self.by_id: dict[int, VNode] = {v.vnode_id: v for v in vnodes}
        self.layers = layers
        self.sn_records = sn_records
        self.stamp_informed = stamp_informed
        self.roles = elect_roles(topo, vnodes, layers)

        # chip rings: every vnode participates in its home chip's ring
        by_chip: dict[int, list[VNode]] = {}
        for v in vnodes:
            by_chip.setdefault(v.home_chip, []).append(v)
        self.ln_groups: dict[int, LnGroup] = {}
        self.vnode_provider: dict[int, int] = {}
        self.chip_provider: dict[int, int] = {}
        for chip, chip_vs in sorted(by_chip.items()):
            ans = [v for v in chip_vs if self.roles[v.vnode_id] == Role.AN]
            if ans:
                provider = min(ans, key=lambda v: v.vnode_id).vnode_id
            else:
                sns = [v for v in chip_vs if self.roles[v.vnode_id] == Role.SN]
                if not sns:
                    raise ConfigurationError(f"chip {chip} has no provider")
                provider = sns[0].vnode_id
            ring = DhtRing(provider)
            for v in sorted(chip_vs, key=lambda v: v.vnode_id):
                ring.insert(v)
            members = [v.vnode_id for v in chip_vs if v.vnode_id != provider]
            self.ln_groups[provider] = LnGroup(provider, sorted(members), ring)
            self.chip_provider[chip] = provider
            for v in chip_vs:
                self.vnode_provider[v.vnode_id] = provider

        self.an_stamps: dict[int, dict[str, object]] = {}
        for provider, group in self.ln_groups.items():
            ring_vs = [self.by_id[vid] for vid in group.ring.participants]
            self.an_stamps[provider] = an_stamp(ring_vs)

        self._node_stamps: dict[int, dict[str, object]] = {}
        self._presence = self._dpt_presence if stamp_informed else None

        self.sn_of_node: dict[int, int] = {}
        self.an_groups: dict[int, AnGroup] = {}
        self.an_provider: dict[int, int] = {}
        self.sn_stamps: dict[int, dict[str, object]] = {}
        self.anycast_groups: dict[tuple, list[int]] = {}
        record_keys = [("type", t.letter) for t in CORE_ATTRS]
        if sn_records:
            record_keys += [("node_type", t.letter) for t in CORE_ATTRS]

        all_ans = sorted(vid for vid, r in self.roles.items() if r == Role.AN)
        self.dpts: dict[int, Dpt] = {}
        self.neighbors: dict[int, tuple[int, ...]] = {}
        if layers == 3:
            for v in vnodes:
                if self.roles[v.vnode_id] == Role.SN:
                    self.sn_of_node[v.node] = v.vnode_id
            for node, sn_id in sorted(self.sn_of_node.items()):
                members = sorted(
                    v.vnode_id for v in vnodes
                    if v.node == node and self.roles[v.vnode_id] == Role.AN)
                self.an_groups[sn_id] = AnGroup(sn_id, members)
                for an in members:
                    self.an_provider[an] = sn_id
                    peers = tuple(m for m in members if m != an)
                    self.neighbors[an] = peers
                    self.dpts[an] = Dpt(an, peers, record_keys,
                                        presence=self._presence)
                self.neighbors[sn_id] = tuple(members)
                self.dpts[sn_id] = Dpt(sn_id, tuple(members), record_keys,
                                       presence=self._presence)
                stamp, key = node_stamp(topo, node)
                self.sn_stamps[sn_id] = stamp
                self.anycast_groups.setdefault(key, []).append(sn_id)
            for key in self.anycast_groups:
                self.anycast_groups[key].sort()
        else:
            self._link_flat_layer(all_ans, record_keys)

    def _link_flat_layer(self, all_ans: list[int],
                         record_keys: list[tuple[str, str]]) -> None:
        """Two-layer mode: every AN neighbors its nearest peers plus an
        id-ring so the layer stays connected."""
        n = len(all_ans)
        if n == 0:
            raise ConfigurationError("no providers elected")
        nodes = np.array([self.by_id[a].node for a in all_ans])
        lat = self.topo.net_hops[np.ix_(nodes, nodes)].astype(np.int64)
        lat *= self.topo.params.latency.delta_big_ns
        same = nodes[:, None] == nodes[None, :]
        lat[same] = self.topo.params.latency.delta_small_ns
        np.fill_diagonal(lat, 0)
        ids = np.array(all_ans)
        k = min(TWO_LAYER_NEIGHBOR_CAP, n - 1)
        for i, an in enumerate(all_ans):
            order = np.lexsort((ids, lat[i]))
            near = [int(ids[j]) for j in order if int(ids[j]) != an][:k]
            ringmates = {all_ans[(i - 1) % n], all_ans[(i + 1) % n]} - {an}
            peers = tuple(sorted(set(near) | ringmates))
            self.neighbors[an] = peers
            self.dpts[an] = Dpt(an, peers, record_keys,
                                presence=self._presence)

    def _dpt_presence(self, key: tuple[str, str], neighbor: int) -> bool:
        """Chip stamps are static here, so absence of a type is conclusive.

        Node-level records get no such shortcut: nothing below the node
        layer advertises node composition, so those factors start uniform
        and are learned from outcomes."""
        attr, letter = key
        if attr == "type" or attr == "node_type":
            stamp = self.an_stamps.get(neighbor)
            return stamp is None or letter in stamp["types"]  # type: ignore[operator]
        return True

    def node_stamp(self, node: int) -> dict[str, object]:
        """Node-level stamp regardless of whether an SN was elected."""
        stamp = self._node_stamps.get(node)
        if stamp is None:
            stamp, _ = node_stamp(self.topo, node)
            self._node_stamps[node] = stamp
        return stamp

    # -- helpers ------------------------------------------------------------

    def role_counts(self) -> dict[Role, int]:
        counts = {r: 0 for r in Role}
        for r in self.roles.values():
            counts[r] += 1
        return counts

    def head_of(self, vid: int) -> int:
        return self.by_id[vid].head

    def provider_ring(self, provider: int) -> DhtRing:
        return self.ln_groups[provider].ring

    def dump_text(self) -> str:
        lines = []
        for v in sorted(self.vnodes, key=lambda v: v.vnode_id):
            role = self.roles[v.vnode_id]
            if role == Role.SN:
                anchor = v.vnode_id
            elif role == Role.AN:
                anchor = self.an_provider.get(v.vnode_id, v.vnode_id)
            else:
                anchor = self.vnode_provider[v.vnode_id]
            lines.append(f"{v.vnode_id} {role.name} {anchor}")
        for provider in sorted(self.ln_groups):
            ring = self.ln_groups[provider].ring
            order = ",".join(str(x) for x in ring.participants)
            lines.append(f"ring {provider} {order}")
        for key in sorted(self.anycast_groups):
            members = ",".join(str(x) for x in self.anycast_groups[key])
            kt = "".join(str(b) for b in key)
            lines.append(f"anycast {kt} {members}")
        return "\n".join(lines) + "\n"


def anycast_forward(overlay: Overlay, sn_conds, anchor_sn: int,
                    visited: set[int]) -> int | None:
    """Nearest unvisited SN whose node stamp satisfies the conditions,
    measured from the anchor SN; None signals sn-layer exhaustion."""
    topo = overlay.topo
    anchor_head = overlay.head_of(anchor_sn)
    best: tuple[int, int] | None = None
    for key in sorted(overlay.anycast_groups):
        members = overlay.anycast_groups[key]
        stamp = overlay.sn_stamps[members[0]]
        if not all(c.matches(stamp) for c in sn_conds):
            continue
        for sn in members:
            if sn in visited:
                continue
            d = topo.latency_ns(anchor_head, overlay.head_of(sn))
            if best is None or (d, sn) < (best[0], best[1]):
                best = (d, sn)
    return best[1] if best else None
