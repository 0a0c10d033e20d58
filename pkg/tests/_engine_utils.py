"""Shared staging helpers for event-driven simulator tests."""
from elcore_sim.engine import ClaimMessage, Engine, EngineConfig
from elcore_sim.overlay import Overlay
from elcore_sim.rmc import build_rmcs
from elcore_sim.strategies import get_strategy

WIDE_WINDOW = (0, 10 ** 15)


def make_engine(topo, vnodes, strategy_name, seed, rmc_count=2,
                overlay=None, **cfg_overrides):
    strategy = get_strategy(strategy_name)
    if overlay is None:
        overlay = Overlay(topo, vnodes, layers=strategy.layers,
                          sn_records=strategy.sn_records,
                          stamp_informed=strategy.stamp_informed)
    rmcs, directory = build_rmcs(topo, vnodes, rmc_count)
    cfg = EngineConfig(**cfg_overrides)
    return Engine(topo, overlay, rmcs, directory, strategy, seed, cfg,
                  WIDE_WINDOW)


class RecordingRunner:
    """Claim endpoint stub: looks like a query runner to the claim path."""

    def __init__(self, rmc):
        self.rmc = rmc
        self.msg_count = 0
        self.responses = []

    def on_claim_response(self, owner_id, verdicts):
        self.responses.append((owner_id, dict(verdicts)))


def stage_claim_race(topo, vnodes, overlay, seed, same_instant=True):
    """Two transfer requests for one resource; returns verdict per claimant.

    With `same_instant` both requests reach the owner in the same event;
    otherwise the second arrives strictly later.
    """
    engine = make_engine(topo, vnodes, "elcore", seed, overlay=overlay)
    rmcs = sorted(engine.rmcs.values(), key=lambda r: r.rmc_id)
    owner, claimant = rmcs[0], rmcs[1]
    rid = sorted(owner.free_ownership)[0]
    a, b = RecordingRunner(claimant), RecordingRunner(claimant)
    t2 = 5000 if same_instant else 6000
    engine.enqueue_claim(owner.rmc_id, 5000, ClaimMessage(a, 101, (rid,)))
    engine.enqueue_claim(owner.rmc_id, t2, ClaimMessage(b, 202, (rid,)))
    engine.loop.run()
    va = a.responses[0][1][rid]
    vb = b.responses[0][1][rid]
    return va, vb
