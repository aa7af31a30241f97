# Three scenes (benign, degraded lidar, radar dropout) routed three ways:
# static fusion, a synchronous single loop, and the 2 Hz / 1 Hz dual loop
# with the recall cache and knowledge consolidation switched on.

from modroute import (
    KnowledgeRepository,
    RoutingConfig,
    RuleBasedBackend,
    compute_report,
    run_episode,
    single_loop_episode,
    static_fusion_episode,
)
from modroute.stress import multi_scene_trace

frames, scenes = multi_scene_trace(seed=0)
config = RoutingConfig()
knowledge = KnowledgeRepository()

runs = {
    "static": static_fusion_episode(frames, scene_ids=scenes),
    "single": single_loop_episode(frames, RuleBasedBackend(), config, scene_ids=scenes),
    "dual": run_episode(frames, RuleBasedBackend(), config, scene_ids=scenes, knowledge=knowledge),
}

print(f"{'mode':8s} {'RE':>6s} {'RC':>6s} {'RSI':>6s} {'MRR':>6s}")
for name, log in runs.items():
    rep = compute_report(log)
    print(f"{name:8s} {rep.re:6.3f} {rep.rc:6.3f} {rep.rsi:6.3f} {rep.mrr_cumulative:6.3f}")

# staleness of the snapshot each reactive tick acted on
dual = runs["dual"]
lag = [r.timestamp - r.memory_time for r in dual if r.memory_time is not None]
print(f"\nreactive ticks {len(dual)}, deliberative commits {sum(r.routed for r in dual)}, "
      f"max snapshot age {max(lag):.2f} s")

print("\nconsolidated scenes:")
for entry in knowledge.entries:
    active = "+".join(entry.active_set)
    print(f"  {entry.scene_id}: active {active:20s} rsi {entry.rsi:.3f}")
