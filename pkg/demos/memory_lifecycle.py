# Walk one episode through the memory store and print each component's
# lifecycle as a string of G/R/U/E codes, plus the recall cache hit rate.

from collections import Counter

from modroute import KnowledgeRepository, MemoryStore, RoutingConfig, RuleBasedBackend, run_episode
from modroute.memory import events_by_component, lifecycle_is_legal, lifecycle_string
from modroute.stress import multi_scene_trace

frames, scenes = multi_scene_trace(seed=1, scene_duration=10.0)
store = MemoryStore()
log = run_episode(frames, RuleBasedBackend(), RoutingConfig(), scene_ids=scenes, memory=store,
                  knowledge=KnowledgeRepository(), quality_threshold=0.0)

for kind, events in events_by_component(store.events).items():
    # instances of a component are split at each expiration
    runs, cur = [], []
    for e in events:
        cur.append(e)
        if e.transition.value == "Expiration":
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    codes = [lifecycle_string(r) for r in runs]
    legal = all(lifecycle_is_legal(r) for r in runs)
    print(f"{kind.value:22s} {len(runs):3d} instances  legal={legal}  first: {codes[0]}")

triggers = Counter(e.trigger.value for e in store.events)
print("\nmost frequent triggers:")
for name, n in triggers.most_common(5):
    print(f"  {n:4d}  {name}")

attempts = store.recall_attempts
hits = sum(a.hit for a in attempts)
print(f"\nrecall cache: {hits}/{len(attempts)} hits")
