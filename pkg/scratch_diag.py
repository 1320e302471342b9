"""Scratch: per-slot log-factor diagnostics for scenario-scope decisions."""
import math
import sys
from collections import Counter, defaultdict

from lanewatch import bayes, kg, kge
from lanewatch.features import SLOT_NAMES
from lanewatch.kg import scenario_vector

H = ("LLC", "LK", "RLC")


def slot_factors(model, vec):
    """Per-slot log sigma(cond) contributions per hypothesis."""
    out = {}
    for slot, label in zip(SLOT_NAMES, vec.labels):
        out[slot] = {
            h: math.log(model.score_triple(bayes.conditional_triple(label, h))) for h in H
        }
    prior = {h: math.log(model.score_triple(bayes.hypothesis_triple(h))) for h in H}
    return prior, out


def corpus_stats(recs):
    """P(y | category) from the corpus."""
    by_cat = defaultdict(Counter)
    for r in recs:
        for label in r.features.labels:
            by_cat[label][r.intention] += 1
    return by_cat


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 2
    n = int(sys.argv[2]) if len(sys.argv) > 2 else 600
    epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    recs = kg.generate_synthetic_corpus(n, seed=seed)
    print("class counts:", Counter(r.intention for r in recs))
    stats = corpus_stats(recs)
    graph = kg.instances_to_triples(recs)
    model = kge.train(graph, kge.TrainConfig(rng_seed=seed, epochs=epochs))
    vec = scenario_vector("lowRiskPreceding", "safeHeadway")  # the all-safe row
    prior, factors = slot_factors(model, vec)
    print(f"prior logs: " + "  ".join(f"{h}={prior[h]:+.3f}" for h in H))
    total = dict(prior)
    print(f"{'slot':34s}{'label':28s}" + "".join(f"{h:>10s}" for h in H) + "   corpus P(y|c)")
    for slot, label in zip(SLOT_NAMES, vec.labels):
        f = factors[slot]
        for h in H:
            total[h] += f[h]
        cnt = stats[label]
        tot = sum(cnt.values()) or 1
        pp = " ".join(f"{h}:{cnt[h]/tot:.2f}" for h in H)
        print(f"{slot:34s}{label:28s}" + "".join(f"{f[h]:>+10.3f}" for h in H) + f"   {pp}")
    print("TOTAL (prior + conds): " + "  ".join(f"{h}={total[h]:+.3f}" for h in H))


if __name__ == "__main__":
    main()
