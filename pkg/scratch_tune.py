"""Scratch experiment: scenario-scope agreement of the trained pipeline."""
import itertools
import sys
import time

from lanewatch import bayes, kg, kge
from lanewatch.features import SLOT_BY_NAME, mirror_vector
from lanewatch.kg import scenario_vector, rule_intention

TTC = SLOT_BY_NAME["preceding_vehicle_ttc"].vocabulary
THW = SLOT_BY_NAME["preceding_vehicle_thw"].vocabulary


def scenario_report(model, verbose=False):
    agree = 0
    rows = []
    for ttc, thw in itertools.product(TTC, THW):
        vec = scenario_vector(ttc, thw)
        want = rule_intention(vec)
        post = bayes.posterior(model, vec)
        got = post.intention
        ok = want == got
        agree += ok
        rows.append((ttc, thw, want, got, post.probabilities))
        if verbose:
            p = post.probabilities
            print(f"  {ttc:22s} {thw:20s} want={want:3s} got={got:3s} "
                  f"{'OK ' if ok else 'XX '} pLLC={p['LLC']:.3f} pLK={p['LK']:.3f} pRLC={p['RLC']:.3f}")
    # mirror check: LLC-trigger vector mirrored must be RLC
    trig = scenario_vector("highRiskPreceding", "safeHeadway")
    mir = mirror_vector(trig)
    mir_got = bayes.predict(model, mir)
    if verbose:
        print(f"  mirror of LLC trigger -> {mir_got} (want RLC)")
    return agree, mir_got


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 600
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 200
    dim = int(sys.argv[3]) if len(sys.argv) > 3 else 32
    seeds = range(int(sys.argv[4])) if len(sys.argv) > 4 else range(3)
    for seed in seeds:
        recs = kg.generate_synthetic_corpus(n, seed=seed)
        graph = kg.instances_to_triples(recs)
        cfg = kge.TrainConfig(dimension=dim, epochs=epochs, rng_seed=seed)
        t0 = time.perf_counter()
        model = kge.train(graph, cfg)
        dt = time.perf_counter() - t0
        agree, mir = scenario_report(model, verbose=(seed == 0))
        print(f"seed={seed} n={n} epochs={epochs} dim={dim}: scenario {agree}/9, "
              f"mirror={mir}, train {dt:.1f}s, calib={model.calibration}")


if __name__ == "__main__":
    main()
