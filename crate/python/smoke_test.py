"""Smoke test for the weightmix extension module.

Build and install first, e.g.:
    pip install maturin
    pip install --no-build-isolation ./crates/python
"""

import math
import tempfile

import weightmix as wm


def main():
    images, labels, groups = wm.generate_cohort("internal", 120, seed=3)
    assert len(images) == len(labels) == len(groups) == 120
    assert all(len(im) == 256 for im in images)

    w = wm.cold_init(seed=1)
    assert w.num_params == 354
    same = wm.shrink_perturb(w, alpha=1.0, beta_scale=0.0)
    assert same == w
    shrunk = wm.shrink_perturb(w, alpha=0.5, beta_scale=0.0)
    assert all(a == 0.5 * b for a, b in zip(shrunk.flatten(), w.flatten()))
    assert wm.WeightSet.from_json(w.to_json()) == w

    trained, history = wm.train(w, images[:80], labels[:80], images[80:], labels[80:], max_epochs=2)
    assert len(history) == 2 and trained != w
    scores = wm.positive_scores(trained, images[80:])
    assert all(0.0 <= s <= 1.0 for s in scores)

    avg = wm.ewa([w, trained])
    assert avg == wm.weighted_average([w, trained], [0.5, 0.5])
    factors, mixed, err = wm.fslsqp([w, trained], images[80:], labels[80:], restarts=4)
    assert abs(sum(factors) - 1.0) < 1e-6 and 0.0 <= err <= 1.0

    p = wm.fuzzy_softmax([2.0, 0.0], 1.113)
    assert abs(p[0] - 0.9026) < 5e-5

    best, value, trace = wm.gp_minimize(lambda a: (a - 0.5) ** 2, seed=1)
    assert abs(best - 0.5) < 0.02 and len(trace) == 100

    lo, hi = wm.clopper_pearson(0, 10)
    assert lo == 0.0 and abs(hi - 0.3085) < 1e-4
    sig = wm.significance(0.6204, (0.6073, 0.6335), 0.6964, (0.6840, 0.7088))
    assert 8.1 <= sig["z"] <= 8.4 and sig["significant"]
    t = wm.optimal_threshold(scores, labels[80:])
    m = wm.metrics(scores, labels[80:], t)
    assert -1.0 <= m["mcc"] <= 1.0 and m["threshold"] == t
    assert wm.auprc([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0]) == 1.0
    assert wm.emd_1d(w, w) == 0.0
    assert wm.weight_correlation(w, w) == 1.0
    assert len(wm.replicate_paper()) == 16

    try:
        wm.shrink_perturb(w, alpha=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha > 1 accepted")

    with tempfile.TemporaryDirectory() as out:
        manifest = wm.run(out, seed=2, until="generate")
        assert '"success": true' in manifest

    print("weightmix smoke test passed")


if __name__ == "__main__":
    main()
