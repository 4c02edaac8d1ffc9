"""Fit, assign and estimate through the Python bindings."""

import json
import random

import strattree


def outcome(x1, a, rng):
    effect = 2.0 if x1 > 0.5 else 0.0
    scale = 3.0 if x1 > 0.5 else 1.0
    return a * effect + rng.gauss(0.0, scale)


def main():
    rng = random.Random(7)
    x = [[rng.random(), rng.random()] for _ in range(300)]
    a = [i % 2 for i in range(300)]
    y = [outcome(xi[0], ai, rng) for xi, ai in zip(x, a)]

    tree, objective = strattree.fit(y, a, x, depth=2, seed=1, population=40)
    again, _ = strattree.fit(y, a, x, depth=2, seed=1, population=40)
    assert tree == again
    assert tree.depth <= 2 and objective > 0
    assert strattree.Tree.from_json(tree.to_json()) == tree
    print("fit:", tree, "objective", round(objective, 4))

    x2 = [[rng.random(), rng.random()] for _ in range(1000)]
    strata, treatments = strattree.assign(tree, x2, seed=3)
    assert len(strata) == len(treatments) == 1000
    assert all(1 <= s <= tree.n_leaves for s in strata)
    y2 = [outcome(xi[0], ai, rng) for xi, ai in zip(x2, treatments)]

    est = strattree.estimate(tree, y2, treatments, x2)
    assert est["ci"][0] < est["theta"] < est["ci"][1]
    assert abs(est["theta"] - 1.0) < 0.5, est
    pooled = strattree.estimate(tree, y2, treatments, x2, pilot=(y, a, x))
    assert pooled["n"] == 1300
    print("estimate:", round(est["theta"], 4), "pooled:", round(pooled["theta"], 4))

    _, depth, criterion = strattree.cv_fit(y, a, x, 1, seed=2, population=20)
    assert len(criterion) == 2 and depth in (0, 1)

    config = json.loads(strattree.default_study_config())
    config.update(pilot_n=100, main_n=200, reps=2, methods=["none", "adhoc"])
    config["fit"]["ea"]["population"] = 10
    report = json.loads(strattree.simulate(1, json.dumps(config)))
    assert [r["method"] for r in report["rows"]] == ["none", "adhoc"]

    try:
        strattree.assign(tree, [[1.5, 0.2]])
    except ValueError as e:
        assert "outside" in str(e)
    else:
        raise AssertionError("out-of-bounds covariate accepted")
    print("ok", strattree.__version__)


if __name__ == "__main__":
    main()
