"""Smoke test of the mglab extension: run with `python python/smoke_test.py`."""

import json
import math

import mglab


def small_config():
    d = 6
    return {
        "spec": {
            "d": d,
            "gamma": 0.05,
            "theta": 0.7,
            "lambda2": 0.0,
            "lambda3": 0.1,
            "lambdaN": 0.0,
            "e": [1.0] + [0.0] * (d - 1),
            "seed": 3,
        },
        "learner": {"type": "kernel", "kernel": {"form": {"zonal": {"name": "sss"}}, "normalize": True}, "C": 5.0},
        "n_train": 150,
        "n_test": 1000,
        "n_seeds": 2,
        "band": {"n_mc": 128},
    }


def main():
    assert abs(mglab.legendre(5, 7, 1.0) - 1.0) < 1e-12
    assert abs(mglab.legendre(3, 2, 0.5) - (1.5 * 0.25 - 0.5)) < 1e-12

    cfg = small_config()
    bound = mglab.certified_margin_bound(json.dumps(cfg["spec"]))
    expected = 0.1 * (0.5 + math.asin(0.05 / 0.125) / math.pi)
    assert abs(bound - expected) < 1e-12, (bound, expected)

    xs, ys = mglab.sample(json.dumps(cfg), "test", n=20)
    assert len(xs) == len(ys) == 20
    assert all(abs(sum(v * v for v in x) - 1.0) < 1e-9 for x in xs)
    assert set(ys) <= {-1, 1}

    report = json.loads(mglab.run_gap_experiment(json.dumps(cfg)))
    assert [s["seed"] for s in report["seeds"]] == [3, 4]
    for s in report["seeds"]:
        assert s["ratio"] == s["err01"] / s["err_margin_certified"]

    one = mglab.sweep(json.dumps([cfg]), threads=1)
    many = mglab.sweep(json.dumps([cfg]), threads=4)
    assert one == many and len(one.splitlines()) == 3

    passed, text = mglab.verify("orthopoly")
    assert passed and json.loads(text)["passed"]

    try:
        mglab.sample(json.dumps(cfg), "validation")
    except ValueError:
        pass
    else:
        raise AssertionError("bad split accepted")
    print("mglab smoke test passed")


if __name__ == "__main__":
    main()
