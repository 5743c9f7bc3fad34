"""Smoke test for the localcontrol_py extension.

Build first, either with maturin:

    pip install maturin
    maturin develop -m crates/python/Cargo.toml --features extension-module

or with cargo, then point PYTHONPATH at a copy named localcontrol_py.so:

    cargo build -p localcontrol-py --release
    cp target/release/liblocalcontrol_py.so python/localcontrol_py.so
    python3 python/smoke_test.py
"""

import math
import os
import random
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import localcontrol_py as lc

SCHEMA = [
    {"name": "uid", "role": "id"},
    {"name": "y", "role": "outcome"},
    {"name": "e", "role": "exposure"},
    {"name": "c1", "role": "confounder"},
    {"name": "c2", "role": "confounder"},
    {"name": "c3", "role": "confounder"},
    {"name": "r", "role": "passenger"},
    {"name": "z", "role": "passenger"},
]


def write_csv(path, n, seed=5):
    rng = random.Random(seed)
    with open(path, "w") as f:
        f.write("uid,y,e,c1,c2,c3,r,z\n")
        for i in range(n):
            g = i % 4
            e = rng.random()
            sign = 1.0 if g < 2 else -1.0
            y = 10.0 * g + sign * e + 0.3 * rng.random()
            c1 = 5.0 * g + rng.random()
            c2 = -3.0 * g + rng.random()
            c3 = rng.random()
            r = rng.random()
            z = g + rng.random()
            ex = "NA" if i == 7 else repr(e)
            f.write(f"{1000 + i},{y!r},{ex},{c1!r},{c2!r},{c3!r},{r!r},{z!r}\n")


def main():
    assert lc.pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert lc.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert lc.spearman([1, 1], [2, 3]) is None

    tmp = tempfile.mkdtemp()
    csv = os.path.join(tmp, "input.csv")
    write_csv(csv, 240)

    frame = lc.Frame.from_csv(csv, SCHEMA)
    assert len(frame) == 239 and frame.n_dropped == 1, frame
    x, y = frame.column("e"), frame.column("y")

    pc = lc.principal_coordinates(["c1", "c2", "c3"], [frame.column(c) for c in ("c1", "c2", "c3")])
    assert len(pc["scores"]) == len(frame)

    tree = lc.aggregate(frame, "ward.D")
    assert tree.leaf_count == len(frame) and len(tree.merges()) == len(frame) - 1
    labels = tree.cut(4)
    assert sorted(set(labels)) == [1, 2, 3, 4] and labels[0] == 1

    local = lc.local_rank_correlations(x, y, labels)
    assert len(local["unit_lrc"]) == len(frame)
    assert local["negative_clusters"] == 2, local["per_cluster"]

    res = lc.confirm(x, y, labels, replicates=10, permutations=19, seed=1)
    assert 0.0 < res["d_observed"] <= 1.0
    hits = res["p_value"] * 20 - 1
    assert abs(hits - round(hits)) < 1e-9 and res["p_value"] <= 0.25, res["p_value"]
    again = lc.confirm(x, y, labels, replicates=10, permutations=19, seed=1)
    assert again == res

    summary = lc.compare_k(frame, tree, [1, 2, 4, 8], replicates=5)
    assert [row["k"] for row in summary["rows"]] == [1, 2, 4, 8]

    names = ["e", "c1", "c2", "c3"]
    forest = lc.Forest(names, [frame.column(n) for n in names], local["unit_lrc"], trees=40, seed=3)
    imp = forest.importance()
    assert {v["variable"] for v in imp["variables"]} == set(names)
    grid, values = forest.partial_dependence("c1", grid_size=6)
    assert len(grid) == len(values) and all(math.isfinite(v) for v in values)
    assert len(forest.predict([frame.column(n)[:3] for n in names])) == 3

    mob = lc.fit_mob(y, frame.column("r"), frame.column("z"), min_size=40)
    assert sum(row["n"] for row in mob["table"]) == len(frame)

    cfg = lc.default_config()
    cfg.update(
        input=csv,
        output_dir=os.path.join(tmp, "out"),
        schema=SCHEMA,
        k=4,
        k_grid=[1, 2, 4],
    )
    cfg["confirm"].update(replicates=10, permutations=19)
    cfg["forest"].update(trees=20, pdp_grid_size=5)
    cfg["mob"].update(regressor="r", partition_variable="z", min_size=40)
    manifest = lc.run_all(cfg)
    assert manifest["complete"], manifest["stages"]
    assert os.path.exists(os.path.join(tmp, "out", "manifest.json"))

    try:
        lc.Frame.from_csv(os.path.join(tmp, "missing.csv"), SCHEMA)
    except OSError:
        pass
    else:
        raise AssertionError("missing file should raise OSError")
    try:
        lc.aggregate(frame, "single")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method should raise ValueError")

    print(f"localcontrol_py {lc.__version__}: smoke test ok")


if __name__ == "__main__":
    main()
