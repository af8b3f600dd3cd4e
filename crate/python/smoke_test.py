"""Quick end-to-end check of the Python bindings.

Build first, e.g. `pip install -e crates/py --no-build-isolation`, or copy
target/release/libpolytrans_py.so next to this file as polytrans_py.so.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import polytrans_py as pt


def main():
    train, test = pt.generate_corpus(["toyA", "toyB"], 40, seed=3, test_samples=8)
    assert len(train) == 40 and len(test) == 8
    assert train.languages == ["toyA", "toyB"]
    stats = train.stats()
    assert stats["samples"] == 40

    model = pt.Model.train(train, steps=3, seed=1, dims="micro", batch_size=4)
    assert model.num_params > 0

    src = next(s[0] for s in (test.sample(i) for i in range(len(test))) if s[0])
    a = model.translate(src, "toyA", "toyB", max_len=20)
    b = model.translate(src, "toyA", "toyB", max_len=20)
    assert a == b, "deterministic translation must repeat"

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ptck")
        model.save(path)
        again = pt.Model.load(path)
        assert again.translate(src, "toyA", "toyB", max_len=20) == a

    report = model.evaluate(test, max_pairs=4)
    assert report["languages"] == ["toyA", "toyB"]

    assert math.isclose(pt.bleu4([["a", "b", "c", "d"]], [["a", "b", "c", "d"]]), 100.0)
    counts = pt.count_params(7)
    assert counts["pairwise_models"] == 42 and counts["ratio"] < 1 / 15

    ok, table = pt.verify(seed=1, cases=5)
    assert ok, table
    assert math.isclose(pt.kl_between([0.0], [0.0], [0.0], [0.0]), 0.0, abs_tol=1e-12)
    print("python smoke test ok")


if __name__ == "__main__":
    main()
