"""Smoke test for the coevognn extension: generate, train, save, reload, evaluate."""

import math
import os
import tempfile

import coevognn


def main():
    seq = coevognn.Sequence.synthetic(n=30, t=6, r=8, seed=3)
    assert len(seq) == 7 and seq.node_count == 30 and seq.horizon == 6
    assert all(u < v for u, v in seq.edges(0))
    assert len(seq.attributes(0)) == 30

    errors = coevognn.gradcheck()
    assert max(errors.values()) <= coevognn.GRADCHECK_TOLERANCE, errors

    model = coevognn.Model.train(seq.slice(0, 5), dim=8, epochs=3, seed=5)
    assert len(model.losses) == 3 and all(math.isfinite(l[0]) for l in model.losses)
    h = model.infer_future(seq.slice(0, 5))
    assert len(h) == 30 and len(h[0]) == 8
    for row in h:
        norm = math.sqrt(sum(x * x for x in row))
        assert norm == 0.0 or abs(norm - 1.0) < 1e-9

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        again = coevognn.Model.load(path)
        assert again.infer_future(seq.slice(0, 5)) == h
        assert again.config["dim"] == 8

    report = model.evaluate(seq, ks=[5, 10])
    assert report["attributes"]["rmse"] >= report["attributes"]["mae"]
    assert 0.0 <= report["links"]["pr_auc"] <= 1.0
    weights = model.attention(seq.slice(0, 5))
    assert all(abs(sum(w) - 1.0) < 1e-9 for _, _, w in weights)

    analysis = seq.analyze()
    assert "recurrence" in analysis

    try:
        coevognn.Model.train(seq, spna=2)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    print("smoke test passed:", model, report["links"]["pr_auc"])


if __name__ == "__main__":
    main()
