#!/usr/bin/env python3
"""Smoke test for the bayescnn_py extension module.

Builds nothing itself: expects `cargo build --release -p bayescnn-py`
to have produced target/release/libbayescnn_py.so. Copies the cdylib
under the importable name into a scratch directory, imports it, and
exercises the main types and operations end to end on a tiny corpus.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "release" / "libbayescnn_py.so",
        REPO / "target" / "debug" / "libbayescnn_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "libbayescnn_py.so not found — run `cargo build --release -p bayescnn-py` first"
        )
    scratch = Path(tempfile.mkdtemp(prefix="bayescnn_py_"))
    shutil.copy2(built, scratch / "bayescnn_py.so")
    sys.path.insert(0, str(scratch))
    import bayescnn_py

    return bayescnn_py


def main():
    bc = import_module()
    print(f"bayescnn_py {bc.__version__}")

    # Numeric primitives.
    assert abs(bc.log_sum_exp([0.0, 0.0]) - math.log(2.0)) < 1e-12
    assert abs(bc.log_sum_exp([1000.0, 1000.0]) - (1000.0 + math.log(2.0))) < 1e-9
    probs = bc.softmax([1.0, 2.0, 3.0])
    assert abs(sum(probs) - 1.0) < 1e-12 and probs[2] > probs[0]
    assert abs(bc.auc([False, False, True, True], [0.1, 0.2, 0.8, 0.9]) - 1.0) == 0.0
    assert bc.auc([False, True], [0.5, 0.5]) == 0.5

    # Attenuated loss on degenerate rows equals plain cross-entropy.
    rows = [[0.3, -0.2]] * 10
    expected = -math.log(bc.softmax([0.3, -0.2])[0])
    assert abs(bc.bayes_ce_loss(rows, 0) - expected) < 1e-12

    # Seeded, reproducible normals.
    a = bc.standard_normal(42, 5)
    b = bc.standard_normal(42, 5)
    assert a == b
    assert abs(a[0] - 0.9813983900724986) < 1e-9

    # Schema and corpus.
    schema = bc.Schema.reference()
    assert schema.total_channels == 76
    assert len(schema.feature_names) == 17
    corpus = bc.generate_corpus(240, seed=7)
    assert len(corpus) == 240
    assert 0 < corpus.positives < 240
    train, val, test = corpus.split(0.7, 0.15, 0.15, seed=7)
    assert (len(train), len(val), len(test)) == (168, 36, 36)

    thinned = test.inject_missingness(0.5, seed=7)
    assert len(thinned) == len(test)

    # Train a deliberately tiny member and score the test split.
    model = bc.train_model(
        train,
        val,
        variant="bayesian",
        seed=7,
        max_epochs=3,
        patience=3,
        mc_samples=16,
        conv_filters=8,
        batch_size=32,
    )
    print(f"trained {model.variant}: best epoch {model.best_epoch}, val AUC {model.val_auc:.3f}")
    assert 0.0 <= model.val_auc <= 1.0

    scored = model.score(test, seed=7)
    assert len(scored) == len(test)
    ids, labels, probabilities, variances = zip(*scored)
    assert all(0.0 <= p <= 1.0 for p in probabilities)
    assert all(v >= 0.0 for v in variances)
    test_auc = bc.auc(list(labels), list(probabilities))
    print(f"test AUC {test_auc:.3f}")

    # Median split on a controlled population (a 36-instance test split
    # can legitimately leave one half single-class, which is an error by
    # contract).
    (low_auc, low_pos), (high_auc, high_pos) = bc.median_split(
        [False, True, False, True], [0.1, 0.9, 0.2, 0.8], [1.0, 2.0, 3.0, 4.0]
    )
    assert (low_pos, high_pos) == (1, 1)
    try:
        bc.median_split(list(labels), list(probabilities), list(variances))
        print("median split on model scores: both halves well-defined")
    except ValueError as e:
        print(f"median split on model scores raised as contracted: {e}")

    # Scoring is deterministic and survives a save/load round trip.
    assert model.score(test, seed=7) == scored
    with tempfile.TemporaryDirectory() as d:
        prefix = str(Path(d) / "member")
        model.save(prefix)
        reloaded = bc.Model.load(prefix)
        assert reloaded.score(test, seed=7) == scored

    print("smoke test passed")


if __name__ == "__main__":
    main()
