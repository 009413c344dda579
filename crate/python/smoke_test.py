"""Smoke test for the `cngan` extension module.

Build and run from the repository root:

    cargo build --release -p cngan-py --features extension-module
    cp target/release/libcngan_py.so python/cngan.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cngan  # noqa: E402

SMALL = dict(users=16, items=40, topics=4, intervals=6, archetypes=3,
             interactions_min=1, interactions_max=4)


def main():
    ds = cngan.Dataset.synthesize(seed=1, **SMALL)
    assert (ds.num_users, ds.num_items, ds.num_topics, ds.num_intervals) == (16, 40, 4, 6), ds
    assert len(ds.fingerprint()) == 64
    assert math.isclose(sum(ds.target(0, 0)), 1.0) or sum(ds.target(0, 0)) == 0.0
    over = ds.overlapped()
    assert over and ds.source(over[0], 0) is not None

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "data.jsonl")
        ds.save(path)
        assert cngan.Dataset.load(path).fingerprint() == ds.fingerprint()

        cfg = dict(offline_epochs=2, online_iters=2, encoding_dim=3, latent_dim=4,
                   triplets_per_item=2, top_n=[5], lr=0.01)
        full = cngan.Trainer(ds, variant="proposed", seed=7, **cfg)
        full.run()
        assert full.phase == "done"
        assert len(full.offline_trace()) == 2
        assert all(math.isfinite(r["r_loss"]) for r in full.online_trace())

        half = cngan.Trainer(ds, variant="proposed", seed=7, **cfg)
        half.offline_train()
        assert half.phase == "online"
        ck = os.path.join(tmp, "ck.bin")
        half.save(ck)
        resumed = cngan.Trainer.resume(ds, ck)
        while resumed.step():
            pass
        assert resumed.report_csv() == full.report_csv()

        aggs = full.aggregates()
        assert aggs and all(0.0 <= a["hr"] <= 1.0 for a in aggs)

        try:
            cngan.Trainer(ds, variant="nope", **cfg)
        except ValueError:
            pass
        else:
            raise AssertionError("unknown variant accepted")

    assert cngan.hit_ratio([3, 1, 2], [2, 9]) == 0.5
    assert math.isclose(cngan.ndcg([3, 2], [2]), 1.0 / math.log2(3))
    for a in aggs:
        print(f"{a['variant']:>9} N={a['n']:<3} HR={a['hr']:.4f} NDCG={a['ndcg']:.4f}")
    print("smoke test ok")


if __name__ == "__main__":
    main()
