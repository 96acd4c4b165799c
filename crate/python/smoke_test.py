#!/usr/bin/env python3
"""Smoke test for the gcb_audit_py extension module.

Build the extension first:

    cargo build -p gcb-audit-py --release

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_extension():
    """Copy the cdylib next to a temp dir under its importable name."""
    candidates = [
        REPO / "target" / "release" / "libgcb_audit_py.so",
        REPO / "target" / "debug" / "libgcb_audit_py.so",
        REPO / "target" / "release" / "libgcb_audit_py.dylib",
        REPO / "target" / "debug" / "libgcb_audit_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("extension not built; run: cargo build -p gcb-audit-py --release")
    stage = Path(tempfile.mkdtemp(prefix="gcb_audit_py_"))
    shutil.copy2(built, stage / "gcb_audit_py.so")
    sys.path.insert(0, str(stage))
    import gcb_audit_py

    return gcb_audit_py


def check(name, condition, detail=""):
    if not condition:
        sys.exit(f"FAIL {name} {detail}")
    print(f"PASS {name}")


def main():
    m = import_extension()

    # Planted-signal bundle at a small desk scale.
    bundle = m.Bundle.synth(
        num_queries=400, num_candidates=200, num_buckets=20, group_size=10, num_stories=2
    )
    check("synth shape", bundle.num_queries == 400 and bundle.num_candidates == 200)
    check("bucket sizes partition", sum(bundle.bucket_sizes()) == 200)

    base = bundle.base_metrics()
    check("base metrics in informative regime", 0.02 < base["r_at_k"]["1"] < 0.98, base)

    # The correction lifts R@1 on planted structure.
    cfg = m.GcbConfig()
    corrected = m.apply_gcb(bundle, cfg)
    gcb_r1 = corrected.base_metrics()["r_at_k"]["1"]
    check("corrected bundle shape", corrected.num_candidates == 200)
    check("positive contextual gain", gcb_r1 > base["r_at_k"]["1"], (base["r_at_k"]["1"], gcb_r1))

    # Full audit dict with bootstrap significance.
    report = m.audit(bundle, cfg, bootstrap=500, seed=3)
    check("audit delta positive", report["delta"]["r_at_k"]["1"] > 0)
    check("audit flips net positive", report["flips"]["net"] > 0)
    check("bootstrap p at floor", report["bootstrap"]["delta_r1"]["p_value"] == 1 / 500)

    # Oracle dominance.
    oracle = m.oracle(bundle)
    check("oracle dominates base", oracle["oracle_r1"] >= oracle["base_r1"])

    # Decomposition structural zero.
    decomp = m.decompose(bundle, cfg)
    miss = [r for r in decomp["subsets"] if r["subset"] == "errors_bucket_miss"][0]
    check(
        "structural zero on errors-and-miss subset",
        miss["num_queries"] == 0 or miss["hard_prune_r1"] == 0.0,
    )

    # Grouping perturbation collapses the gain; the baseline is invariant.
    series = m.perturb_series(bundle, "random_within_story", [0.0, 1.0], cfg, seed=5)
    rows = series["rows"]
    check("baseline invariant under perturbation", rows[0]["base_r1"] == rows[1]["base_r1"])
    check(
        "perturbation reduces the gain",
        rows[1]["delta_r1"] < rows[0]["delta_r1"],
        (rows[0]["delta_r1"], rows[1]["delta_r1"]),
    )

    # Attenuation drives the gain to zero.
    att = m.attenuation_sweep(bundle, [1.0, 0.0], cfg, seed=5)
    check(
        "attenuation collapses the gain",
        abs(att["rows"][1]["delta_r1"]) < abs(att["rows"][0]["delta_r1"]) + 1e-12,
    )

    # Lower-level diagnostics.
    mask = m.bucket_hit_mask(bundle, cfg)
    check("hit mask length", len(mask) == bundle.num_queries)
    bins = m.length_binned(bundle, [1, 5, 20], cfg)
    check("length bins partition", sum(r["population"] for r in bins) == bundle.num_queries)
    attenuated = m.attenuate(bundle, 0.0, seed=3)
    att_base = attenuated.base_metrics()["r_at_k"]["1"]
    check("attenuated bundle near chance", att_base < base["r_at_k"]["1"], att_base)

    # Exact op counts.
    ops = m.opcount(71736, 1464, 1024, 360)
    check("per-query MACs", ops["per_query_macs"] == 539688960)
    check("sci forms", ops["per_query_macs_sci"] == "5.40e8" and ops["total_macs_sci"] == "3.87e13")

    # Spearman on a hand-checked instance.
    check("spearman", math.isclose(m.spearman([1, 2, 3, 4], [2, 1, 4, 3]), 0.6))

    # Frobenius scoring on a hand-checked pair.
    row = m.compute_logits([[1.0, 0.0], [0.0, 1.0]], [[[1.0, 0.0], [0.0, 1.0]]])
    check("frobenius logit", math.isclose(row[0], 2.0 / (math.sqrt(2.0) + 1e-8)))

    # File round trip through a temp dir.
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        paths = (tmp / "l.gcbl", tmp / "c.jsonl", tmp / "q.jsonl")
        bundle.save(*paths)
        loaded = m.Bundle.load(*paths)
        check("round trip ranks equal", loaded.ranks() == bundle.ranks())
        with open(paths[2]) as fh:
            first = json.loads(fh.readline())
        check("query manifest schema", {"id", "target", "group"} <= set(first))

    print("smoke test passed")


if __name__ == "__main__":
    main()
