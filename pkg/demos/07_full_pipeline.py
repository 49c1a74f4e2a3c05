"""End to end through the file interfaces: gen -> compress -> eval.

Everything here also works from the shell via the `kvsculpt` command with
the same flags; this script drives the identical entry points in-process and
then inspects the artifacts.
"""

import json
import tempfile
from pathlib import Path

from kvsculpt.cli import main

with tempfile.TemporaryDirectory() as td:
    work = Path(td)
    toy = work / "toy.kvd"
    print("1. generate a seeded toy cache file")
    main(["gen", "--seed", "7", "--layers", "4", "--qheads", "4", "--kvheads",
          "2", "--dim", "16", "--ctx", "256", "--cont", "32", "--out", str(toy)])
    print("   file size:", toy.stat().st_size, "bytes")

    print("\n2. compress it at ratio 0.3 with per-layer budget allocation")
    comp = work / "compressed.kvd"
    report = work / "compress_report.json"
    main(["compress", "--cache", str(toy), "--ratio", "0.3", "--retain", "32",
          "--method", "kvsculpt", "--alloc", "layer", "--alpha", "0.5",
          "--pilot-steps", "20", "--outer-steps", "40", "--seed", "7",
          "--out", str(comp), "--report", str(report)])
    obj = json.loads(report.read_text())
    print("   per-layer budgets:", [sum(row) for row in obj["plan"]["k"]])
    print("   compressed size:", comp.stat().st_size, "bytes "
          f"({comp.stat().st_size / toy.stat().st_size:.0%} of the original)")

    print("\n3. evaluate against the stored teacher-forcing references")
    out = work / "eval.json"
    main(["eval", "--cache", str(toy), "--compressed", str(comp),
          "--out", str(out), "--plot-data", str(work / "series")])
    ev = json.loads(out.read_text())
    print("   kl_mean:", ev["kl_mean"])
    print("   per-layer hidden-state MSE:", [f"{x:.2e}" for x in ev["layer_mse_profile"]])
    print("   per-token KL concentration: max/mean "
          f"{ev['kl_max_over_mean']:.1f}, top-5 share {ev['kl_top5_fraction']:.0%}")
    print("   CSV series written:",
          sorted(p.name for p in work.glob("series_*.csv")))
