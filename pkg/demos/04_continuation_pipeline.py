"""A scaled-down end-to-end run: prepare, train, continue, evaluate.

The configuration keys are the same ones the `melodycont` CLI accepts as
flags.  The sizes here are tiny so the run finishes in about a minute; the
default configuration is what the acceptance tests use.

Run: python3 demos/04_continuation_pipeline.py [out_dir]
"""

import sys

from melodycont import pipeline

out = sys.argv[1] if len(sys.argv) > 1 else "demo_run"
cfg = pipeline.with_settings(pipeline.RunConfig(), {
    "out_dir": out, "corpus": "synth:12", "split": "0.75", "augment": "false",
    "vae.epochs": "150", "vae.lr": "1e-2", "predictor.layers": "2", "predictor.epochs": "60",
})
means = pipeline.run_all(cfg, log=lambda m: print(" ", m) if "epoch" not in m else None)
for variant, acc in means.items():
    print(f"{variant:9s} mean rhythm accuracy {acc:.3f}")
print(f"reports under {out}/reports, generations under {out}/generations")
