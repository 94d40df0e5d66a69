"""Train one architecture on raw and on gap-filled series and compare test kappa.

    python demos/raw_vs_preprocessed.py transformer
"""

import sys

from attnseries.analysis import metrics, predict_logits
from attnseries.data import GeneratorConfig, generate
from attnseries.reference import train_reference

arch = sys.argv[1] if len(sys.argv) > 1 else "tempcnn"
dataset = generate(GeneratorConfig(samples_per_class=200))

for mode in ("raw", "preprocessed"):
    run = train_reference(dataset, arch, mode, seed=0, max_epochs=30)
    x, y, _ = dataset.tensors(mode, "test")
    rep = metrics(predict_logits(run.model, x).argmax(1), y.argmax(1), dataset.num_classes)
    print(f"{arch:12s} {mode:13s} epochs {len(run.result.history):2d}  "
          f"acc {rep.accuracy:.3f}  kappa {rep.kappa:.3f}  ({run.seconds:.0f}s)")
