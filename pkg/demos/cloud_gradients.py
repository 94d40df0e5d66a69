"""How much does a raw-data transformer look at cloudy observations?

Trains on raw series, then compares input gradients of the winning class
probability on cloudy and clear time steps, and prints where the attention
of the first block goes on average.
"""

import numpy as np

from attnseries.analysis import attention_summary, input_gradients, predict_logits
from attnseries.data import GeneratorConfig, generate
from attnseries.reference import train_reference

dataset = generate(GeneratorConfig(samples_per_class=200))
run = train_reference(dataset, "transformer", "raw", seed=0, max_epochs=40)

x, y, samples = dataset.tensors("raw", "test")
hit = np.flatnonzero(predict_logits(run.model, x).argmax(1) == y.argmax(1))[:100]
grads = np.abs(input_gradients(run.model, x[hit]).gradients)
cloudy = np.stack([samples[i].cloud for i in hit])
print(f"{len(hit)} correctly classified samples, {cloudy.mean():.0%} of steps cloudy")
print(f"mean |grad| cloudy {grads[cloudy].mean():.2e}  clear {grads[~cloudy].mean():.2e}  "
      f"ratio {grads[cloudy].mean() / grads[~cloudy].mean():.3f}")

summary = attention_summary(run.model, x[hit])
alpha = np.mean([m for (layer, _), m in zip(summary.keys, summary.mean_scores) if layer == 1], axis=0)
print(f"block 1 attention on cloudy steps {alpha[cloudy].mean():.4f}  clear {alpha[~cloudy].mean():.4f}")
