"""A small asynchronous-halving study over TempCNN settings on a reduced dataset."""

from attnseries.data import GeneratorConfig, generate
from attnseries.tune import FitRunner, SearchSpace, run_study

dataset = generate(GeneratorConfig(samples_per_class=60, grid=(6, 6)))
train = dataset.tensors("preprocessed", "train")[:2]
val = dataset.tensors("preprocessed", "val")[:2]
space = SearchSpace.for_architecture("tempcnn")
base = {"input_dim": 13, "num_classes": dataset.num_classes, "seq_len": dataset.nominal_length("preprocessed")}


def runner(config, seed):
    return FitRunner(space, config, train, val, seed, base_spec=base)


result = run_study(space, runner, budget_trials=8, parallelism=2, seed=0, ledger_path="tempcnn_study.jsonl")
print(f"{result.epochs_used} epochs spent")
for t in result.trials[:3]:
    print(f"trial {t.trial_id}: kappa {t.best_kappa:.3f} after {t.epochs} epochs  {t.config}")
