"""Project time-averaged transformer features of every layer to 2-D and
score them with a leave-one-out nearest neighbour.

Writes one CSV per layer into the working directory.
"""

from attnseries.analysis import extract_embeddings, leave_one_out_accuracy, pca, write_embeddings_csv
from attnseries.data import GeneratorConfig, generate
from attnseries.reference import EMBEDDING_SPEC, train_reference

dataset = generate(GeneratorConfig(samples_per_class=200))
run = train_reference(dataset, "transformer", "raw", seed=1, max_epochs=40, overrides=EMBEDDING_SPEC)
x, y, samples = dataset.tensors("raw", "test")
labels = y.argmax(1)

for layer, name in enumerate(run.model.hidden_names):
    proj = pca(extract_embeddings(run.model, x, labels, layer), 2)
    acc = leave_one_out_accuracy(proj.points, labels)
    print(f"{name:10s} explained {proj.explained_ratio.sum():.2f}  1-NN {acc:.3f}")
    write_embeddings_csv(proj.points, labels, f"embedding_{name}.csv", layer,
                         sample_ids=[s.sample_id for s in samples])
