"""Acceptance suite: one PASS/FAIL line per criterion, then the assertion.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines appear.
The learnability, trend, attribution and separability checks train the
reference models on the default synthetic dataset and take most of an hour
on one core.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from attnseries import data as data_io
from attnseries.analysis import (
    attention_summary, extract_embeddings, input_gradients, leave_one_out_accuracy, metrics, pca,
    predict_logits,
)
from attnseries.autodiff import Tensor, avg_pool1d, dropout, global_max_time
from attnseries.checkpoint import load_checkpoint, save_checkpoint
from attnseries.data import GeneratorConfig, generate
from attnseries.layers import (
    BatchNorm, Conv1d, Dense, GRULayer, LayerNorm, LSTMStack, ResidualBlock1D, SelfAttention,
    SoftAttention, TransformerBlock, bilstm_encode, soft_attention,
)
from attnseries.models import ARCHITECTURES, ModelSpec, build
from attnseries.reference import EMBEDDING_SPEC, REFERENCE_ARCHITECTURES
from attnseries.train import EarlyStopper, TrainConfig, early_stop, fit
from attnseries.tune import Continuous, SearchSpace, read_ledger, run_study
from gradcheck import check_gradients, weighted_sum
from oracles import brute_force, lockstep_asha, stop_epoch

SEEDS = range(5)


def report(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n{tag} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _rng(seed):
    return np.random.default_rng(seed)


# -- C1 gradient correctness ---------------------------------------------------

def _layer_subjects():
    subjects = []

    def add(name, fn, x, params):
        subjects.append((name, fn, x, params))

    x = Tensor(_rng(1).normal(size=(3, 6, 3)), requires_grad=True)
    dense = Dense(3, 4, "tanh", rng=_rng(2))
    add("dense", lambda x=x: weighted_sum(dense(x), _rng(3).normal(size=(3, 6, 4))), x, dense.parameters())

    x = Tensor(_rng(4).normal(size=(3, 5, 4)), requires_grad=True)
    ln = LayerNorm(4)
    ln.gain.data[...] = _rng(5).normal(size=4)
    add("layer_norm", lambda x=x: weighted_sum(ln(x), _rng(6).normal(size=(3, 5, 4))), x, ln.parameters())

    bn = BatchNorm(4)
    bn.gain.data[...] = _rng(7).normal(size=4)
    add("batch_norm", lambda x=x: weighted_sum(bn(x, "train"), _rng(8).normal(size=(3, 5, 4))), x, bn.parameters())

    x = Tensor(_rng(9).normal(size=(2, 7, 3)), requires_grad=True)
    conv = Conv1d(3, 4, 3, rng=_rng(10))
    add("conv1d", lambda x=x: weighted_sum(conv(x), _rng(11).normal(size=(2, 7, 4))), x, conv.parameters())

    add("dropout", lambda x=x: weighted_sum(dropout(x, 0.3, "train", _rng(12)), _rng(13).normal(size=(2, 7, 3))),
        x, [])
    add("global_max_pool", lambda x=x: weighted_sum(global_max_time(x), _rng(14).normal(size=(2, 3))), x, [])
    add("avg_pool", lambda x=x: weighted_sum(avg_pool1d(x, 3), _rng(15).normal(size=(2, 3, 3))), x, [])

    x = Tensor(_rng(16).normal(size=(2, 5, 3)), requires_grad=True)
    stack = LSTMStack(3, 4, num_layers=2, rng=_rng(17))
    w_seq, w_fin = _rng(18).normal(size=(2, 5, 8)), _rng(19).normal(size=(2, 8))

    def lstm_loss(x=x):
        h, final = bilstm_encode(stack, x)
        return weighted_sum(h, w_seq) + weighted_sum(final, w_fin)
    add("bilstm_stack", lstm_loss, x, stack.parameters())

    gru = GRULayer(3, 4, rng=_rng(20))
    add("gru", lambda x=x: weighted_sum(gru(x), _rng(21).normal(size=(2, 5, 4))), x, gru.parameters())

    soft = SoftAttention(3, 4, "tan", rng=_rng(22))
    add("soft_attention", lambda x=x: weighted_sum(soft_attention(soft, x)[0], _rng(23).normal(size=(2, 3))),
        x, soft.parameters())

    x = Tensor(_rng(24).normal(size=(2, 5, 4)), requires_grad=True)
    att = SelfAttention(4, 2, rng=_rng(25))
    add("self_attention", lambda x=x: weighted_sum(att(x)[0], _rng(26).normal(size=(2, 5, 4))), x, att.parameters())
    block = TransformerBlock(4, 2, 16, rng=_rng(27))
    add("transformer_block", lambda x=x: weighted_sum(block(x)[0], _rng(28).normal(size=(2, 5, 4))),
        x, block.parameters())

    x = Tensor(_rng(29).normal(size=(2, 6, 3)), requires_grad=True)
    res = ResidualBlock1D(3, 3, rng=_rng(30))
    add("residual_block", lambda x=x: weighted_sum(res(x, "train"), _rng(31).normal(size=(2, 6, 3))),
        x, res.parameters())
    return subjects


SMALL_SPECS = {
    "lstm_rnn": dict(hidden_dim=16, num_layers=2),
    "transformer": dict(hidden_dim=16, num_layers=2, num_heads=4),
    "msresnet": dict(hidden_dim=16, resample_length=24),
    "tempcnn": dict(hidden_dim=16, kernel_size=3),
    "softattn_gru": dict(hidden_dim=16),
}


def _architecture_subjects():
    subjects = []
    for i, arch in enumerate(ARCHITECTURES):
        m = build(ModelSpec(arch, input_dim=3, num_classes=4, seq_len=8, **SMALL_SPECS[arch]), 40 + i)
        m.head.weight.data[...] = _rng(i).normal(size=m.head.weight.shape)  # heads start at zero
        x = Tensor(_rng(50 + i).normal(size=(3, 8, 3)), requires_grad=True)
        w = _rng(60 + i).normal(size=(3, 4))
        mode = "train" if arch in ("msresnet", "tempcnn") else "eval"
        subjects.append((arch, lambda m=m, x=x, w=w, mode=mode: weighted_sum(m(x, mode).logits, w),
                         x, m.parameters()))
    return subjects


def test_c1_gradient_correctness(capsys):
    start = time.perf_counter()
    worst, where = 0.0, None
    for i, (name, fn, x, params) in enumerate(_layer_subjects() + _architecture_subjects()):
        for kind, tensors in (("input", [x]), ("params", params)):
            if not tensors:
                continue
            err = check_gradients(fn, tensors, n_coords=20, rng=_rng(100 + i))
            if err >= worst:
                worst, where = err, f"{name}/{kind}"
    seconds = time.perf_counter() - start
    report(capsys, "C1", worst < 1e-4 and seconds < 60,
           f"worst relative error {worst:.2e} ({where}), {seconds:.1f}s")


# -- C2 attention invariants ---------------------------------------------------

def test_c2_attention_rows_sum_to_one(capsys):
    rng = _rng(0)
    configs = [(d, h, l) for d in (16, 32) for h in (1, 2, 4, 8) for l in (1, 2, 3)]
    worst_row, worst_mean, n_inputs = 0.0, 0.0, 0
    for i in range(1000):
        d, h, l = configs[i % len(configs)]
        model = _transformer(d, h, l, i % len(configs))
        t_len = int(rng.integers(1, 30))
        scale = 10.0 ** rng.uniform(-3, 3)
        x = rng.normal(scale=scale, size=(1, t_len, 13))
        summary = attention_summary(model, x)
        for a in summary.matrices:
            worst_row = max(worst_row, float(np.abs(a.sum(axis=-1) - 1).max()))
        for m in summary.mean_scores:
            worst_mean = max(worst_mean, float(np.abs(m.sum(axis=-1) - 1).max()))
        n_inputs += 1
    report(capsys, "C2", n_inputs == 1000 and worst_row <= 1e-10 and worst_mean <= 1e-10,
           f"{n_inputs} inputs, max row deviation {worst_row:.1e}, max mean deviation {worst_mean:.1e}")


_TRANSFORMERS = {}


def _transformer(d, h, l, seed):
    key = (d, h, l)
    if key not in _TRANSFORMERS:
        _TRANSFORMERS[key] = build(ModelSpec("transformer", hidden_dim=d, num_heads=h, num_layers=l), seed)
    return _TRANSFORMERS[key]


# -- C3 metric oracles ---------------------------------------------------------

def test_c3_metrics_match_counting_oracle(capsys):
    rng = _rng(1)
    bad = 0
    for _ in range(200):
        c = int(rng.integers(2, 8))
        n = int(rng.integers(1, 120))
        labels = rng.integers(c, size=n)
        preds = np.where(rng.random(n) < rng.random(), labels, rng.integers(c, size=n))
        rep = metrics(preds, labels, c)
        acc, kappa, f1 = brute_force(list(preds), list(labels), c)
        ok = (Fraction(rep.accuracy) == Fraction(float(acc)) and abs(rep.kappa - float(kappa)) <= 1e-12
              and np.max(np.abs(rep.f1 - np.array([float(v) for v in f1]))) <= 1e-12)
        bad += not ok
    constant_ok = True
    for c in range(2, 7):
        for k in range(c):
            labels = list(rng.integers(c, size=int(rng.integers(1, 50))))
            preds = [k] * len(labels)
            constant_ok &= brute_force(preds, labels, c)[1] == 0 and metrics(preds, labels, c).kappa == 0.0
    report(capsys, "C3", bad == 0 and constant_ok,
           f"{200 - bad}/200 sets agree, constant predictor kappa exactly zero: {constant_ok}")


# -- C4 learnability -----------------------------------------------------------

def test_c4_reference_models_learn_clean_data(reference_runs, capsys):
    best, seconds = {}, 0.0
    for arch in REFERENCE_ARCHITECTURES:
        run = reference_runs(arch, "preprocessed", 0)
        best[arch] = max(r.report.accuracy for r in run.result.history)
        seconds += run.seconds
    ok = all(v >= 0.85 for v in best.values()) and seconds < 15 * 60
    detail = ", ".join(f"{a} {v:.3f}" for a, v in best.items())
    report(capsys, "C4", ok, f"best val accuracy {detail}; {seconds:.0f}s total")


# -- C5 raw versus preprocessed trend -----------------------------------------

def _test_kappa(run, dataset):
    x, y, _ = dataset.tensors(run.mode, "test")
    return metrics(predict_logits(run.model, x).argmax(1), y.argmax(1), dataset.num_classes).kappa


def test_c5_directional_trend(reference_runs, default_dataset, capsys):
    kappa = {(a, m): np.mean([_test_kappa(reference_runs(a, m, s), default_dataset) for s in SEEDS])
             for a in REFERENCE_ARCHITECTURES for m in ("raw", "preprocessed")}
    recurrent_ok = min(kappa["lstm_rnn", "raw"], kappa["transformer", "raw"]) >= kappa["tempcnn", "raw"] - 0.02
    clean_ok = all(kappa[a, "preprocessed"] >= kappa[a, "raw"] - 0.02 for a in REFERENCE_ARCHITECTURES)
    detail = ", ".join(f"{a} raw {kappa[a, 'raw']:.3f} pre {kappa[a, 'preprocessed']:.3f}"
                       for a in REFERENCE_ARCHITECTURES)
    report(capsys, "C5", recurrent_ok and clean_ok, f"mean test kappa over 5 seeds: {detail}")


# -- C6 cloud suppression ------------------------------------------------------

def _cloud_ratio(run, dataset):
    x, y, samples = dataset.tensors("raw", "test")
    correct = np.flatnonzero(predict_logits(run.model, x).argmax(1) == y.argmax(1))[:100]
    grads = np.abs(input_gradients(run.model, x[correct]).gradients)
    cloudy = np.stack([samples[i].cloud for i in correct])
    return len(correct), grads[cloudy].mean() / grads[~cloudy].mean()


def test_c6_gradients_ignore_clouds(reference_runs, default_dataset, capsys):
    ratios, counts = {}, {}
    for arch in ("lstm_rnn", "transformer"):
        counts[arch], ratios[arch] = _cloud_ratio(reference_runs(arch, "raw", 0), default_dataset)
    ok = all(counts[a] == 100 and ratios[a] <= 0.5 for a in ratios)
    detail = ", ".join(f"{a} {r:.3f}" for a, r in ratios.items())
    report(capsys, "C6", ok, f"cloudy/clear mean |grad| over 100 correct test samples: {detail}")


# -- C7 ASHA bound and promotion oracle ---------------------------------------

class CrossingRunner:
    """Kappa curves whose order changes between rungs."""

    def __init__(self, cfg):
        self.cfg, self.epoch = cfg, 0

    def run_epoch(self):
        self.epoch += 1
        return crossing_kappa(self.cfg, self.epoch)


def crossing_kappa(cfg, epoch):
    return cfg["early"] * math.exp(-epoch / 15) + cfg["late"] * (1 - math.exp(-epoch / 15))


def test_c7_asha_bound_and_promotions(tmp_path, capsys):
    space = SearchSpace("x", (("early", Continuous(0.0, 1.0)), ("late", Continuous(0.0, 1.0))))
    n = 64
    bound = n * 10 + math.ceil(n / 2) * 10 + math.ceil(n / 4) * 20 + math.ceil(n / 8) * 20
    lines = []
    ok = True
    for parallelism in (n, 8, 1):
        path = tmp_path / f"study{parallelism}.jsonl"
        res = run_study(space, lambda cfg, seed: CrossingRunner(cfg), n, parallelism, seed=5, ledger_path=path)
        configs = {t.trial_id: t.config for t in res.trials}
        expected, used = lockstep_asha(lambda tid, ep: crossing_kappa(configs[tid], ep), n, parallelism)
        got = [(r["trial_id"], r["epoch"], r["decision"]) for r in read_ledger(path)]
        same = got == expected and used == res.epochs_used
        within = res.epochs_used <= bound if parallelism == n else True
        ok &= same and within
        lines.append(f"parallelism {parallelism}: {res.epochs_used} epochs, {len(got)} decisions "
                     f"{'match' if same else 'differ'}")
    report(capsys, "C7", ok, f"bound {bound}; " + "; ".join(lines))


# -- C8 early stopping ---------------------------------------------------------

def _curves(n=50, seed=0):
    rng = _rng(seed)
    for i in range(n):
        e = np.arange(int(rng.integers(8, 90)))
        kind = i % 5
        if kind == 0:
            yield 2.0 * np.exp(-e / rng.uniform(3, 30)) + rng.normal(scale=0.02, size=e.size)
        elif kind == 1:  # overfitting: loss turns back up
            turn = rng.uniform(10, 40)
            yield 1.0 + 0.001 * (e - turn) ** 2 + rng.normal(scale=0.01, size=e.size)
        elif kind == 2:
            yield np.linspace(3, 0.1, e.size)
        elif kind == 3:
            yield np.abs(rng.normal(1.0, 0.3, size=e.size))
        else:
            yield np.repeat(rng.uniform(0.5, 2, size=e.size // 4 + 1), 4)[: e.size]


def test_c8_early_stopping_matches_simulation(capsys):
    agree, fired = 0, 0
    for losses in _curves():
        stopper = EarlyStopper()
        got = None
        for epoch, loss in enumerate(losses, start=1):
            if early_stop(stopper, loss) == "stop":
                got = epoch
                break
        want = stop_epoch(losses)
        agree += got == want
        fired += want is not None
    report(capsys, "C8", agree == 50, f"{agree}/50 curves agree ({fired} stop, {50 - fired} run out)")


# -- C9 embedding separability -------------------------------------------------

def _separability(run, dataset):
    x, y, _ = dataset.tensors("raw", "test")
    labels = y.argmax(1)
    last = len(run.model.hidden_names) - 1
    out = []
    for layer in (1, last):
        emb = extract_embeddings(run.model, x, labels, layer)
        out.append(leave_one_out_accuracy(pca(emb, 2).points, labels))
    return out


def test_c9_deeper_blocks_separate_better(reference_runs, default_dataset, capsys):
    pairs = [_separability(reference_runs("transformer", "raw", s, EMBEDDING_SPEC), default_dataset) for s in SEEDS]
    wins = sum(last > first for first, last in pairs)
    detail = ", ".join(f"seed {s}: first {f:.3f} last {l:.3f}" for s, (f, l) in zip(SEEDS, pairs))
    report(capsys, "C9", wins >= 3, f"{wins}/5 seeds favour the last block; {detail}")


# -- C10 determinism and round trips ------------------------------------------

def test_c10_determinism_and_round_trips(default_dataset, tmp_path, capsys):
    checks = {}
    data_io.save(default_dataset, tmp_path / "d.csv")
    back = data_io.load(tmp_path / "d.csv")
    data_io.save(back, tmp_path / "e.csv")
    checks["dataset"] = (back == default_dataset
                         and (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()
                         and all(np.array_equal(a, b) for mode in ("raw", "preprocessed")
                                 for a, b in zip(back.tensors(mode)[:2], default_dataset.tensors(mode)[:2])))

    small = generate(GeneratorConfig(samples_per_class=30, grid=(6, 6), seed=2))
    x_tr, y_tr, _ = small.tensors("raw", "train")
    x_va, y_va, _ = small.tensors("raw", "val")
    models = []
    for run in ("a", "b"):
        m = build(ModelSpec("transformer", hidden_dim=16, num_heads=2, num_layers=1), 3)
        fit(m, (x_tr, y_tr), (x_va, y_va), TrainConfig(seed=4, max_epochs=4, batch_size=16),
            log_path=tmp_path / f"log_{run}.csv")
        models.append(m)
    checks["logs"] = (tmp_path / "log_a.csv").read_bytes() == (tmp_path / "log_b.csv").read_bytes()

    save_checkpoint(models[0], tmp_path / "ck", {"mode": "raw"})
    restored, _ = load_checkpoint(tmp_path / "ck")
    x_te, _, _ = small.tensors("raw", "test")
    checks["checkpoint"] = predict_logits(restored, x_te).tobytes() == predict_logits(models[0], x_te).tobytes()
    report(capsys, "C10", all(checks.values()), ", ".join(f"{k} {'ok' if v else 'broken'}" for k, v in checks.items()))
