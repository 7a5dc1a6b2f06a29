import csv
import io

import numpy as np
import pytest
from sklearn.metrics import f1_score

from arpgnet.data import SynthTaskConfig, synth_generate
from arpgnet.evaluation import (
    ABLATION_LABELS,
    FoldPlan,
    LeakageError,
    MetricReport,
    ablation_run,
    attention_edge_counts,
    bench_inference,
    compute_metrics,
    dump_attention,
    loso_run,
    m_score,
    make_fold_plan,
)
from arpgnet.graphs import build_fusion_graph, build_relation_graph
from arpgnet.model import ArpgNet, ArpgNetConfig
from arpgnet.training import TrainConfig

TOY = dict(T=4, H=32, W=32, embed_dim=16, P=3, trs=1, heads=2, n_classes=2)
FEAT = ArpgNetConfig(T=16, embed_dim=16, backbone="features", n_classes=2)


# -- metrics -------------------------------------------------------------------------------------

def test_perfect_predictions():
    r = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert (r.accuracy, r.macro_f1, r.m_score) == (1.0, 1.0, pytest.approx(1.0))


def test_m_score_arithmetic():
    assert m_score(0.6, 0.5) == pytest.approx(0.533, abs=1e-12)
    assert m_score(1.0, 0.0) == pytest.approx(0.33, abs=1e-12)


def test_absent_class_counts_as_zero_f1():
    r = compute_metrics([0, 0, 0], [0, 0, 0], 2)
    assert r.accuracy == 1.0 and r.macro_f1 == 0.5
    assert r.to_dict()["absent_class_f1"] == 0.0


def brute_confusion(pred, true, K):
    out = [[0] * K for _ in range(K)]
    for p, t in zip(pred, true):
        out[t][p] += 1
    return out


def test_metrics_against_brute_force_and_sklearn():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = int(rng.integers(2, 7))
        n = int(rng.integers(1, 40))
        true, pred = rng.integers(0, K, n), rng.integers(0, K, n)
        r = compute_metrics(pred, true, K)
        assert r.confusion.tolist() == brute_confusion(pred.tolist(), true.tolist(), K)
        assert r.confusion.sum() == r.n_samples == n
        assert r.accuracy == np.trace(r.confusion) / n
        ref = f1_score(true, pred, labels=list(range(K)), average="macro", zero_division=0)
        assert r.macro_f1 == pytest.approx(ref, abs=1e-12)
        assert abs(r.m_score - (0.33 * r.accuracy + 0.67 * r.macro_f1)) <= 1e-9


def test_metric_errors():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], [0], 2)
    with pytest.raises(ValueError):
        compute_metrics([], [], 2)
    with pytest.raises(ValueError):
        compute_metrics([2], [0], 2)


# -- folds ----------------------------------------------------------------------------------------

def test_fold_plan_is_deterministic_and_order_free():
    subs = [f"subj{i}" for i in range(8)]
    a = make_fold_plan(subs)
    b = make_fold_plan(list(reversed(subs)) + subs)
    assert a == b and len(a) == 8
    for test, train in a:
        assert len(test) == 1 and set(train) == set(subs) - set(test)


def test_fold_plan_needs_two_subjects():
    with pytest.raises(ValueError):
        make_fold_plan(["only"])


def test_overlapping_plan_detected():
    with pytest.raises(LeakageError):
        FoldPlan(((("a",), ("a", "b")), (("b",), ("a",)))).check()


def test_loso_eight_folds_disjoint():
    ds = synth_generate(SynthTaskConfig(samples_per_class=16, n_subjects=8, seed=1))
    res = loso_run(ds, FEAT, TrainConfig(epochs=1))
    assert len(res.folds) == 8
    by_id = {s.sample_id: s.subject_id for s in ds.samples}
    for f in res.folds:
        assert {by_id[i] for i in f.test_ids} == {f.subject}
        assert f.subject not in {by_id[i] for i in f.train_ids}
        assert not set(f.train_ids) & set(f.test_ids)
        assert len(f.train_ids) + len(f.test_ids) == len(ds)
    assert res.std == pytest.approx(np.std(res.accuracies))
    assert "±" in res.summary()


def test_loso_two_subjects_separable():
    cfg = SynthTaskConfig(samples_per_class=40, n_subjects=2, noise_sigma=0.0, evidence_window=0, seed=2)
    res = loso_run(synth_generate(cfg), FEAT, TrainConfig(epochs=60, batch_size=8, lr_other=3e-3))
    assert len(res.folds) == 2
    assert min(res.accuracies) >= 0.95


def test_loso_parallel_matches_serial():
    ds = synth_generate(SynthTaskConfig(samples_per_class=8, n_subjects=3, seed=4))
    a = loso_run(ds, FEAT, TrainConfig(epochs=1))
    b = loso_run(ds, FEAT, TrainConfig(epochs=1), n_jobs=2)
    assert a.accuracies.tolist() == b.accuracies.tolist()


def test_loso_requires_subjects():
    ds = synth_generate(SynthTaskConfig(samples_per_class=4, n_subjects=0))
    with pytest.raises(ValueError):
        loso_run(ds, FEAT, TrainConfig(epochs=1))


# -- ablation -------------------------------------------------------------------------------------

def test_ablation_table_layout():
    ds = synth_generate(SynthTaskConfig(samples_per_class=10, seed=0))
    table = ablation_run(ds, FEAT, TrainConfig(epochs=1), seeds=[0, 1])
    rows = list(csv.DictReader(io.StringIO(table.to_csv())))
    assert [r["variant"] for r in rows] == list(ABLATION_LABELS.values())
    assert [r["variant"] for r in rows] == ["appearance_only", "relation_only", "concat_baseline",
                                            "fusion_no_trs", "fusion_trs"]
    for r in table.rows:  # every variant trained on the same batches
        assert r.plan_digests == table.rows[0].plan_digests


# -- attention dump ----------------------------------------------------------------------------------

def test_dump_counts_and_normalisation(tmp_path):
    m = ArpgNet(ArpgNetConfig(**TOY))
    clip = np.random.default_rng(0).standard_normal((4, 3, 32, 32)).astype(np.float32)
    dump = dump_attention(m, clip, tmp_path)
    counts = dump.edge_counts()
    assert counts["fusion.0"] == 2 * build_fusion_graph(4, 1).n_edges
    assert counts["relation.0"] == 2 * 4 * build_relation_graph(3).n_edges
    # rows of beta sum to one over the neighbours of src
    sums = {}
    for head, layer, src, dst, beta, frame in dump.edges:
        key = (head, layer, src, frame)
        sums[key] = sums.get(key, 0.0) + beta
    np.testing.assert_allclose(list(sums.values()), 1.0, atol=1e-5)
    header = (tmp_path / "attention_edges.csv").read_text().splitlines()[0]
    assert header.startswith("head,layer,src,dst,beta")
    assert len(dump.temporal) == 8 and {r[3] for r in dump.temporal} == {"appearance", "relation"}
    assert len(dump.spatial) == 3 * 9
    assert (tmp_path / "temporal_profile.csv").is_file() and (tmp_path / "spatial_profile.csv").is_file()


def test_uniform_attention_dump():
    m = ArpgNet(ArpgNetConfig(**TOY))
    for lay in m.rel_gat + m.fusion_gat:
        lay.att.data[...] = 0.0
    dump = dump_attention(m, np.ones((1, 4, 3, 32, 32), np.float32))
    fusion = build_fusion_graph(4, 1)
    deg = fusion.entries.sum(axis=1)
    for head, layer, src, dst, beta, _ in dump.edges:
        if layer == "fusion.0":
            assert beta == pytest.approx(1.0 / deg[src])
    # column sums of a uniform map: each node collects 1/deg from each neighbour
    expected = (fusion.entries / deg[:, None]).sum(axis=0)
    np.testing.assert_allclose([r[2] for r in dump.temporal], expected, atol=1e-6)


# -- timing -----------------------------------------------------------------------------------------

def test_bench_warmup_plus_three_runs(monkeypatch):
    m = ArpgNet(ArpgNetConfig(**TOY))
    calls = []
    real = ArpgNet.forward

    def counting(self, x, rng=None):
        calls.append(1)
        return real(self, x, rng)

    monkeypatch.setattr(ArpgNet, "__call__", counting)
    ticks = iter(range(100))
    res = bench_inference(m, repeats=3, clock=lambda: float(next(ticks)))
    assert len(calls) == 4
    assert res.run_seconds == [1.0, 1.0, 1.0] and res.mean_seconds == 1.0
    d = res.to_dict(accuracy=0.5)
    assert d["repeats"] == 3 and d["accuracy"] == 0.5


def test_bench_edge_counts_follow_band_structure():
    counts = []
    for T in (8, 16):
        cfg = ArpgNetConfig(**{**TOY, "T": T, "trs": 3})
        counts.append(attention_edge_counts(cfg)["fusion.0"])
        assert counts[-1] == cfg.heads * build_fusion_graph(T, 3).n_edges
    # four T x T bands of half-width 3: 4 * (T + 2 * sum_{d=1..3} (T - d))
    assert counts == [2 * 4 * (8 + 2 * (7 + 6 + 5)), 2 * 4 * (16 + 2 * (15 + 14 + 13))]


def test_bench_real_clock_runs():
    res = bench_inference(ArpgNet(ArpgNetConfig(**TOY)))
    assert len(res.run_seconds) == 3 and all(t > 0 for t in res.run_seconds)
