"""Cost model arithmetic, instrumented-counter agreement, config and
experiment-runner behavior.

The analytic numbers here are frozen from hand calculation: with
l_q=20, l_c=1000, n=10 the concatenated encoder scores 1020^2 =
1,040,400 entries per layer while ten 120-token segments score
10 * 120^2 = 144,000, a ratio of exactly 289/40 = 7.225.
"""

import json
from fractions import Fraction

import numpy as np
import pytest

from transync.encoder import EncoderParams, encode
from transync.harness import (
    BASELINES,
    CostModel,
    ExperimentConfig,
    _dataset_cost_model,
    _schema_from_name,
    analytic_attention_entries,
    attention_cost,
    benchmark_time_per_token,
    build_bench_input,
    build_model,
    count_attention_flops,
    generate_task_data,
    prepare_input,
    run_experiment,
    sync_groups_per_layer,
)
from transync.segmentation import (
    SyncSchema,
    build_anchor_plan,
    build_pseudo_plan,
    build_segmented_input,
)
from transync.tasks import QASample


# -- analytic cost model -------------------------------------------------------


def test_headline_cost_numbers():
    out = attention_cost(CostModel(l_q=20, l_c=1000, n=10))
    assert out["baseline_ops"] == 1_040_400
    assert out["transync_ops"] == 144_000
    assert out["ratio"] == Fraction(289, 40)
    assert float(out["ratio"]) == pytest.approx(7.225, abs=1e-12)


def test_cost_is_exact_rational():
    out = attention_cost(CostModel(l_q=7, l_c=100, n=3))
    # 3 * (7 + 100/3)^2 = 14641/3, not an integer, and must stay exact.
    assert out["transync_ops"] == Fraction(14641, 3)
    assert isinstance(out["ratio"], Fraction)


def test_cost_model_rejects_bad_shapes():
    with pytest.raises(ValueError):
        CostModel(l_q=0, l_c=10, n=2)
    with pytest.raises(ValueError):
        CostModel(l_q=5, l_c=0, n=1)
    with pytest.raises(ValueError):
        CostModel(l_q=5, l_c=10, n=0)
    with pytest.raises(ValueError):
        CostModel(l_q=5, l_c=10, n=11)


def test_single_segment_degenerates_to_baseline():
    out = attention_cost(CostModel(l_q=20, l_c=1000, n=1))
    assert out["transync_ops"] == out["baseline_ops"]
    assert out["ratio"] == 1


def test_ratio_monotone_in_n_before_turnover():
    # ratio(n) = (l_q + l_c)^2 / (n (l_q + l_c/n)^2) grows while
    # n < l_c / l_q; at 20/1000 the turnover sits at n = 50.
    ratios = [attention_cost(CostModel(20, 1000, n))["ratio"]
              for n in range(1, 33)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    beyond = attention_cost(CostModel(20, 1000, 100))["ratio"]
    assert beyond < attention_cost(CostModel(20, 1000, 50))["ratio"]


def test_sync_ops_reported_separately():
    out = attention_cost(CostModel(20, 1000, 10), sync_groups=2, sync_layers=3)
    assert out["sync_ops_per_layer"] == 200
    assert out["sync_ops_total"] == 600
    # headline numbers must not absorb the sync term
    assert out["transync_ops"] == 144_000


@pytest.mark.parametrize("schema,pseudo,expect", [
    (None, False, 0),
    (SyncSchema.none(), False, 0),
    (SyncSchema.all_to_all(), False, 1),
    (SyncSchema.neighbor_chain(2), False, 1),
    (SyncSchema.title_anchors(), False, 2),
    (SyncSchema.title_anchors(include_sep_group=False), False, 1),
    (None, True, 1),
])
def test_sync_groups_per_layer(schema, pseudo, expect):
    assert sync_groups_per_layer(schema, pseudo=pseudo) == expect


def test_analytic_entries_require_integer_split():
    with pytest.raises(ValueError):
        analytic_attention_entries(CostModel(7, 100, 3), n_layers=2)


# -- instrumented counters vs analytic ------------------------------------------


def _bench_params(vocab, d, n_layers, with_sync, max_len, seed=0):
    rng = np.random.default_rng(seed)
    params = EncoderParams.init(len(vocab), d, 4, n_layers, rng,
                                with_sync=with_sync, max_len=max_len)
    for p in params.tensors().values():
        p.requires_grad = False
    return params


@pytest.mark.parametrize("l_c,n", [(120, 2), (240, 4)])
def test_counted_entries_match_analytic_segmented(l_c, n):
    d, n_layers = 32, 2
    inp, vocab = build_bench_input(20, l_c, n)
    params = _bench_params(vocab, d, n_layers, True, inp.max_len() + 1)
    plan = build_anchor_plan(inp, SyncSchema.all_to_all())
    counted = count_attention_flops(params, inp, plan)
    expect = analytic_attention_entries(
        CostModel(20, l_c, n), n_layers, schema=SyncSchema.all_to_all())
    assert counted["entries"]["local"] == expect["local"]
    assert counted["entries"]["sync"] == expect["sync"]
    # macs = entries * heads * head_dim and heads * head_dim = d here
    assert counted["macs"]["local"] == expect["local"] * d
    assert counted["macs"]["sync"] == expect["sync"] * d


def test_counted_entries_match_analytic_concat():
    d, n_layers = 32, 2
    inp, vocab = build_bench_input(20, 120, 2, concat=True)
    params = _bench_params(vocab, d, n_layers, False, inp.max_len() + 1)
    plan = build_anchor_plan(inp, SyncSchema.none())
    counted = count_attention_flops(params, inp, plan)
    expect = analytic_attention_entries(CostModel(20, 120, 1), n_layers,
                                        concat=True)
    assert counted["entries"]["local"] == expect["local"]
    assert "sync" not in counted["entries"]


def test_counted_entries_match_analytic_pseudo():
    # the pseudo token adds one position to every segment, which the
    # cost model sees as one extra question token
    d, n_layers, l_q, l_c, n = 32, 2, 20, 240, 4
    base, vocab = build_bench_input(l_q, l_c, n)
    texts = [" ".join(vocab.decode(s.token_ids[s.sep_position + 1:]).split())
             for s in base.segments]
    question = vocab.decode(base.question_ids)
    inp = build_segmented_input(question, texts, vocab, prepend_pseudo=True)
    assert inp.max_len() == l_q + l_c // n + 1
    params = _bench_params(vocab, d, n_layers, True, inp.max_len() + 1)
    counted = count_attention_flops(params, inp, build_pseudo_plan(inp))
    expect = analytic_attention_entries(CostModel(l_q + 1, l_c, n),
                                        n_layers, pseudo=True)
    assert counted["entries"]["local"] == expect["local"]
    assert counted["entries"]["sync"] == expect["sync"]


# -- benchmark scaffolding -------------------------------------------------------


def test_bench_input_shapes():
    inp, _ = build_bench_input(6, 30, 3)
    assert inp.n == 3
    assert all(len(s) == 6 + 10 for s in inp.segments)
    assert inp.total_len() == 3 * 6 + 30
    cat, _ = build_bench_input(6, 30, 3, concat=True)
    assert cat.n == 1
    assert cat.total_len() == 36


def test_bench_input_rejects_bad_shapes():
    with pytest.raises(ValueError):
        build_bench_input(1, 30, 3)
    with pytest.raises(ValueError):
        build_bench_input(6, 31, 3)


def test_benchmark_requires_hundred_repeats():
    inp, vocab = build_bench_input(4, 8, 2)
    params = _bench_params(vocab, 16, 1, False, inp.max_len() + 1)
    plan = build_anchor_plan(inp, SyncSchema.none())
    with pytest.raises(ValueError):
        benchmark_time_per_token(params, inp, plan, repeats=99)


def test_benchmark_reports_positive_time():
    inp, vocab = build_bench_input(4, 8, 2)
    params = _bench_params(vocab, 16, 1, False, inp.max_len() + 1)
    plan = build_anchor_plan(inp, SyncSchema.none())
    out = benchmark_time_per_token(params, inp, plan, repeats=100)
    assert out["us_per_token"] > 0
    assert out["tokens"] == inp.total_len()
    assert out["repeats"] == 100
    assert "cpus" in out["hardware"]


# -- experiment configuration ----------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(baseline="T5")
    with pytest.raises(ValueError):
        ExperimentConfig(task="翻译")
    with pytest.raises(ValueError):
        ExperimentConfig(segment_policy="paragraph")
    with pytest.raises(ValueError):
        ExperimentConfig(preset="multihop-3")


def test_baseline_names_are_fixed():
    assert BASELINES == ("TranSync", "FiD", "LongConcat", "FiDPseudoToken")


def test_effective_schema_and_policy():
    fid = ExperimentConfig(baseline="FiD", schema=SyncSchema.all_to_all())
    assert fid.effective_schema().is_none
    assert not fid.with_sync()
    cat = ExperimentConfig(baseline="LongConcat")
    assert cat.effective_policy() == "concat"
    assert ExperimentConfig(task="multihop").effective_policy() == "document"
    assert ExperimentConfig(
        task="neighbor", preset="multihop-6").effective_policy() == "sentence"
    forced = ExperimentConfig(task="multihop", segment_policy="sentence")
    assert forced.effective_policy() == "sentence"
    pseudo = ExperimentConfig(baseline="FiDPseudoToken")
    assert pseudo.effective_schema().is_none and pseudo.with_sync()


def test_config_roundtrip_and_hash():
    cfg = ExperimentConfig(baseline="TranSync",
                           schema=SyncSchema.neighbor_chain(2),
                           seed=7, steps=12)
    rec = cfg.to_json_dict()
    assert rec["schema"] == {"variant": "neighbor_chain", "window": 2,
                             "include_sep_group": True}
    back = ExperimentConfig.from_json_dict(json.loads(json.dumps(rec)))
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert len(cfg.config_hash()) == 12
    assert cfg.config_hash() != ExperimentConfig(seed=8).config_hash()


def test_config_from_dict_accepts_schema_names_and_version():
    cfg = ExperimentConfig.from_json_dict(
        {"schema": "title_anchors", "version": 1})
    assert cfg.schema.variant == "title_anchors"
    with pytest.raises(ValueError):
        ExperimentConfig.from_json_dict({"schema": "none", "warp_drive": True})


# -- input preparation -----------------------------------------------------------


def _titled_sample():
    return QASample(
        question="what is the leader of aldora",
        context=[("aldora", "the leader of aldora is marin ."),
                 ("brevwick", "the anthem of brevwick is copket .")],
        answer="marin")


def _flat_sample():
    return QASample(
        question="who holds the lamper",
        context="mara has the lamper . she gave it to tobin . rokis slept .",
        answer="tobin")


def _vocab_for(samples, cfg=None):
    from transync.harness import build_experiment_vocab

    return build_experiment_vocab(samples)


def test_prepare_document_policy():
    cfg = ExperimentConfig(task="multihop",
                           schema=SyncSchema.title_anchors())
    sample = _titled_sample()
    vocab = _vocab_for([sample])
    inp, plan = prepare_input(sample, cfg, vocab)
    assert inp.n == 2
    assert all(s.title_span is not None for s in inp.segments)
    assert len(plan.groups) == 2  # title anchors plus the SEP group


def test_prepare_document_policy_needs_titles():
    cfg = ExperimentConfig(task="multihop")
    vocab = _vocab_for([_flat_sample()])
    with pytest.raises(ValueError):
        prepare_input(_flat_sample(), cfg, vocab)


def test_prepare_sentence_policy():
    cfg = ExperimentConfig(task="neighbor", schema=SyncSchema.neighbor_chain(1))
    sample = _flat_sample()
    vocab = _vocab_for([sample])
    inp, plan = prepare_input(sample, cfg, vocab)
    assert inp.n == 3
    assert all(s.title_span is None for s in inp.segments)


def test_prepare_sentence_policy_rejects_titled():
    cfg = ExperimentConfig(task="multihop", segment_policy="sentence")
    sample = _titled_sample()
    vocab = _vocab_for([sample])
    with pytest.raises(ValueError):
        prepare_input(sample, cfg, vocab)


def test_prepare_concat_truncates():
    cfg = ExperimentConfig(baseline="LongConcat", task="multihop",
                           max_input_len=5)
    sample = _titled_sample()
    vocab = _vocab_for([sample])
    inp, plan = prepare_input(sample, cfg, vocab)
    assert inp.n == 1
    # question + SEP + five context tokens
    assert len(inp.segments[0]) == len(inp.question_ids) + 1 + 5
    assert plan.is_empty


def test_prepare_pseudo_token_baseline():
    cfg = ExperimentConfig(baseline="FiDPseudoToken", task="multihop")
    sample = _titled_sample()
    vocab = _vocab_for([sample])
    inp, plan = prepare_input(sample, cfg, vocab)
    assert all(s.pseudo_position == 0 for s in inp.segments)
    assert len(plan.groups) == 1
    assert len(plan.groups[0].members) == inp.n


def test_dataset_cost_model_reads_shapes():
    inp, _ = build_bench_input(6, 30, 3)
    cost = _dataset_cost_model([(inp, None)])
    assert (cost.l_q, cost.l_c, cost.n) == (6, 30, 3)


# -- baseline lattice -------------------------------------------------------------


def test_longconcat_is_fid_on_one_segment():
    # LongConcat and FiD forced to a single concatenated segment must
    # be the same model: same tokens, same parameters, same encoding.
    sample = _titled_sample()
    base = dict(task="multihop", d=16, heads=2, enc_layers=1, seed=3)
    cfg_cat = ExperimentConfig(baseline="LongConcat", **base)
    cfg_fid = ExperimentConfig(baseline="FiD", segment_policy="concat", **base)
    vocab = _vocab_for([sample])
    inp_cat, plan_cat = prepare_input(sample, cfg_cat, vocab)
    inp_fid, plan_fid = prepare_input(sample, cfg_fid, vocab)
    assert inp_cat == inp_fid
    assert plan_cat == plan_fid
    m_cat = build_model(cfg_cat, vocab, inp_cat.max_len())
    m_fid = build_model(cfg_fid, vocab, inp_fid.max_len())
    for a, b in zip(m_cat.parameters(), m_fid.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    fused_cat = m_cat.encode_and_fuse(inp_cat, plan_cat)
    fused_fid = m_fid.encode_and_fuse(inp_fid, plan_fid)
    assert fused_cat.rows.data.tobytes() == fused_fid.rows.data.tobytes()


# -- data generation and the runner ----------------------------------------------


def test_generate_task_data_counts_and_determinism():
    cfg = ExperimentConfig(task="multihop", n_train=400, n_test=100, seed=5)
    a = generate_task_data(cfg)
    b = generate_task_data(cfg)
    assert len(a) == 500
    assert [s.to_json_dict() for s in a] == [s.to_json_dict() for s in b]


def _tiny_neighbor_config(seed=0):
    return ExperimentConfig(
        baseline="TranSync", schema=SyncSchema.neighbor_chain(1),
        task="neighbor", n_train=24, n_test=8, sentences_per_doc=3,
        d=16, heads=2, enc_layers=1, dec_layers=1, steps=6, batch_size=4,
        max_answer_len=4, seed=seed)


def test_run_experiment_writes_deterministic_report(tmp_path):
    cfg = _tiny_neighbor_config()
    rep1 = run_experiment(cfg, tmp_path / "a")
    rep2 = run_experiment(cfg, tmp_path / "b")
    bytes1 = (tmp_path / "a" / "report.json").read_bytes()
    bytes2 = (tmp_path / "b" / "report.json").read_bytes()
    assert bytes1 == bytes2
    assert rep1 == rep2
    assert rep1["config_hash"] == cfg.config_hash()
    assert len(rep1["loss_curve"]) == cfg.steps
    assert all(np.isfinite(v) for v in rep1["loss_curve"])
    assert 0.0 <= rep1["metrics"]["em"] <= 1.0
    assert rep1["metrics"]["n"] == cfg.n_test
    # the exact rational survives the JSON roundtrip as a string
    assert Fraction(rep1["cost_model"]["ratio"]) > 0
    assert "wall" not in json.dumps(rep1)


def test_run_experiment_artifacts(tmp_path):
    cfg = _tiny_neighbor_config(seed=1)
    run_experiment(cfg, tmp_path)
    lines = (tmp_path / "predictions.jsonl").read_text().strip().split("\n")
    assert len(lines) == cfg.n_test
    first = json.loads(lines[0])
    assert {"hypothesis", "reference", "em", "f1", "rouge_l"} <= set(first)
    assert (tmp_path / "model.tsyn").exists()
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert {"prepare", "train", "eval"} <= set(timing["phases_s"])


def test_run_experiment_preserves_partial_loss_curve(tmp_path, monkeypatch):
    import transync.harness as harness

    def boom(*args, **kwargs):
        raise RuntimeError("induced failure")

    monkeypatch.setattr(harness, "generate", boom)
    cfg = _tiny_neighbor_config(seed=2)
    with pytest.raises(RuntimeError, match="induced failure"):
        run_experiment(cfg, tmp_path)
    partial = json.loads((tmp_path / "report.partial.json").read_text())
    assert len(partial["loss_curve"]) == cfg.steps
    assert "induced failure" in partial["error"]
    assert not (tmp_path / "report.json").exists()


def test_schema_from_name():
    assert _schema_from_name("all-to-all").variant == "all_to_all"
    assert _schema_from_name("title").variant == "title_anchors"
    assert _schema_from_name("neighbor", window=3).window == 3
    with pytest.raises(ValueError):
        _schema_from_name("ring")
