import json

import numpy as np
import pytest

from streamlid.adaptation import AdaptationParams, DomainRegistry, adapt_posterior
from streamlid.classifier import LanguageTable, classify_batch
from streamlid.confidence import ConfidenceModel, FeatureConfig, confidence_scores, feature_stream
from streamlid.encoder import ConformerConfig, encode_sequence
from streamlid.errors import ConfigurationError
from streamlid.evaluation import emit_switch_events
from streamlid.frontend import AudioSegment
from streamlid.pipeline import LangIdModel, init_random_model, run_pipeline, run_streams
from streamlid.pooling import PoolingMode, pool_stream_matrix

LANGS = LanguageTable(["en", "de", "fr", "es", "it", "pt"])
SMALL = ConformerConfig(num_layers=4, model_dim=16, num_heads=2, conv_span=4, attention_left_context=8)


@pytest.fixture(scope="module")
def model():
    return init_random_model(LANGS, SMALL, seed=3)


def tone(seconds=1.0, freq=300.0, seed=0):
    t = np.arange(int(16000 * seconds)) / 16000
    noise = np.random.default_rng(seed).normal(0, 0.05, len(t))
    return AudioSegment(0.3 * np.sin(2 * np.pi * freq * t) + noise, 16000)


def test_silence_is_near_uniform_without_events(model):
    out = run_pipeline(AudioSegment(np.zeros(16000), 16000), model, tau=0.99)
    lines = [json.loads(line) for line in out.lines]
    assert len(lines) == 16
    for rec in lines:
        probs = [p for _, p in rec["posterior_top5"]]
        assert max(probs) - 1 / 6 < 0.02
        assert rec["switch_events"] == []


def test_two_streams_same_file_identical(model):
    audio = tone()
    out = run_pipeline([audio, audio], model)
    by_stream = {0: [], 1: []}
    for line in out.lines:
        rec = json.loads(line)
        by_stream[rec.pop("stream")].append(rec)
    assert by_stream[0] == by_stream[1] and len(by_stream[0]) == 16


def test_streams_are_isolated(model):
    a, b = tone(seed=1), tone(1.5, 700.0, seed=2)
    joint = [json.loads(x) for x in run_pipeline([a, b], model).lines]
    alone = [json.loads(x) for x in run_pipeline(a, model).lines]
    assert [r for r in joint if r["stream"] == 0] == alone


def test_matches_manual_composition(model):
    audio = tone(seed=4)
    adaptation = AdaptationParams(np.linspace(0.5, 1.5, 6), np.linspace(-0.2, 0.3, 6), "d")
    registry = DomainRegistry(LANGS)
    registry.register(adaptation)
    conf = ConfidenceModel(np.array([2.0, 1.0, 0.5, 1.0]), -1.0, 0.3)
    out = [json.loads(x) for x in run_pipeline(audio, model, "d", registry, conf).lines]

    feats = model.features(audio)
    emb = encode_sequence(feats, model.encoder, model.conformer)
    probs = classify_batch(pool_stream_matrix(emb, model.attention, model.pooling_mode), model.head)
    adapted = adapt_posterior(probs, adaptation)
    scores = confidence_scores(feature_stream(adapted), conf)
    events = emit_switch_events(adapted, scores, conf.threshold)

    assert len(out) == len(probs)
    for t, rec in enumerate(out):
        assert rec["step"] == t and rec["time_ms"] == (t + 1) * 60
        top = np.argsort(-probs[t], kind="stable")[:5]
        assert [c for c, _ in rec["posterior_top5"]] == [LANGS.codes[i] for i in top]
        np.testing.assert_allclose([p for _, p in rec["posterior_top5"]], probs[t][top], rtol=1e-4)
        np.testing.assert_allclose([p for _, p in rec["adapted_top5"]], np.sort(adapted[t])[::-1][:5],
                                   rtol=1e-4)
        assert rec["confidence"] == pytest.approx(scores[t], rel=1e-4)
    got = [(e["step"], e["to"]) for rec in out for e in rec["switch_events"]]
    assert got == [(e.step, LANGS.codes[e.new_language]) for e in events]


def test_confidence_from_unadapted_posteriors(model):
    audio = tone(seed=6)
    adaptation = AdaptationParams(np.linspace(0.5, 1.5, 6), np.linspace(-0.5, 0.5, 6), "d")
    registry = DomainRegistry(LANGS)
    registry.register(adaptation)
    conf = ConfidenceModel(np.array([2.0, 1.0, 0.5, 1.0]), -1.0, 0.3)
    raw = run_pipeline(audio, model, "d", registry, conf, feature_config=FeatureConfig(use_adapted=False))
    adapted = run_pipeline(audio, model, "d", registry, conf)
    probs = classify_batch(pool_stream_matrix(encode_sequence(model.features(audio), model.encoder,
                                                              model.conformer), model.attention,
                                              model.pooling_mode), model.head)
    expected = confidence_scores(feature_stream(probs), conf)
    got = [json.loads(x)["confidence"] for x in raw.lines]
    np.testing.assert_allclose(got, expected, rtol=1e-4)
    assert got != [json.loads(x)["confidence"] for x in adapted.lines]


def test_deterministic_text(model):
    audio = tone(seed=5)
    assert run_pipeline(audio, model).text() == run_pipeline(audio, model).text()


def test_short_and_empty_streams(model):
    out = run_streams([np.zeros((1, 512)), np.zeros((5, 512))], model)
    assert [json.loads(x)["stream"] for x in out.lines] == [1, 1]
    assert len(out.latencies_s) == 2


def test_model_save_load_and_validation(tmp_path, model):
    path = tmp_path / "m.bin"
    model.save(path)
    back = LangIdModel.load(path)
    assert back.languages == model.languages and back.pooling_mode == model.pooling_mode
    np.testing.assert_array_equal(back.head.out_weight, model.head.out_weight)
    with pytest.raises(ConfigurationError):
        LangIdModel(LanguageTable(["a", "b"]), model.conformer, model.encoder, model.attention, model.head)
    with pytest.raises(ConfigurationError):
        LangIdModel(model.languages, model.conformer, model.encoder, model.attention, model.head,
                    PoolingMode.WEIGHTED_MEAN_STD)


def test_std_pooling_model_runs():
    m = init_random_model(LANGS, SMALL, seed=1, pooling_mode=PoolingMode.MEAN_STD)
    # 0.5 s: 47 LFBE frames -> 15 stacked frames -> 7 steps
    assert len(run_pipeline(tone(0.5), m).lines) == 7
