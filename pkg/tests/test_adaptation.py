import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamlid.adaptation import (AdaptationParams, AdaptObjectiveConfig, DomainRegistry, adapt_posterior,
                                  adaptation_objective, lookup_domain, train_adaptation)
from streamlid.classifier import LanguageTable, Posterior, softmax
from streamlid.errors import ConfigurationError, InvalidInputError

LANGS = LanguageTable(["en", "de", "fr"])


def test_identity_is_softmax_of_probs():
    p = [0.7, 0.2, 0.1]
    out = adapt_posterior(Posterior(np.array(p), step=4), AdaptationParams.identity(3))
    z = sum(math.exp(v) for v in p)
    np.testing.assert_allclose(out.probs, [math.exp(v) / z for v in p], rtol=1e-15)
    assert out.step == 4 and out.top == 0


def test_large_bias_concentrates():
    params = AdaptationParams(np.ones(3), np.array([0.0, 0.0, 1e3]))
    assert adapt_posterior(np.array([0.9, 0.05, 0.05]), params)[2] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(-50, 50))
def test_shift_invariance_in_b(p, c):
    params = AdaptationParams(np.array([1.5, 0.5, 2.0]), np.array([0.1, -0.3, 0.2]))
    shifted = AdaptationParams(params.a, params.b + c)
    np.testing.assert_allclose(adapt_posterior(np.array(p), params), adapt_posterior(np.array(p), shifted),
                               atol=1e-12)


def test_batch_and_length_mismatch():
    params = AdaptationParams.identity(3)
    batch = np.array([[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])
    np.testing.assert_allclose(adapt_posterior(batch, params), softmax(batch, axis=-1))
    with pytest.raises(InvalidInputError):
        adapt_posterior(np.ones(4) / 4, params)
    with pytest.raises(InvalidInputError):
        AdaptationParams(np.ones(3), np.zeros(2))
    assert params.num_parameters == 6


def dev_set(n, seed, always=None):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(3), size=n)
    truth = np.full(n, always) if always is not None else rng.integers(0, 3, size=n)
    return list(zip(probs, truth))


def test_class_zero_always_correct_raises_b0():
    dev = dev_set(300, 1, always=0)
    params = train_adaptation(dev, AdaptObjectiveConfig(w_reg=0.01))
    assert params.b[0] > 0
    probs = np.array([p for p, _ in dev])
    truth = np.array([y for _, y in dev])
    before = np.mean(probs.argmax(1) == truth)
    after = np.mean(adapt_posterior(probs, params).argmax(1) == truth)
    assert after >= before


@pytest.mark.parametrize("norm", ["l2", "l1"])
def test_objective_not_worse_than_identity(norm):
    dev = dev_set(200, 2)
    cfg = AdaptObjectiveConfig(w_reg=0.05, norm=norm)
    params = train_adaptation(dev, cfg)
    probs = np.array([p for p, _ in dev])
    truth = np.array([y for _, y in dev])
    ident = adaptation_objective(probs, truth, np.ones(3), np.zeros(3), 0.05, norm)
    assert adaptation_objective(probs, truth, params.a, params.b, 0.05, norm) <= ident


def test_large_regularizer_gives_identity():
    params = train_adaptation(dev_set(200, 3, always=1), AdaptObjectiveConfig(w_reg=1e3))
    assert np.max(np.abs(params.a - 1)) <= 1e-3 and np.max(np.abs(params.b)) <= 1e-3


def test_empty_dev_and_bad_config():
    with pytest.raises(InvalidInputError):
        train_adaptation([])
    with pytest.raises(InvalidInputError):
        AdaptObjectiveConfig(norm="l3")
    with pytest.raises(InvalidInputError):
        train_adaptation([(np.ones(3) / 3, 5)])


def test_registry_lookup_and_round_trip(tmp_path):
    reg = DomainRegistry(LANGS)
    assert reg.lookup("unknown").domain_id == "default"
    np.testing.assert_array_equal(lookup_domain(reg, None).a, np.ones(3))
    params = AdaptationParams(np.array([1.1, 0.9, 1.0]), np.array([0.2, -0.1, 0.0]), "phone")
    reg.register(params)
    assert reg.lookup("phone") is params and reg.domains() == ["phone"]
    path = tmp_path / "reg.json"
    reg.save(path)
    back = DomainRegistry.load(path, LANGS)
    np.testing.assert_array_equal(back.lookup("phone").a, params.a)
    np.testing.assert_array_equal(back.lookup("phone").b, params.b)
    assert back.to_json() == reg.to_json()


def test_registry_rejects_mismatches():
    reg = DomainRegistry(LANGS)
    with pytest.raises(InvalidInputError):
        reg.register(AdaptationParams.identity(4, "x"))
    with pytest.raises(ConfigurationError):
        DomainRegistry.from_json(reg.to_json(), LanguageTable(["en", "de", "es"]))
    with pytest.raises(ConfigurationError):
        DomainRegistry.from_json('{"format": "other"}')


def test_registry_concurrent_writers():
    reg = DomainRegistry(LANGS)

    def work(i):
        reg.register(AdaptationParams.identity(3, f"d{i}"))
        reg.lookup(f"d{i}")

    threads = [threading.Thread(target=work, args=(i,)) for i in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(reg.domains()) == 20
