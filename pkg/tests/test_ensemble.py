import numpy as np
import pytest
import torch

from scribble2label.core import EnsembleState, ImageSample, ScribbleMap
from scribble2label.ensemble import (
    EnsembleBank, ema_update, expected_count, run_ensemble_pass, should_ensemble,
)
from scribble2label.errors import EnsembleConsistencyError, InvalidInputError

from oracles import ema_closed_form


def const(v, shape=(1, 1)):
    return np.full(shape, v, dtype=np.float64)


def test_initialization_takes_first_prediction():
    s = ema_update(EnsembleState(), const(0.7), 0.2)
    assert s.n == 1 and s.y[0, 0] == 0.7


def test_ema_step():
    s = ema_update(EnsembleState(const(0.5), 1), const(1.0), 0.2)
    assert s.y[0, 0] == pytest.approx(0.6, abs=1e-15)
    assert s.n == 2


def test_alpha_one_forgets_history():
    s = ema_update(EnsembleState(const(0.1), 4), const(0.9), 1.0)
    assert s.y[0, 0] == 0.9


def test_ema_errors():
    with pytest.raises(InvalidInputError):
        ema_update(EnsembleState(const(0.5, (2, 2)), 1), const(0.5, (2, 3)), 0.2)
    with pytest.raises(InvalidInputError):
        ema_update(EnsembleState(), const(0.5), 0.0)


@pytest.mark.parametrize("epoch,gamma,expected", [(5, 5, True), (1, 5, False), (12, 5, False), (10, 5, True)])
def test_should_ensemble(epoch, gamma, expected):
    assert should_ensemble(epoch, gamma) is expected


def test_expected_count():
    assert expected_count(12, 5) == 3
    assert expected_count(0, 5) == 0
    assert expected_count(1, 5) == 1


def test_convex_combination_bounds():
    rng = np.random.default_rng(0)
    preds = [rng.random((4, 4)) for _ in range(8)]
    s = EnsembleState()
    for p in preds:
        s = ema_update(s, p, 0.3)
    stack = np.stack(preds)
    assert np.all(s.y >= stack.min(0) - 1e-15) and np.all(s.y <= stack.max(0) + 1e-15)


class ConstantModel(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value
        self.w = torch.nn.Parameter(torch.zeros(1))

    def predict(self, image):
        return np.full(np.asarray(image).shape[:2], self.value, dtype=np.float64)


def samples(k=3, shape=(4, 4)):
    return [ImageSample(f"s{i}", np.zeros(shape), ScribbleMap.empty(shape)) for i in range(k)]


def test_constant_predictor_converges_monotonically():
    data = samples()
    bank = EnsembleBank([s.id for s in data], 0.2, 5)
    run_ensemble_pass(ConstantModel(0.9), data, bank)
    model = ConstantModel(0.5)
    prev = 0.9
    for _ in range(10):
        run_ensemble_pass(model, data, bank)
        cur = bank["s0"].y[0, 0]
        assert 0.5 <= cur < prev
        prev = cur
    assert bank.n == 11


def test_two_passes_closed_form():
    data = samples(2)
    bank = EnsembleBank([s.id for s in data], 0.2, 5)
    run_ensemble_pass(ConstantModel(0.3), data, bank)
    run_ensemble_pass(ConstantModel(0.8), data, bank)
    assert bank["s1"].y[0, 0] == pytest.approx(0.2 * 0.8 + 0.8 * 0.3, abs=1e-15)


def test_bank_closed_form_random():
    rng = np.random.default_rng(1)
    preds = [rng.random((3, 5)) for _ in range(7)]
    bank = EnsembleBank(["a"], 0.1, 5)
    for p in preds:
        bank.update("a", p)
    np.testing.assert_allclose(bank["a"].y, ema_closed_form(preds, 0.1), atol=1e-12, rtol=0)


def test_pass_rejects_unknown_sample():
    data = samples(2)
    bank = EnsembleBank(["s0"], 0.2, 5)
    with pytest.raises(EnsembleConsistencyError):
        run_ensemble_pass(ConstantModel(0.5), data, bank)
    with pytest.raises(EnsembleConsistencyError):
        bank["nope"]


def test_bank_state_dict_roundtrip():
    bank = EnsembleBank(["a", "b"], 0.2, 5)
    bank.update("a", np.full((2, 2), 0.25))
    bank.update("b", np.full((2, 2), 0.75))
    back = EnsembleBank.from_state_dict(bank.state_dict())
    assert back.n == 1 and back.alpha == 0.2
    np.testing.assert_array_equal(back["b"].y, bank["b"].y)
