import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scribble2label.core import (
    BG, FG, IGNORE, UNLABELED, EnsembleState, HyperParams, ImageSample, PseudoLabel, ScribbleMap,
    decode_mask_png, decode_scribble_png, encode_mask_png, encode_scribble_png, filter_pseudo_label,
)
from scribble2label.errors import ConfigError, FormatError, InvalidInputError, PreconditionError


def state(values):
    return EnsembleState(np.asarray(values, dtype=np.float64).reshape(1, -1), 1)


def scribbles(codes):
    return ScribbleMap(np.asarray(codes, dtype=np.uint8).reshape(1, -1))


def test_filter_threshold_cases():
    pl = filter_pseudo_label(state([0.9, 0.1, 0.5]), scribbles([0, 0, 0]), 0.8)
    assert pl.codes.ravel().tolist() == [FG, BG, IGNORE]
    assert pl.n_generated() == 2


def test_filter_excludes_scribbled_pixels():
    pl = filter_pseudo_label(state([0.9]), scribbles([FG]), 0.8)
    assert pl.codes.ravel().tolist() == [IGNORE]


def test_filter_boundary_is_strict():
    assert filter_pseudo_label(state([0.8]), scribbles([0]), 0.8).codes.ravel().tolist() == [IGNORE]
    # 1 - 0.2 is exactly 0.8 in binary floating point as well
    assert 1.0 - 0.2 == 0.8
    assert filter_pseudo_label(state([0.2]), scribbles([0]), 0.8).codes.ravel().tolist() == [IGNORE]


def test_filter_errors():
    with pytest.raises(PreconditionError):
        filter_pseudo_label(EnsembleState(), scribbles([0]), 0.8)
    with pytest.raises(InvalidInputError):
        filter_pseudo_label(state([0.9, 0.1]), scribbles([0]), 0.8)
    with pytest.raises(InvalidInputError):
        filter_pseudo_label(state([0.9]), scribbles([0]), 0.4)


@settings(max_examples=200, deadline=None)
@given(
    y=arrays(np.float64, (5, 6), elements=st.floats(0, 1)),
    codes=arrays(np.uint8, (5, 6), elements=st.integers(0, 2)),
    tau=st.floats(0.5, 1.0, exclude_min=True, exclude_max=True),
)
def test_filter_properties(y, codes, tau):
    pl = filter_pseudo_label(EnsembleState(y, 1), ScribbleMap(codes), tau)
    assert not np.any(pl.generated & (codes != UNLABELED))
    assert np.all((pl.codes == FG) <= (y > tau))
    assert np.all((pl.codes == BG) <= ((1 - y) > tau))


def test_scribble_png_alphabet_and_roundtrip():
    codes = np.array([[UNLABELED, BG, FG], [FG, FG, UNLABELED]], dtype=np.uint8)
    data = encode_scribble_png(ScribbleMap(codes))
    from PIL import Image
    import io
    raw = np.array(Image.open(io.BytesIO(data)))
    assert raw.tolist() == [[0, 128, 255], [255, 255, 0]]
    assert decode_scribble_png(data) == ScribbleMap(codes)


def test_all_zero_png_decodes_unlabeled():
    data = encode_mask_png(np.zeros((4, 4)))
    s = decode_scribble_png(data)
    assert s.n_scribbled() == 0


@settings(max_examples=50, deadline=None)
@given(codes=arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 2)))
def test_scribble_png_roundtrip_random(codes):
    s = ScribbleMap(codes)
    assert decode_scribble_png(encode_scribble_png(s)) == s


def test_scribble_png_rejects_foreign_value():
    from PIL import Image
    import io
    buf = io.BytesIO()
    Image.fromarray(np.array([[0, 7]], dtype=np.uint8), mode="L").save(buf, format="PNG")
    with pytest.raises(FormatError, match="7"):
        decode_scribble_png(buf.getvalue())


def test_mask_png_roundtrip():
    m = np.array([[0, 1], [1, 0]])
    assert np.array_equal(decode_mask_png(encode_mask_png(m)), m)


def test_types_are_immutable():
    s = ScribbleMap(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        s.codes[0, 0] = FG
    pl = PseudoLabel.ignore_all((2, 2))
    with pytest.raises(ValueError):
        pl.codes[0, 0] = FG


def test_ensemble_state_invariants():
    assert not EnsembleState().initialized
    with pytest.raises(InvalidInputError):
        EnsembleState(np.array([[1.5]]), 1)
    with pytest.raises(InvalidInputError):
        EnsembleState(None, 2)


def test_image_sample_validation():
    img = np.zeros((4, 4))
    ImageSample("a", img, ScribbleMap.empty((4, 4)), np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        ImageSample("a", img + 2, ScribbleMap.empty((4, 4)))
    with pytest.raises(InvalidInputError):
        ImageSample("a", img, ScribbleMap.empty((4, 5)))
    with pytest.raises(InvalidInputError):
        ImageSample("a", img, ScribbleMap.empty((4, 4)), np.full((4, 4), 2))


@pytest.mark.parametrize("kwargs", [
    {"tau": 0.5}, {"tau": 1.0}, {"alpha": 0.0}, {"gamma": 0}, {"lambda_up": -1},
    {"warmup_epochs": 10, "total_epochs": 10}, {"gamma": 6, "warmup_epochs": 5, "total_epochs": 20},
])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ConfigError):
        HyperParams(**kwargs)


def test_hyperparams_published_defaults():
    hp = HyperParams()
    assert (hp.tau, hp.alpha, hp.gamma, hp.lambda_up, hp.warmup_epochs) == (0.8, 0.2, 5, 0.5, 100)
