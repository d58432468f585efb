import numpy as np
import pytest

from core.checkpoint import MAGIC, checkpoint_bytes, load_checkpoint, model_from_bytes, \
    save_checkpoint
from core.errors import MalformedHeaderError, TruncatedDataError
from core.fusion import FusionConfig, TagVector
from core.gradcheck import tiny_backbone_config
from core.model import TagASCModel


def _model():
    cfg = FusionConfig(mode="combined_separate", transform_hidden_dim=6, n_heads=2,
                       n_transform_layers_concat=1, n_transform_layers_att=2)
    model = TagASCModel(tiny_backbone_config(), cfg, num_events=5, seed=11,
                        pre_emphasis_beta=0.95)
    model.train_ids = ["a", "b"]
    # move the running statistics away from their initial values
    rng = np.random.default_rng(1)
    for _ in range(3):
        model(rng.standard_normal((96, 1)), TagVector(rng.uniform(0, 1, 5)), "train")
    return model


def test_round_trip_is_bit_exact(tmp_path, rng):
    model = _model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)

    assert loaded.train_ids == ["a", "b"]
    assert loaded.pre_emphasis_beta == 0.95
    assert loaded.fusion_cfg == model.fusion_cfg
    for (name, p), (name2, q) in zip(model.parameters(), loaded.parameters()):
        assert name == name2
        np.testing.assert_array_equal(p.data, q.data)
    for (_, a), (_, b) in zip(model.buffers(), loaded.buffers()):
        np.testing.assert_array_equal(a, b)

    x, tag = rng.standard_normal((96, 1)), TagVector(rng.uniform(0, 1, 5))
    np.testing.assert_array_equal(model(x, tag, "infer").code.data,
                                  loaded(x, tag, "infer").code.data)
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_bad_magic():
    raw = checkpoint_bytes(_model())
    with pytest.raises(MalformedHeaderError) as err:
        model_from_bytes(b"XXXXXXXX" + raw[len(MAGIC):])
    assert err.value.offset == 0


def test_truncated_file():
    raw = checkpoint_bytes(_model())
    with pytest.raises(TruncatedDataError):
        model_from_bytes(raw[:-5])
    with pytest.raises(TruncatedDataError):
        model_from_bytes(raw[:4])
