import numpy as np
import pytest
import torch

from fufi.geo import GeoEncoderConfig, pretrain_geo_encoder


def test_pretraining_learns_and_freezes():
    rng = np.random.default_rng(0)
    basis = rng.standard_normal((5, 2))
    latent = rng.standard_normal((2, 8, 8))
    raw = np.einsum("ck,khw->chw", basis, latent) + 0.01 * rng.standard_normal((5, 8, 8))
    cfg = GeoEncoderConfig(5, code_channels=3, hidden=[8], corruption=0.1, layer_epochs=150,
                           finetune_epochs=300, activation="linear")
    enc, codes = pretrain_geo_encoder([raw, raw[:, ::2, ::2]], cfg)
    assert codes[0].shape == (3, 8, 8) and codes[1].shape == (3, 4, 4)
    assert enc.reconstruction_error(raw) < 0.2
    assert not any(p.requires_grad for p in enc.parameters())


def test_pretraining_is_seeded():
    raw = np.random.default_rng(1).random((4, 4, 4))
    cfg = GeoEncoderConfig(4, code_channels=2, layer_epochs=5, finetune_epochs=5)
    _, a = pretrain_geo_encoder([raw], cfg)
    _, b = pretrain_geo_encoder([raw], cfg)
    assert torch.equal(a[0], b[0])


def test_pretraining_input_checks():
    with pytest.raises(ValueError):
        pretrain_geo_encoder([], GeoEncoderConfig(3))
    with pytest.raises(ValueError):
        pretrain_geo_encoder([np.ones((2, 4, 4))], GeoEncoderConfig(3))
    with pytest.raises(ValueError):
        GeoEncoderConfig(3, activation="tanh")
