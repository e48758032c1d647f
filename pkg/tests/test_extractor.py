import numpy as np
import pytest
import torch

from eegtse.config import desk_config, mini_config
from eegtse.extractor import (CMCA, CMCALayer, Decoder, DPRNNMask, TargetSpeakerExtractor,
                              apply_mask, chunk_count, extract_long, overlap_add, segment)
from gradcheck import directional_check, fd_gradcheck, module_tensors


def zero_attention_outputs(module):
    with torch.no_grad():
        for name, p in module.named_parameters():
            if "attn.out" in name:
                p.zero_()


def test_cmca_full_shape():
    cmca = CMCA(64)
    with torch.no_grad():
        y = cmca(torch.randn(2, 64, 1632), torch.randn(2, 64, 1632))
    assert y.shape == (2, 64, 1632)


def test_cmca_layer_zero_attention_is_norm_only():
    layer = CMCALayer(8, heads=2, groups=2)
    zero_attention_outputs(layer)
    e, s = torch.randn(2, 8, 12), torch.randn(2, 8, 12)
    e_new, s_new = layer(e, s)
    assert torch.equal(e_new, layer.eeg_norm(e)) and torch.equal(s_new, layer.speech_norm(s))


def test_cmca_residual_degeneracy():
    cmca = CMCA(8, layers=3, heads=2, groups=2).double()
    zero_attention_outputs(cmca)
    e, s = torch.randn(2, 8, 12, dtype=torch.float64), torch.randn(2, 8, 12, dtype=torch.float64)
    gn = lambda x: torch.nn.functional.group_norm(x, 2)  # noqa: E731
    e3, s3 = gn(gn(gn(e))), gn(gn(gn(s)))
    assert torch.allclose(cmca(e, s), cmca.fuse(torch.cat([e3, s3, e, s], 1)), atol=1e-12)


def test_cmca_shape_mismatch():
    with pytest.raises(ValueError):
        CMCA(8, heads=2, groups=2)(torch.randn(1, 8, 5), torch.randn(1, 8, 6))


def test_cmca_gradient():
    cmca = CMCA(8, heads=2, groups=2).double()
    e = torch.randn(1, 8, 12, dtype=torch.float64, requires_grad=True)
    s = torch.randn(1, 8, 12, dtype=torch.float64, requires_grad=True)
    errs = fd_gradcheck(lambda: torch.tanh(cmca(e, s)).sum(), module_tensors(cmca, e=e, s=s))
    assert max(errs.values()) < 1e-4, errs


def test_chunk_arithmetic():
    assert chunk_count(1632, 250) == (13, 1750)
    assert chunk_count(100, 250) == (1, 250)
    assert segment(torch.zeros(1, 2, 1632), 250).shape == (1, 2, 250, 13)
    with pytest.raises(ValueError):
        segment(torch.zeros(1, 1, 10), 5)


@pytest.mark.parametrize("length,chunk", [(1632, 250), (99, 20), (7, 20), (40, 20), (41, 4)])
def test_segment_overlap_add_round_trip(length, chunk):
    y = torch.randn(2, 3, length, dtype=torch.float64)
    assert torch.equal(overlap_add(segment(y, chunk), length), y)


def test_dprnn_identity_body():
    mask = DPRNNMask(3, 5, chunk=10, layers=0)
    y = torch.randn(2, 3, 47)
    assert torch.equal(mask.body(y), y)


def test_mask_range():
    mask = DPRNNMask(4, 8, chunk=10, layers=2)
    with torch.no_grad():
        m = mask(torch.randn(2, 4, 33) * 1e3)
    assert m.shape == (2, 8, 33)
    assert (m >= 0).all() and (m <= 1).all()


def test_dprnn_gradient():
    mask = DPRNNMask(4, 3, chunk=4, layers=2).double()
    y = torch.randn(1, 4, 10, dtype=torch.float64, requires_grad=True)
    errs = fd_gradcheck(lambda: (mask(y) ** 2).sum(), module_tensors(mask, y=y), max_coords=12)
    assert max(errs.values()) < 1e-4, errs


def test_apply_mask_cases():
    x = torch.randn(2, 3, 5, dtype=torch.float64)
    assert torch.equal(apply_mask(x, torch.ones_like(x)), x)
    assert torch.equal(apply_mask(x, torch.zeros_like(x)), torch.zeros_like(x))
    m = torch.rand(2, 3, 5, dtype=torch.float64)
    out = apply_mask(x, m)
    for b in range(2):
        for c in range(3):
            for t in range(5):
                assert out[b, c, t].item() == x[b, c, t].item() * m[b, c, t].item()
    with pytest.raises(ValueError):
        apply_mask(x, m[:, :2])


def test_decoder_length():
    dec = Decoder(4, 36)
    raw = dec.deconv(torch.zeros(1, 4, 1632)).shape[-1]
    assert raw == 29_394
    assert dec(torch.zeros(1, 4, 1632), 29_400).shape == (1, 1, 29_400)
    assert dec(torch.zeros(1, 4, 1632), 29_000).shape == (1, 1, 29_000)


def test_decoder_zero_input():
    dec = Decoder(4, 8)
    with torch.no_grad():
        dec.deconv.bias.zero_()
        out = dec(torch.zeros(2, 4, 20), 84)
    assert torch.equal(out, torch.zeros(2, 1, 84))


def test_decoder_gradient():
    dec = Decoder(3, 8).double()
    s = torch.randn(1, 3, 6, dtype=torch.float64, requires_grad=True)
    errs = fd_gradcheck(lambda: (dec(s, 30) ** 2).sum(), module_tensors(dec, s=s))
    assert max(errs.values()) < 1e-4, errs


def test_forward_shapes_desk():
    cfg = desk_config()
    model = TargetSpeakerExtractor(cfg)
    with torch.no_grad():
        est, pairs, inter = model(torch.randn(2, 1, 29_400) * 0.1, torch.randn(2, 16, 256),
                                  return_intermediates=True)
    assert est.shape == (2, 1, 29_400)
    assert inter["M"].shape == (2, 32, 1632) and inter["Y"].shape == (2, 16, 1632)
    assert pairs.queries.shape == (2, 16 * 1632)


def test_forward_deterministic_float64():
    model = TargetSpeakerExtractor(mini_config()).double().eval()
    mix = torch.randn(2, 1, 400, dtype=torch.float64)
    eeg = torch.randn(2, 4, 32, dtype=torch.float64)
    with torch.no_grad():
        a, _ = model(mix, eeg)
        b, _ = model(mix, eeg)
    assert torch.equal(a, b)


def test_end_to_end_gradient():
    model = TargetSpeakerExtractor(mini_config()).double()
    mix = torch.randn(2, 1, 400, dtype=torch.float64) * 0.3
    eeg = torch.randn(2, 4, 32, dtype=torch.float64)
    weights = torch.randn(2, 1, 400, dtype=torch.float64)

    def fn():
        est, pairs = model(mix, eeg)
        return (est * weights).sum() + pairs.queries.sum() * 1e-2

    # whole-model directional derivatives; the per-coordinate sweep lives in the acceptance suite
    assert directional_check(fn, model.parameters(), n_dirs=4) < 1e-3


def test_extract_long_preserves_length():
    cfg = mini_config()
    model = TargetSpeakerExtractor(cfg).eval()
    rng = np.random.default_rng(0)
    mix = rng.standard_normal(1333) * 0.1
    eeg = rng.standard_normal((4, 107))
    assert extract_long(model, mix, eeg).shape == (1333,)
    one_mix, one_eeg = mix[:400], eeg[:, :32]
    with torch.no_grad():
        ref, _ = model(torch.tensor(one_mix, dtype=torch.float32).view(1, 1, -1),
                       torch.tensor(one_eeg, dtype=torch.float32).unsqueeze(0))
    assert np.allclose(extract_long(model, one_mix, one_eeg), ref.view(-1).double().numpy())
