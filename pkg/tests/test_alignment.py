import math

import pytest
import torch

from eegtse.alignment import AlignedPairBatch, AlignProject, expand_time, infonce_loss
from eegtse.config import mini_config
from eegtse.extractor import TargetSpeakerExtractor
from gradcheck import fd_gradcheck


def direct_infonce(q, x, tau):
    # row-by-row evaluation of -log(exp(cos_ii/tau) / sum_k exp(cos_ik/tau))
    total = 0.0
    for i in range(q.shape[0]):
        cos = [float(q[i] @ x[k] / (q[i].norm() * x[k].norm())) for k in range(x.shape[0])]
        total += -cos[i] / tau + math.log(sum(math.exp(c / tau) for c in cos))
    return total / q.shape[0]


def test_full_scale_dimension():
    proj = AlignProject(128, 64)
    with torch.no_grad():
        s, e, pairs = proj(torch.randn(1, 128, 1632, 4), torch.randn(1, 64, 32))
    assert pairs.queries.shape == (1, 104_448) and pairs.keys.shape == (1, 104_448)
    assert s.shape == e.shape == (1, 64, 1632)


def test_expand_time_constants_and_identity():
    const = torch.full((2, 3, 32), 1.7, dtype=torch.float64)
    assert torch.allclose(expand_time(const, 1632), torch.full((2, 3, 1632), 1.7, dtype=torch.float64))
    e = torch.randn(2, 3, 40)
    assert expand_time(e, 40) is e
    out = expand_time(e, 99)
    assert torch.equal(out[..., 0], e[..., 0]) and torch.allclose(out[..., -1], e[..., -1])
    with pytest.raises(ValueError):
        expand_time(torch.randn(1, 1, 10), 5)


def test_sum_fusion_variant():
    proj = AlignProject(4, 2, scale_fusion="sum")
    x = torch.randn(1, 4, 6, 4)
    s, _, _ = proj(x, torch.randn(1, 2, 3))
    assert torch.allclose(s, proj.proj(x.sum(-1)))


def test_all_equal_rows_give_log_b():
    row = torch.randn(1, 20, dtype=torch.float64)
    batch = AlignedPairBatch(row.repeat(8, 1), row.repeat(8, 1))
    assert abs(infonce_loss(batch).item() - math.log(8)) < 1e-6


def test_two_orthogonal_pairs():
    eye = torch.eye(2, dtype=torch.float64)
    loss = infonce_loss(AlignedPairBatch(eye, eye), tau=0.1).item()
    assert abs(loss - math.log1p(math.exp(-10))) < 1e-12
    assert abs(loss - 4.54e-5) < 1e-7


def test_matches_direct_evaluation():
    q, x = torch.randn(5, 7, dtype=torch.float64), torch.randn(5, 7, dtype=torch.float64)
    assert abs(infonce_loss(AlignedPairBatch(q, x), 0.3).item() - direct_infonce(q, x, 0.3)) < 1e-12


def test_positive_and_permutation_invariance():
    q, x = torch.randn(6, 9, dtype=torch.float64), torch.randn(6, 9, dtype=torch.float64)
    base = infonce_loss(AlignedPairBatch(q, x)).item()
    assert base > 0
    perm = torch.randperm(6)
    assert abs(infonce_loss(AlignedPairBatch(q[perm], x[perm])).item() - base) < 1e-12
    q2, x2 = q.clone(), x.clone()
    q2[2] *= 7.5
    x2[4] *= 0.01
    assert abs(infonce_loss(AlignedPairBatch(q2, x2)).item() - base) < 1e-12


def test_monotone_in_positive_similarity():
    # keys are the first four unit vectors of R^5; q_0 = c e_0 + sqrt(1 - c^2) e_4 changes
    # only cos(q_0, x_0) = c while every other similarity stays fixed
    x = torch.eye(5, dtype=torch.float64)[:4]
    losses = []
    for c in (0.1, 0.4, 0.7, 0.95):
        q = x.clone()
        q[0] = c * torch.eye(5, dtype=torch.float64)[0] + math.sqrt(1 - c * c) * torch.eye(5, dtype=torch.float64)[4]
        losses.append(infonce_loss(AlignedPairBatch(q, x)).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_errors():
    with pytest.raises(ValueError):
        infonce_loss(AlignedPairBatch(torch.ones(1, 3), torch.ones(1, 3)))
    with pytest.raises(ValueError):
        infonce_loss(AlignedPairBatch(torch.ones(2, 3), torch.ones(2, 3)), tau=0)
    with pytest.raises(ValueError):
        AlignedPairBatch(torch.ones(2, 3), torch.ones(2, 4))


def test_infonce_gradient():
    q = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
    x = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
    errs = fd_gradcheck(lambda: infonce_loss(AlignedPairBatch(q, x), 0.1), {"q": q, "x": x})
    assert max(errs.values()) < 1e-4, errs


def test_gradient_reaches_both_encoders():
    model = TargetSpeakerExtractor(mini_config()).double()
    mix = torch.randn(3, 1, 400, dtype=torch.float64)
    eeg = torch.randn(3, 4, 32, dtype=torch.float64)
    _, pairs = model(mix, eeg)
    infonce_loss(pairs).backward()
    speech = sum(p.grad.abs().sum() for p in model.speech_encoder.parameters() if p.grad is not None)
    brain = sum(p.grad.abs().sum() for p in model.eeg_encoder.parameters() if p.grad is not None)
    assert speech > 0 and brain > 0
