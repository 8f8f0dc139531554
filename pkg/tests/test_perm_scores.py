import math

import numpy as np
import pytest
import torch

from permlp.perm_scores import PermScorer, ScoreBundle, temperature
from permlp.tensor_engine import ShapeError
from conftest import central_difference, rel_err


def small_scorer(seed=0, **kw):
    torch.manual_seed(seed)
    args = dict(n_in=6, n_out=5, d_model=8, d_tok=4, d_occ=2, k_max=3, radius=2)
    args.update(kw)
    return PermScorer(**args)


def test_temperature():
    assert temperature(2) == pytest.approx(1.4427, abs=1e-4)
    assert temperature(1) == temperature(2)
    assert temperature(10) == pytest.approx(1 / math.log(10))


def test_bundle_validation():
    with pytest.raises(ShapeError):
        ScoreBundle.from_numpy(np.zeros(3), np.zeros(2), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ScoreBundle.from_numpy(np.zeros(2), np.zeros(2), np.zeros((2, 2)), tau=0.0)


def test_score_matrix_layout():
    sb = ScoreBundle.from_numpy([1, 2, 3], [4, 5, 6], np.zeros((3, 3)))
    assert sb.score_matrix().tolist() == [[1, 0, 4], [2, 0, 5], [3, 0, 6]]
    one = ScoreBundle.from_numpy([1.5], [2.0], [[0.0]])
    assert one.score_matrix().tolist() == [[3.5]]


def test_bundle_file_roundtrip(tmp_path, rng):
    sb = ScoreBundle.random(4, rng, tau=0.3)
    sb.save(tmp_path / "s.txt")
    back = ScoreBundle.load(tmp_path / "s.txt")
    for a, b in zip(sb.numpy(), back.numpy()):
        assert np.array_equal(a, b)


def test_bundle_file_malformed(tmp_path):
    (tmp_path / "s.txt").write_text("2\n0 0\n0 0\n0 0\n")
    with pytest.raises(ValueError):
        ScoreBundle.load(tmp_path / "s.txt")


def test_hidden_shape_and_source_slice():
    m = small_scorer()
    h = torch.randn(3, 8)
    hp = m.build_hidden(h, torch.tensor([1, 2, 3]), torch.tensor([0, 1, 2]), torch.tensor([1, 1, 1]))
    assert hp.shape == (3, 8 + 4 + 2)
    assert torch.equal(hp[:, :8], h)


def test_duplicates_differ_only_in_occurrence_slice():
    m = small_scorer()
    h = torch.randn(2, 8)
    hp = m.build_hidden(h, torch.tensor([3, 3]), torch.tensor([1, 1]), torch.tensor([1, 2]))
    diff = (hp[0] != hp[1]).nonzero().flatten()
    assert diff.numel() > 0 and int(diff.min()) >= 12


def test_hidden_range_checks():
    m = small_scorer()
    h = torch.randn(2, 8)
    with pytest.raises(ValueError):
        m.build_hidden(h, torch.tensor([1]), torch.tensor([2]), torch.tensor([1]))
    with pytest.raises(ValueError):
        m.build_hidden(h, torch.tensor([1]), torch.tensor([0]), torch.tensor([0]))
    with pytest.raises(ValueError):
        m.build_hidden(h, torch.tensor([1]), torch.tensor([0]), torch.tensor([4]))


def test_zero_parameters_give_zero_scores():
    m = small_scorer()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    sb = m(torch.tensor([1, 2, 3]), torch.tensor([1, 2, 1, 4]), torch.tensor([0, 1, 1, 2]),
           torch.tensor([1, 1, 1, 1]))
    for t in (sb.start, sb.end, sb.jump):
        assert torch.equal(t, torch.zeros_like(t))
    assert float(sb.tau) == pytest.approx(1 / math.log(4))


def test_distance_bias_is_directional():
    m = small_scorer()
    with torch.no_grad():
        m.dist_bias.copy_(torch.randn(m.dist_bias.shape))
        m.bilinear.zero_()
    with torch.no_grad():
        sb = m.score(torch.randn(5, 14))
    # jump[k, i] with i - k = +1 versus i - k = -1
    assert float(sb.jump[0, 1]) != float(sb.jump[1, 0])
    assert float(sb.jump[0, 1]) == pytest.approx(float(m.dist_bias[m.radius + 1]))
    # distances beyond the radius share the clipped bucket
    assert float(sb.jump[0, 4]) == float(sb.jump[0, 3])


def test_scores_deterministic():
    m = small_scorer()
    args = (torch.tensor([1, 2, 3]), torch.tensor([1, 2]), torch.tensor([0, 2]), torch.tensor([1, 1]))
    a, b = m(*args), m(*args)
    assert torch.equal(a.jump, b.jump) and torch.equal(a.start, b.start)


def test_batched_scores_match_single():
    m = small_scorer()
    x = torch.tensor([[1, 2, 3], [3, 4, 5]])
    zp, al, oc = torch.tensor([[1, 2], [4, 4]]), torch.tensor([[0, 2], [1, 1]]), torch.tensor([[1, 1], [1, 2]])
    sb = m(x, zp, al, oc)
    for b in range(2):
        one = m(x[b], zp[b], al[b], oc[b])
        assert torch.allclose(sb.jump[b], one.jump, atol=1e-6)


@pytest.mark.parametrize("head", ["start", "end", "jump"])
def test_head_gradients(head, rng):
    m = small_scorer().double()
    hp = torch.randn(4, 14, dtype=torch.float64)
    params = [p for p in m.parameters() if p.requires_grad]
    flat = torch.cat([p.detach().flatten() for p in params])
    weights = torch.as_tensor(rng.standard_normal(16), dtype=torch.float64)

    def f(v):
        off = 0
        for p in params:
            p.data.copy_(v[off: off + p.numel()].view_as(p))
            off += p.numel()
        out = getattr(m.score(hp), head).flatten()
        return (out * weights[: out.numel()]).sum()

    loss = f(flat)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    g = torch.cat([(gr if gr is not None else torch.zeros_like(p)).flatten()
                   for gr, p in zip(grads, params)])
    with torch.no_grad():
        for _ in range(5):
            d = torch.as_tensor(rng.standard_normal(flat.numel()), dtype=torch.float64)
            fd = central_difference(f, flat, d, h=1e-6)
            assert rel_err(float((g * d).sum()), fd) < 1e-3
