import math

import numpy as np
import pytest
import torch

from kinmo.alignment.ops import (cross_attention_fuse, embedding_similarity_loss,
                                 gaussian_kl, infonce, kl_regularizers,
                                 progressive_fuse, reconstruction_loss,
                                 similarity_matrix)
from kinmo.errors import (DimError, EmptyContext, InvalidTemperature,
                          ZeroNormEmbedding)


def _f64(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


# -- cross attention --

def test_single_context_row_dominates():
    z_low = torch.randn(3, 4, dtype=torch.float64)
    row = torch.full((1, 4), 2.0, dtype=torch.float64)
    out = cross_attention_fuse(z_low, row)
    assert torch.allclose(out, row.expand(3, 4))


def test_hand_softmax_case():
    # dot products (0, ln 3); scaled by 1/sqrt(2) the weights follow by hand
    z_low = _f64([[1.0, 0.0]])
    z_coarse = _f64([[0.0, 2.0], [math.log(3.0), -1.0]])
    out = cross_attention_fuse(z_low, z_coarse)
    w1 = math.exp(math.log(3.0) / math.sqrt(2.0))
    w1 = w1 / (1.0 + w1)
    expected = (1 - w1) * np.array([0.0, 2.0]) + w1 * np.array([math.log(3.0), -1.0])
    assert np.allclose(out.numpy()[0], expected, atol=1e-12)


def test_identical_context_rows_pass_through():
    v = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)
    z_coarse = v.expand(4, 3)
    out = cross_attention_fuse(torch.randn(6, 3, dtype=torch.float64), z_coarse)
    assert torch.allclose(out, v.expand(6, 3))


def test_output_in_convex_hull_of_context():
    rng = np.random.default_rng(0)
    z_low = _f64(rng.normal(size=(5, 8)))
    z_coarse = _f64(rng.normal(size=(7, 8)))
    out = cross_attention_fuse(z_low, z_coarse).numpy()
    lo = z_coarse.numpy().min(axis=0) - 1e-12
    hi = z_coarse.numpy().max(axis=0) + 1e-12
    assert np.all(out >= lo) and np.all(out <= hi)


def test_empty_context_raises():
    with pytest.raises(EmptyContext):
        cross_attention_fuse(torch.randn(2, 3), torch.zeros(0, 3))


# -- progressive fusion --

def test_progressive_zero_levels_identity():
    mu_c = _f64([1.0, -2.0])
    zeros = (_f64([0.0, 0.0]), _f64([1.0, 1.0]))
    z_g, z_j, z_i = progressive_fuse((mu_c, zeros[1]), zeros, zeros)
    assert torch.equal(z_g, mu_c) and torch.equal(z_j, mu_c) and torch.equal(z_i, mu_c)


def test_progressive_vector_addition():
    one = _f64([1.0, 1.0])
    z_g, z_j, z_i = progressive_fuse((_f64([1.0, 0.0]), one),
                                     (_f64([0.0, 1.0]), one),
                                     (_f64([1.0, 1.0]), one))
    assert torch.equal(z_i, _f64([2.0, 2.0]))
    assert torch.equal(z_j, _f64([1.0, 1.0]))


def test_progressive_composition_associative_in_order():
    rng = np.random.default_rng(1)
    mus = [_f64(rng.normal(size=4)) for _ in range(3)]
    sd = _f64(np.ones(4))
    z_g, z_j, z_i = progressive_fuse((mus[0], sd), (mus[1], sd), (mus[2], sd))
    assert torch.allclose(z_i, mus[0] + mus[1] + mus[2])
    assert torch.allclose(z_i, z_j + mus[2])


# -- similarity matrix --

def test_orthonormal_identity():
    z = torch.eye(4, dtype=torch.float64)
    s = similarity_matrix(z, z)
    assert torch.allclose(s, torch.eye(4, dtype=torch.float64))


def test_cosine_scale_invariance():
    rng = np.random.default_rng(2)
    zt = _f64(rng.normal(size=(3, 5)))
    zm = _f64(rng.normal(size=(3, 5)))
    s1 = similarity_matrix(zt, zm)
    zt2 = zt.clone()
    zt2[1] *= 7.5
    s2 = similarity_matrix(zt2, zm)
    assert torch.allclose(s1, s2)


def test_hand_cosines():
    zt = _f64([[1.0, 0.0], [1.0, 1.0]])
    zm = _f64([[0.0, 1.0], [1.0, 0.0]])
    s = similarity_matrix(zt, zm).numpy()
    r2 = 1.0 / math.sqrt(2.0)
    assert np.allclose(s, [[0.0, 1.0], [r2, r2]], atol=1e-12)


def test_zero_row_rejected():
    with pytest.raises(ZeroNormEmbedding):
        similarity_matrix(torch.zeros(2, 3, dtype=torch.float64),
                          torch.ones(2, 3, dtype=torch.float64))


# -- InfoNCE --

@pytest.mark.parametrize("n", [2, 8, 64])
@pytest.mark.parametrize("tau", [0.07, 0.1, 1.0])
def test_uniform_matrix_gives_log_n(n, tau):
    s = torch.full((n, n), 0.37, dtype=torch.float64)
    assert abs(float(infonce(s, tau)) - math.log(n)) < 1e-9


def test_identity_two_by_two_analytic():
    v = float(infonce(torch.eye(2, dtype=torch.float64), 1.0))
    assert abs(v - (math.log(1.0 + math.e) - 1.0)) < 1e-12
    assert abs(v - 0.31326) < 1e-5


def test_diagonal_dominance_drives_loss_down():
    values = []
    for d in (2.0, 5.0, 10.0):
        s = torch.zeros(4, 4, dtype=torch.float64)
        s.fill_diagonal_(d)
        values.append(float(infonce(s, 1.0)))
    assert values[0] > values[1] > values[2] > 0.0


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    s = _f64(rng.normal(size=(6, 6)))
    base = float(infonce(s, 0.3))
    perm = rng.permutation(6)
    sp = s[perm][:, perm]
    assert abs(float(infonce(sp, 0.3)) - base) < 1e-12


def test_negative_filter_excludes_pairs():
    s = torch.zeros(3, 3, dtype=torch.float64)
    s.fill_diagonal_(1.0)
    s[0, 1] = 5.0                       # overwhelming near-duplicate negative
    filt = np.zeros((3, 3), dtype=bool)
    filt[0, 1] = True
    unfiltered = float(infonce(s, 1.0))
    filtered = float(infonce(s, 1.0, filt))
    assert filtered < unfiltered
    # hand evaluation: row 0 and column 1 lose the (0, 1) term, every other
    # softmax keeps its three entries
    e = math.e
    expected = -1.0 + (2 * math.log(e + 1.0) + 4 * math.log(e + 2.0)) / 6.0
    assert abs(filtered - expected) < 1e-12


def test_diagonal_never_filtered():
    s = torch.eye(2, dtype=torch.float64)
    filt = np.ones((2, 2), dtype=bool)
    v = float(infonce(s, 1.0, filt))
    assert math.isfinite(v)


def test_bad_temperature():
    with pytest.raises(InvalidTemperature):
        infonce(torch.eye(2), 0.0)
    with pytest.raises(InvalidTemperature):
        infonce(torch.eye(2), -0.5)


# -- KL --

def test_kl_standard_vs_standard_is_zero():
    std = (torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64))
    assert float(kl_regularizers(std, std)) == 0.0


def test_kl_closed_form_one_dimensional():
    text = (_f64([1.0]), _f64([1.0]))
    std = (_f64([0.0]), _f64([1.0]))
    assert abs(float(kl_regularizers(text, std)) - 0.5) < 1e-12
    assert abs(float(gaussian_kl(_f64([1.0]), _f64([1.0]), _f64([0.0]), _f64([1.0])))
               - 0.5) < 1e-12


def test_kl_nonnegative_on_random_draws():
    rng = np.random.default_rng(4)
    for _ in range(25):
        a = (_f64(rng.normal(size=6)), _f64(rng.uniform(0.2, 3.0, size=6)))
        b = (_f64(rng.normal(size=6)), _f64(rng.uniform(0.2, 3.0, size=6)))
        assert float(kl_regularizers(a, b)) >= 0.0
        assert float(gaussian_kl(*a, *b)) >= -1e-12


def test_kl_symmetric_under_modality_swap():
    a = (_f64([0.5, -1.0]), _f64([0.7, 1.3]))
    b = (_f64([-0.2, 0.3]), _f64([1.1, 0.4]))
    assert abs(float(kl_regularizers(a, b)) - float(kl_regularizers(b, a))) < 1e-12


# -- smooth-L1 losses --

def test_smooth_l1_zero_on_equality():
    x = torch.randn(4, 5, dtype=torch.float64)
    assert float(embedding_similarity_loss(x, x)) == 0.0
    assert float(reconstruction_loss(x, x)) == 0.0


def test_smooth_l1_quadratic_zone():
    assert abs(float(embedding_similarity_loss(_f64([0.5]), _f64([0.0]))) - 0.125) < 1e-12


def test_smooth_l1_linear_zone():
    assert abs(float(reconstruction_loss(_f64([2.0]), _f64([0.0]))) - 1.5) < 1e-12


def test_shape_mismatch_raises():
    with pytest.raises(DimError):
        embedding_similarity_loss(torch.zeros(3), torch.zeros(4))
    with pytest.raises(DimError):
        reconstruction_loss(torch.zeros(2, 3), torch.zeros(3, 2))


# -- gradient checks (central differences, h = 1e-5) --

def _central_diff(fn, x, h=1e-5):
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def _check(fn, x):
    xg = x.clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(fn(xg), xg)
    numeric = _central_diff(fn, x.clone())
    scale = numeric.abs().max().clamp(min=1e-12)
    return float((analytic - numeric).abs().max() / scale)


def test_gradcheck_infonce():
    rng = np.random.default_rng(5)
    s = _f64(rng.normal(size=(4, 4)))
    assert _check(lambda t: infonce(t, 0.7), s) < 1e-4


def test_gradcheck_cross_attention():
    rng = np.random.default_rng(6)
    z_low = _f64(rng.normal(size=(3, 5)))
    z_coarse = _f64(rng.normal(size=(2, 5)))
    assert _check(lambda t: cross_attention_fuse(t, z_coarse).sum(), z_low) < 1e-4
    assert _check(lambda t: cross_attention_fuse(z_low, t).sum(), z_coarse) < 1e-4


def test_gradcheck_kl():
    rng = np.random.default_rng(7)
    mu = _f64(rng.normal(size=6))
    sd = _f64(rng.uniform(0.5, 2.0, size=6))
    ref = (_f64(rng.normal(size=6)), _f64(rng.uniform(0.5, 2.0, size=6)))
    assert _check(lambda t: kl_regularizers((t, sd), ref), mu) < 1e-4
    assert _check(lambda t: kl_regularizers((mu, t), ref), sd) < 1e-4
