import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffe.errors import ConfigurationError, DimensionError
from diffe.grad_core import NDValue, Tape, backward, mean
from diffe.networks import (
    Classifier, DdpmNet, Encoder, Network, build_bundle, classify, ddpm_forward, decoder_forward,
    encoder_forward, param_count, time_embed,
)
from diffe.training import infer


def conv_block(c_in, c_out, k=3):
    return c_in * c_out * k + c_out + 2 * c_out


def linear(n_in, n_out):
    return n_in * n_out + n_out


def expected_counts(c=64, d=(32, 64, 128), e=(64, 128, 256), p=(32, 32, 32), tdim=64):
    theta = (conv_block(c, d[0]) + conv_block(d[0], d[1]) + conv_block(d[1], d[2]) + conv_block(d[2], d[2])
             + conv_block(d[2] + d[1], d[1]) + conv_block(d[1] + d[0], d[0]) + conv_block(d[0] + c, d[0])
             + sum(linear(tdim, w) for w in (d[0], d[1], d[2], d[2], d[1], d[0], d[0]))
             + c * d[0] + c)
    phi = conv_block(c, e[0]) + conv_block(e[0], e[1]) + conv_block(e[1], e[2])
    psi = (conv_block(e[2] + d[2], p[0]) + conv_block(p[0] + d[1], p[1]) + conv_block(p[1] + d[0], p[2])
           + (p[2] + 2 * c) * c + c)
    return theta, phi, psi


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(0)
    bundle = build_bundle("full", in_channels=8, seed=3, ddpm_widths=(8, 16, 16), encoder_widths=(8, 16, 256),
                          decoder_widths=(8, 8, 8), time_dim=8, dtype=np.float64)
    x = NDValue(rng.standard_normal((2, 8, 32)))
    return bundle, x


# -- time embedding --------------------------------------------------------------

def test_time_embed_at_zero():
    e = time_embed(np.array([0]), 64)
    assert np.all(e[0, :32] == 0) and np.all(e[0, 32:] == 1)


def test_time_embed_rows():
    e = time_embed(np.array([5, 5, 1, 2]), 64)
    assert np.array_equal(e[0], e[1])
    assert np.linalg.norm(e[2] - e[3]) > 0


def test_time_embed_odd_dim():
    with pytest.raises(ConfigurationError):
        time_embed([1], 63)


@given(st.lists(st.integers(1, 1000), min_size=2, max_size=2, unique=True))
@settings(max_examples=50, deadline=None)
def test_time_embed_distinct(ts):
    e = time_embed(np.array(ts), 64)
    assert not np.allclose(e[0], e[1])


# -- DDPM -------------------------------------------------------------------------

def test_ddpm_default_shape_and_determinism():
    theta = DdpmNet(rng=0)
    x = NDValue(np.random.default_rng(1).standard_normal((4, 64, 512)).astype(np.float32))
    t = np.array([1, 10, 100, 1000])
    a, acts = ddpm_forward(x, t, theta)
    b, _ = ddpm_forward(x, t, theta)
    assert a.shape == (4, 64, 512)
    assert np.array_equal(a.data, b.data)
    assert {k: v.shape for k, v in acts.items()} == {8: (4, 128, 64), 4: (4, 64, 128), 2: (4, 32, 256)}


def test_ddpm_time_conditioning_is_live(small):
    bundle, x = small
    a, _ = bundle.theta.forward(x, np.array([1, 1]))
    b, _ = bundle.theta.forward(x, np.array([500, 500]))
    assert np.max(np.abs(a.data - b.data)) > 0


def test_ddpm_rejects_indivisible_length(small):
    bundle, _ = small
    with pytest.raises(ConfigurationError, match="divisible by 8"):
        bundle.theta.forward(NDValue(np.zeros((1, 8, 36))), np.array([1]))


@given(b=st.integers(1, 3), mult=st.integers(1, 6))
@settings(max_examples=10, deadline=None)
def test_networks_shape_contract(small, b, mult):
    bundle, _ = small
    x = NDValue(np.random.default_rng(b).standard_normal((b, 8, 8 * mult)))
    x_hat, acts = bundle.theta.forward(x, np.ones(b, dtype=int))
    feats, z = bundle.phi.forward(x)
    e = bundle.psi.forward(feats[8], acts, [x, x_hat])
    assert x_hat.shape == x.shape == e.shape
    assert z.shape == (b, 256)
    assert bundle.rho.forward(z).shape == (b, 13)


# -- encoder ----------------------------------------------------------------------

def test_encoder_latent_width():
    phi = Encoder(rng=0)
    x = NDValue(np.random.default_rng(2).standard_normal((4, 64, 512)).astype(np.float32))
    feats, z = encoder_forward(x, phi)
    assert z.shape == (4, 256)
    assert np.array_equal(z.data, encoder_forward(x, phi)[1].data)


def test_encoder_zero_input_is_finite(small):
    bundle, _ = small
    _, z = bundle.phi.forward(NDValue(np.zeros((2, 8, 32))))
    assert np.all(np.isfinite(z.data))


# -- decoder ----------------------------------------------------------------------

def test_decoder_gradient_stops_at_detached_ddpm(small):
    bundle, x = small
    x_hat, acts = bundle.theta.forward(x, np.array([3, 7]))
    for net in bundle.networks().values():
        net.zero_grad()
    with Tape() as tape:
        feats, _ = bundle.phi.forward(x)
        skips = {k: v.detach() for k, v in acts.items()}
        e = decoder_forward(feats[8], skips, x, x_hat.detach(), bundle.psi)
        loss = mean(e)
    backward(loss, tape)
    assert all(p.grad is not None for p in bundle.psi.parameters())
    assert all(p.grad is not None for p in bundle.phi.parameters())
    assert all(p.grad is None for p in bundle.theta.parameters())


def test_decoder_last_layer_skip_is_live(small):
    bundle, x = small
    x_hat, acts = bundle.theta.forward(x, np.array([3, 7]))
    feats, _ = bundle.phi.forward(x)
    a = decoder_forward(feats[8], acts, x, x_hat, bundle.psi).data
    bumped = NDValue(x_hat.data + 1.0)
    b = decoder_forward(feats[8], acts, x, bumped, bundle.psi).data
    assert np.max(np.abs(a - b)) > 0


def test_decoder_resolution_mismatch(small):
    bundle, x = small
    _, acts = bundle.theta.forward(x, np.array([1, 1]))
    feats, _ = bundle.phi.forward(x)
    bad = dict(acts)
    bad[4] = NDValue(np.zeros((2, acts[4].shape[1], 5)))
    with pytest.raises(ConfigurationError, match="resolution"):
        bundle.psi.forward(feats[8], bad, [x, x])


# -- classifier ---------------------------------------------------------------------

def test_classifier_zero_weights():
    rho = Classifier(rng=0, dtype=np.float64)
    for p in rho.parameters():
        p.data[...] = 0
    assert not classify(NDValue(np.ones((3, 256))), rho).data.any()


def test_classifier_linear_in_z():
    rho = Classifier(rng=1, dtype=np.float64)
    rho.params["fc.bias"].data[...] = 0
    z = np.random.default_rng(0).standard_normal((5, 256))
    one = classify(NDValue(z), rho).data
    two = classify(NDValue(2 * z), rho).data
    assert one.shape == (5, 13)
    assert np.allclose(two, 2 * one)


def test_classifier_width_mismatch():
    with pytest.raises(DimensionError):
        Classifier(rng=0).forward(NDValue(np.ones((2, 128))))


# -- parameter counts -------------------------------------------------------------------

def test_classifier_param_count():
    assert Classifier(rng=0).param_count() == 3341


def test_hidden_classifier_near_400k():
    assert Classifier(rng=0, hidden=1487).param_count() == 256 * 1487 + 1487 + 1487 * 13 + 13


def test_default_counts_match_layer_arithmetic():
    counts = param_count(build_bundle("full", 64, seed=0))
    theta, phi, psi = expected_counts()
    assert (counts["theta"], counts["phi"], counts["psi"]) == (theta, phi, psi)
    assert counts["theta"] == 176_064 and counts["phi"] == 136_512 and counts["psi"] == 62_816
    assert 200_000 <= counts["theta+phi+psi"] <= 400_000


def test_empty_network_count():
    assert param_count(Network()) == 0
    assert param_count(None) == 0


def test_encoder_classifier_mode_has_no_theta_or_psi():
    b = build_bundle("encoder_classifier", 8, seed=0, encoder_widths=(8, 16, 256))
    assert b.theta is None and b.psi is None
    c = b.param_counts()
    assert c["theta"] == 0 and c["psi"] == 0


def test_unknown_mode():
    with pytest.raises(ConfigurationError):
        build_bundle("nope")


def test_seeded_init_is_bit_reproducible():
    a = build_bundle("full", 8, seed=11, ddpm_widths=(8, 16, 16), encoder_widths=(8, 16, 256), time_dim=8)
    b = build_bundle("full", 8, seed=11, ddpm_widths=(8, 16, 16), encoder_widths=(8, 16, 256), time_dim=8)
    sa, sb = a.state_dict(), b.state_dict()
    for net in sa:
        for k in sa[net]:
            assert np.array_equal(sa[net][k], sb[net][k])


def test_state_dict_round_trip_and_mismatch(small):
    bundle, _ = small
    other = build_bundle("full", in_channels=8, seed=99, ddpm_widths=(8, 16, 16), encoder_widths=(8, 16, 256),
                         decoder_widths=(8, 8, 8), time_dim=8, dtype=np.float64)
    other.load_state_dict(bundle.state_dict())
    assert np.array_equal(other.phi.params["enc1.conv.weight"].data, bundle.phi.params["enc1.conv.weight"].data)
    state = bundle.state_dict()
    state["phi"].pop("enc1.conv.bias")
    with pytest.raises(ConfigurationError):
        other.load_state_dict(state)


def test_inference_never_touches_theta_or_psi(small, monkeypatch):
    bundle, x = small

    def boom(*a, **k):
        raise AssertionError("called")

    monkeypatch.setattr(bundle.theta, "forward", boom)
    monkeypatch.setattr(bundle.psi, "forward", boom)
    labels, scores = infer(x.data, bundle.phi, bundle.rho)
    assert np.array_equal(labels, scores.argmax(axis=1))
