import numpy as np
import pytest

from iwsr.autodiff import DimensionError, Tensor, backward, reduce_sum, zero_grads
from iwsr.encoder import (Encoder, EncoderConfig, Hfrb, HfrbConfig,
                          ScheduleError, downsample_schedule)


def tiny_config(**kw):
    return EncoderConfig(down_channels=(2, 3, 4), up_channels=(3, 2, 4), **kw)


def rand_input(rng, shape, channels=4):
    return Tensor(rng.standard_normal((channels,) + shape).astype(np.float32))


# ---------------------------------------------------------------------------
# architecture shape ladder
# ---------------------------------------------------------------------------

# Operator-by-operator input shapes (channels, t, z, x) for the default
# ladder applied to a 4-variable block of size t=4, z=16, x=16, finishing
# with the 32-channel same-resolution output.
EXPECTED_LADDER = [
    ("HFRB", (4, 4, 16, 16)),
    ("HFRB", (16, 4, 16, 16)),
    ("DownSamp", (32, 4, 16, 16)),
    ("HFRB", (32, 4, 8, 8)),
    ("DownSamp", (64, 4, 8, 8)),
    ("HFRB", (64, 4, 4, 4)),
    ("DownSamp", (128, 4, 4, 4)),
    ("HFRB", (128, 2, 2, 2)),
    ("DownSamp", (256, 2, 2, 2)),
    ("HFRB", (256, 1, 1, 1)),
    ("UpSamp", (128, 1, 1, 1)),
    ("HFRB", (128, 2, 2, 2)),
    ("UpSamp", (64, 2, 2, 2)),
    ("HFRB", (64, 4, 4, 4)),
    ("UpSamp", (32, 4, 4, 4)),
    ("HFRB", (32, 4, 8, 8)),
    ("UpSamp", (16, 4, 8, 8)),
    ("HFRB", (32, 4, 16, 16)),
    ("out", (32, 4, 16, 16)),
]


def test_default_ladder_shapes_match_reference():
    enc = Encoder(EncoderConfig(), rng=np.random.default_rng(0))
    trace = enc.shape_trace((4, 16, 16))
    assert trace == EXPECTED_LADDER


def test_output_resolution_matches_input():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(1))
    x = rand_input(np.random.default_rng(2), (4, 16, 32))
    y = enc(x)
    assert y.shape == (4, 4, 16, 32)


def test_batched_and_unbatched_agree():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(3))
    rng = np.random.default_rng(4)
    x = rand_input(rng, (4, 8, 8))
    single = enc(x).data
    batched = enc(Tensor(x.data[None].repeat(2, axis=0)))
    assert batched.shape == (2, 4, 4, 8, 8)
    np.testing.assert_allclose(batched.data[0], single, rtol=0, atol=1e-5)
    np.testing.assert_allclose(batched.data[1], single, rtol=0, atol=1e-5)


def test_forward_is_deterministic_given_seed():
    rng_x = np.random.default_rng(5)
    x = rand_input(rng_x, (4, 8, 8))
    y1 = Encoder(tiny_config(), rng=np.random.default_rng(7))(x).data
    y2 = Encoder(tiny_config(), rng=np.random.default_rng(7))(Tensor(x.data.copy())).data
    np.testing.assert_array_equal(y1, y2)


# ---------------------------------------------------------------------------
# downsampling schedule
# ---------------------------------------------------------------------------

def test_schedule_halves_all_largest_axes():
    assert downsample_schedule((4, 16, 16), 4) == [
        (1, 2, 2), (1, 2, 2), (2, 2, 2), (2, 2, 2)]
    assert downsample_schedule((4, 16, 32), 2) == [(1, 1, 2), (1, 2, 2)]


def test_schedule_rejects_odd_largest_axis():
    with pytest.raises(ScheduleError, match="odd"):
        downsample_schedule((4, 6, 7), 1)


def test_schedule_rejects_exhausted_axes():
    with pytest.raises(ScheduleError):
        downsample_schedule((1, 1, 1), 1)


def test_encoder_rejects_unsplittable_input():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(0))
    with pytest.raises(ScheduleError):
        enc(rand_input(np.random.default_rng(0), (2, 2, 2)))


def test_encoder_rejects_wrong_channel_count():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(0))
    with pytest.raises(DimensionError, match="channel"):
        enc(rand_input(np.random.default_rng(0), (4, 8, 8), channels=3))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def hfrb_param_count(ci, co, attention=True, fft_path=True):
    n = 27 * ci * co + co          # main conv
    n += 2 * co                    # group norm affine
    if attention:
        n += ci + 1                # gate conv
    if fft_path:
        n += 2 * (ci * co + co)    # real + imag spectral convs
    if ci != co:
        n += ci * co + co          # channel-matching skip conv
    return n


def encoder_param_count(cfg: EncoderConfig):
    down, up = cfg.down_channels, cfg.up_channels
    k = len(down)
    chains = [(cfg.in_channels, down[0])]
    chains += [(down[i - 1], down[i]) for i in range(1, k)]
    chains += [(down[-1], up[0])]
    total = 0
    for j in range(1, k):
        fuse_in = up[j - 1] + down[k - j]
        fuse_out = up[j - 1] if j < k - 1 else 2 * up[j - 1]
        total += fuse_in * fuse_out + fuse_out
        chains.append((fuse_out, up[j]))
    total += sum(hfrb_param_count(ci, co, cfg.attention, cfg.fft_path)
                 for ci, co in chains)
    return total


def test_parameter_count_matches_independent_formula():
    for cfg in (EncoderConfig(), tiny_config(),
                tiny_config(attention=False), tiny_config(fft_path=False)):
        enc = Encoder(cfg, rng=np.random.default_rng(0))
        got = sum(p.data.size for p in enc.named_parameters().values())
        assert got == encoder_param_count(cfg)


def test_default_parameter_count_golden():
    enc = Encoder(EncoderConfig(), rng=np.random.default_rng(0))
    got = sum(p.data.size for p in enc.named_parameters().values())
    assert got == encoder_param_count(EncoderConfig())
    assert 1_000_000 < got < 5_000_000  # full-size model, not a stub


def test_parameter_names_unique_and_prefixed():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(0))
    names = list(enc.named_parameters("enc").keys())
    assert len(names) == len(set(names))
    assert all(n.startswith("enc.") for n in names)


def test_gradient_reaches_every_parameter():
    enc = Encoder(tiny_config(), rng=np.random.default_rng(11))
    params = enc.named_parameters()
    # Bottleneck resolution is (3, 4, 4): axes of size 2 would make every
    # spectrum purely real and starve the imaginary-part convolutions.
    x = rand_input(np.random.default_rng(12), (6, 8, 8))
    zero_grads(params.values())
    y = enc(x)
    backward(reduce_sum(y * y))
    for name, p in params.items():
        assert p.grad is not None, name
        assert np.abs(p.grad).max() > 0, f"no gradient signal in {name}"


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

def test_ablations_remove_parameters():
    counts = []
    for kw in ({}, {"attention": False}, {"fft_path": False},
               {"attention": False, "fft_path": False}):
        enc = Encoder(tiny_config(**kw), rng=np.random.default_rng(21))
        counts.append(sum(p.data.size for p in enc.named_parameters().values()))
    assert counts[1] < counts[0] and counts[2] < counts[0] and counts[3] < counts[2]


def test_spectral_and_gate_paths_contribute():
    # The spectral and gate convolutions start at zero, so their effect is
    # checked with randomized weights: zeroing either path must change the
    # block output.
    blk = Hfrb(HfrbConfig(3, 3), np.random.default_rng(22))
    rng = np.random.default_rng(23)
    for layer in (blk.fft_real, blk.fft_imag, blk.gate):
        layer.weight.data = rng.standard_normal(layer.weight.shape).astype(np.float32) * 0.3
    x = Tensor(rng.standard_normal((1, 3, 3, 4, 4)).astype(np.float32))
    y_full = blk(x).data.copy()
    for layer in (blk.fft_real, blk.fft_imag, blk.gate):
        saved = layer.weight.data.copy()
        layer.weight.data = np.zeros_like(saved)
        assert np.abs(blk(x).data - y_full).max() > 1e-6
        layer.weight.data = saved


def test_block_without_paths_is_residual_conv():
    cfg = HfrbConfig(3, 3, attention=False, fft_path=False)
    blk = Hfrb(cfg, np.random.default_rng(0))
    assert blk.gate is None and blk.fft_real is None and blk.skip is None
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 2, 4, 4)).astype(np.float32))
    y = blk(x)
    assert y.shape == x.shape
