import math

import numpy as np
import pytest

import hybridrx as hrx


@pytest.fixture
def toy():
    # found through HRX_CONFIG_DIR
    return hrx.configure("toy", frames_per_point=4, snr_db=[0, 10])


def test_noise_variance_convention():
    assert hrx.snr_db_to_noise_var(0.0) == 1.0
    assert math.isclose(hrx.snr_db_to_noise_var(10.0), 0.1, rel_tol=1e-15)
    assert hrx.ebn0_to_esn0_db(3.0, 2, 0.5) == pytest.approx(3.0)


def test_config_round_trip(toy):
    assert hrx.Config.parse(toy.dump()).dump() == toy.dump()
    assert hrx.Config.parse(hrx.Config().dump()) == hrx.Config()
    assert toy.constellation == "qpsk"
    assert toy.snr_db == [0.0, 10.0]
    assert toy.channel_model == "flat-rayleigh"
    with pytest.raises(hrx.ConfigError):
        hrx.Config.parse("seed = 1\nbogus = 2\n")


def test_layout(toy):
    layout = hrx.frame_layout(toy)
    assert layout["data_res"] == 64
    assert layout["info_bits"] == 64
    assert layout["codewords"] == 1


def test_sweep_is_reproducible(toy):
    rows = hrx.run_sweep(toy)
    assert [r["snr_db"] for r in rows] == [0.0, 10.0]
    assert rows[1]["info_ber"] <= rows[0]["info_ber"]
    assert rows[0]["bit_count"] == 4 * 64
    assert hrx.sweep_csv(toy) == hrx.sweep_csv(toy)


def test_noiseless_payload_is_exact(toy):
    cfg = toy.with_lines(["noiseless = true", "channel.model = ideal", "receiver = perfect_csi"])
    img = hrx.synthetic_image(8, 6)
    r = hrx.run_payload(img, cfg)
    assert r["received"] == img
    assert r["mse"] == 0.0
    assert r["psnr_db"] == 100.0


def test_distortion_single_corruption():
    ref = bytes(100)
    bad = bytes([255]) + bytes(99)
    mse, rmse, psnr = hrx.distortion(ref, bad)
    assert mse == 650.25
    assert rmse * rmse == pytest.approx(mse, rel=1e-12)
    assert psnr == pytest.approx(20.0)


def test_qpsk_demapper_closed_form():
    pts = hrx.constellation_points(4)
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    y = rng.normal(size=50) + 1j * rng.normal(size=50)
    llr = hrx.demap(y, 0.3, 4)
    assert llr.shape == (50, 2)
    np.testing.assert_allclose(llr[:, 0], 2 * math.sqrt(2) * y.real / 0.3, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(llr[:, 1], 2 * math.sqrt(2) * y.imag / 0.3, rtol=1e-9, atol=1e-9)


def test_bp_decodes_clean_all_zero_word():
    alist = hrx.regular_ldpc_alist(16, 3, 6, 1)
    bits, ok, iters = hrx.bp_decode(np.full(16, 5.0), alist)
    assert ok
    assert iters <= 1
    assert not bits.any()


def test_parameter_count_default():
    assert hrx.parameter_count(hrx.Config()) == 512983


def test_short_training_and_inspect(toy, tmp_path):
    cfg = toy.with_lines(["scale = 0.00001", "train.val_frames = 4"])
    out = tmp_path / "m.ckpt"
    reports, metrics = hrx.train(cfg, 1, 1, str(out))
    assert len(reports) == 1
    assert metrics.startswith("stage,step,loss,lr,val_ber")
    text = hrx.inspect_checkpoint(str(out))
    assert f"parameters: {hrx.parameter_count(cfg)}" in text
    rows = hrx.run_sweep(cfg.with_lines(["receiver = hnr"]), str(out))
    assert len(rows) == 2
    other = cfg.with_lines(["constellation = qam16"])
    with pytest.raises(hrx.FingerprintError):
        hrx.run_sweep(other.with_lines(["receiver = hnr"]), str(out))
