import numpy as np
import pytest

from refil.attacks import mse, read_netpbm, ssim, standard_error, topk_success, write_netpbm
from refil.errors import ConfigError, ShapeMismatchError


def test_mse():
    assert mse(np.zeros(4), np.ones(4)) == 1.0
    assert mse(np.array([1.0, 2.0]), np.array([1.0, 4.0])) == 2.0


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        mse(np.zeros(3), np.zeros(4))


def test_ssim_of_identical_images_is_one(rng):
    image = rng.random((16, 16))
    assert ssim(image, image) == pytest.approx(1.0)


def test_ssim_of_negated_image_is_negative():
    # zero-mean checkerboard: luminance terms agree, structure is inverted
    i, j = np.indices((16, 16))
    image = 0.5 * (-1.0) ** (i + j)
    assert ssim(image[None], -image[None]) < -0.9


def test_ssim_drops_with_noise(rng):
    image = rng.random((3, 20, 20))
    slightly = np.clip(image + 0.05 * rng.standard_normal(image.shape), 0, 1)
    heavily = np.clip(image + 0.5 * rng.standard_normal(image.shape), 0, 1)
    assert 1.0 > ssim(image, slightly) > ssim(image, heavily)


def test_ssim_needs_an_eleven_pixel_window():
    with pytest.raises(ConfigError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_topk_success():
    assert topk_success([3, 1, 2], 1, 1) == 0
    assert topk_success([3, 1, 2], 1, 2) == 1
    assert topk_success([3, 1, 2], 9, 5) == 0
    with pytest.raises(ConfigError):
        topk_success([3, 1, 2], 1, 0)


def test_standard_error():
    assert standard_error([2.0]) == 0.0
    assert standard_error([1.0, 3.0]) == pytest.approx(1.0)


def test_netpbm_grayscale(tmp_path):
    image = np.array([[[0.0, 0.5], [1.0, 2.0]]])
    path = write_netpbm(tmp_path / "recon.png", image)
    assert path.suffix == ".pgm"
    assert path.read_bytes().startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(read_netpbm(path), [[[0, 128], [255, 255]]])


def test_netpbm_color_keeps_channel_order(tmp_path, rng):
    image = rng.random((3, 4, 5))
    path = write_netpbm(tmp_path / "recon", image)
    assert path.suffix == ".ppm"
    expected = np.round(image * 255).astype(np.uint8)
    np.testing.assert_array_equal(read_netpbm(path), expected)


def test_netpbm_rejects_two_channels(tmp_path):
    with pytest.raises(ConfigError):
        write_netpbm(tmp_path / "x", np.zeros((2, 4, 4)))
