import numpy as np
import pytest
from pydantic import TypeAdapter

from refil.config import CIFAR10_MEAN, CIFAR10_STD
from refil.errors import DataError
from refil.harness import (
    Cifar10Binary, MnistIdx, MovieLensCsv, Synthetic, load_cifar10, load_dataset, load_mnist, load_movielens,
    read_idx, write_idx,
)
from refil.harness.data_service import CIFAR_RECORD, to_pixels
from refil.harness.models import DatasetSource


@pytest.fixture
def mnist_files(tmp_path, rng):
    images = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.array([0, 3, 9, 1, 7], dtype=np.uint8)
    write_idx(tmp_path / "images.idx3-ubyte", images)
    write_idx(tmp_path / "labels.idx1-ubyte.gz", labels, compress=True)
    return tmp_path / "images.idx3-ubyte", tmp_path / "labels.idx1-ubyte.gz", images, labels


def test_idx_round_trip(tmp_path, rng):
    array = rng.integers(0, 256, size=(3, 4, 5), dtype=np.uint8)
    for compress in (False, True):
        path = write_idx(tmp_path / f"a{compress}.idx", array, compress=compress)
        np.testing.assert_array_equal(read_idx(path), array)


def test_idx_header_is_big_endian(tmp_path):
    path = write_idx(tmp_path / "labels.idx", np.array([1, 2, 3], dtype=np.uint8))
    assert path.read_bytes()[:8] == b"\x00\x00\x08\x01\x00\x00\x00\x03"


def test_mnist_loads_scaled_images(mnist_files):
    images_path, labels_path, images, labels = mnist_files
    data = load_mnist(images_path, labels_path)
    assert data.inputs.shape == (5, 1, 28, 28)
    assert data.inputs.dtype == np.float32
    assert 0.0 <= data.inputs.min() and data.inputs.max() <= 1.0
    np.testing.assert_array_equal(to_pixels(data.inputs[:, 0]), images)
    np.testing.assert_array_equal(data.labels, labels)


def test_mnist_bad_magic(mnist_files):
    images_path, labels_path, _, _ = mnist_files
    with pytest.raises(DataError) as excinfo:
        load_mnist(labels_path, labels_path)
    assert excinfo.value.location == "byte 0"


def test_mnist_label_count_must_match(tmp_path, mnist_files):
    images_path, _, _, _ = mnist_files
    short = write_idx(tmp_path / "short.idx1-ubyte", np.array([1, 2], dtype=np.uint8))
    with pytest.raises(DataError):
        load_mnist(images_path, short)


def test_truncated_idx(tmp_path):
    path = write_idx(tmp_path / "x.idx", np.zeros((2, 3), dtype=np.uint8))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(DataError):
        read_idx(path)


def _cifar_file(path, records):
    path.write_bytes(b"".join(bytes([label]) + pixels.tobytes() for label, pixels in records))
    return path


def test_cifar_zero_record_is_standardized(tmp_path):
    path = _cifar_file(tmp_path / "data_batch_1.bin", [(4, np.zeros(3072, dtype=np.uint8))])
    data = load_cifar10([path])
    assert data.inputs.shape == (1, 3, 32, 32)
    assert data.labels.tolist() == [4]
    expected = -np.asarray(CIFAR10_MEAN) / np.asarray(CIFAR10_STD)
    np.testing.assert_allclose(data.inputs[0, :, 0, 0], expected, rtol=1e-5)


def test_cifar_channel_major_layout(tmp_path):
    pixels = np.zeros(3072, dtype=np.uint8)
    pixels[1024:2048] = 255
    data = load_cifar10([_cifar_file(tmp_path / "b.bin", [(0, pixels)])], standardize=False)
    assert data.inputs[0, 0].max() == 0.0
    assert data.inputs[0, 1].min() == 1.0


def test_cifar_partial_record(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes(CIFAR_RECORD + 10))
    with pytest.raises(DataError) as excinfo:
        load_cifar10([path])
    assert excinfo.value.location == f"byte {CIFAR_RECORD}"


def test_cifar_bad_label(tmp_path):
    path = _cifar_file(tmp_path / "bad.bin", [(1, np.zeros(3072, dtype=np.uint8)), (12, np.zeros(3072, np.uint8))])
    with pytest.raises(DataError):
        load_cifar10([path])


def test_movielens_raw_ids(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("userId,movieId,rating,timestamp\n1,2,5.0,964982703\n1,3,3.5,964982704\n")
    data = load_movielens(path, remap_ids=False)
    assert data.inputs.tolist() == [[1, 2], [1, 3]]
    assert data.labels.tolist() == [1.0, 0.0]
    assert data.meta["num_users"] == 2
    assert data.meta["num_items"] == 4


def test_movielens_remaps_ids_densely(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("10,200,5.0\n30,100,4.0\n10,100,5.0\n")
    data = load_movielens(path)
    assert data.inputs.tolist() == [[0, 1], [1, 0], [0, 0]]
    assert (data.meta["num_users"], data.meta["num_items"]) == (2, 2)
    assert data.meta["user_ids"].tolist() == [10, 30]


def test_movielens_bad_line(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("userId,movieId,rating\n1,2,5.0\n1,x,4.0\n")
    with pytest.raises(DataError) as excinfo:
        load_movielens(path)
    assert excinfo.value.location == "line 3"


def test_movielens_max_ratings(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("".join(f"{i},{i},4.5\n" for i in range(1, 11)))
    assert len(load_movielens(path, max_ratings=4)) == 4


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        read_idx(tmp_path / "absent.idx")


def test_synthetic_images_are_in_unit_range():
    data = load_dataset(Synthetic(generator="images", size=6, shape=(1, 8, 8), seed=3))
    assert data.inputs.shape == (6, 1, 8, 8)
    assert data.inputs.min() == 0.0 and data.inputs.max() == 1.0


def test_synthetic_generators_are_seeded():
    src = Synthetic(generator="separable", size=20, shape=(4,), classes=3, seed=9)
    np.testing.assert_array_equal(load_dataset(src).inputs, load_dataset(src).inputs)


def test_synthetic_ratings():
    data = load_dataset(Synthetic(generator="ratings", size=50, num_users=4, num_items=6))
    assert data.inputs.shape == (50, 2)
    assert data.inputs[:, 0].max() < 4 and data.inputs[:, 1].max() < 6
    assert set(np.unique(data.labels).tolist()) <= {0.0, 1.0}


def test_subsample_is_seeded():
    src = Synthetic(generator="separable", size=50, shape=(2,), classes=2)
    a = load_dataset(src, subsample=10, seed=1)
    b = load_dataset(src, subsample=10, seed=1)
    assert len(a) == 10
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_dataset_source_union(tmp_path):
    adapter = TypeAdapter(DatasetSource)
    assert isinstance(adapter.validate_python({"kind": "mnist_idx", "images": "a", "labels": "b"}), MnistIdx)
    assert isinstance(adapter.validate_python({"kind": "cifar10_binary", "paths": ["a"]}), Cifar10Binary)
    assert isinstance(adapter.validate_python({"kind": "movielens_csv", "path": "r.csv"}), MovieLensCsv)
    assert isinstance(adapter.validate_python({"kind": "synthetic"}), Synthetic)
