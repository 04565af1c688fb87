import numpy as np
import pytest

from gaitscreen.errors import DataFormatError
from gaitscreen.tensor_io import export_csv, load_tensor, save_tensor


def test_roundtrip_exact(tmp_path, rng):
    for shape in [(3,), (2, 4), (2, 3, 4, 5)]:
        arr = rng.standard_normal(shape)
        path = tmp_path / "t.ten"
        save_tensor(path, arr)
        back = load_tensor(path)
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)


def test_header_layout(tmp_path):
    path = tmp_path / "t.ten"
    save_tensor(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == (2).to_bytes(4, "little")
    assert raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:12] == (3).to_bytes(4, "little")
    assert len(raw) == 12 + 6 * 8


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "bad.ten"
    save_tensor(path, np.ones(4))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataFormatError, match="payload"):
        load_tensor(path)


def test_csv_export(tmp_path):
    path = tmp_path / "t.csv"
    export_csv(path, np.array([[1.5, 2.0], [3.0, 4.0]]))
    lines = path.read_text().splitlines()
    assert lines[0] == "# shape: 2,2"
    assert [float(v) for v in lines[1].split(",")] == [1.5, 2.0]
    assert len(lines) == 3
