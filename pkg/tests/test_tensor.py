import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repshare import errors, tensor


def rand_tensor(rng, rank=None):
    rank = rank or int(rng.integers(1, 5))
    shape = tuple(int(d) for d in rng.integers(1, 6, size=rank))
    return rng.standard_normal(shape).astype(np.float32)


def test_round_trip_bit_exact(tmp_path, rng):
    for i in range(20):
        t = rand_tensor(rng)
        path = str(tmp_path / f"t{i}.npy")
        tensor.write_tensor(t, path)
        back = tensor.read_tensor(path)
        assert back.shape == t.shape
        assert back.tobytes() == t.tobytes()


def test_bytes_match_numpy_save(rng):
    # the subset is exactly what modern numpy emits for float32 C-order
    for rank in (1, 2, 3, 4):
        t = rand_tensor(rng, rank)
        buf = io.BytesIO()
        np.save(buf, t)
        assert tensor.tensor_bytes(t) == buf.getvalue()


def test_numpy_can_read_our_files(tmp_path, rng):
    t = rand_tensor(rng, 3)
    path = str(tmp_path / "x.npy")
    tensor.write_tensor(t, path)
    assert np.array_equal(np.load(path), t)


def test_row_major_order(tmp_path):
    t = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    path = str(tmp_path / "rm.npy")
    tensor.write_tensor(t, path)
    raw = open(path, "rb").read()
    payload = np.frombuffer(raw[-16:], dtype="<f4")
    assert payload[2] == 3.0  # element (1,0) is third in row-major order
    assert tensor.read_tensor(path)[1, 0] == 3.0


def test_write_determinism(tmp_path, rng):
    t = rand_tensor(rng)
    p1, p2 = str(tmp_path / "a.npy"), str(tmp_path / "b.npy")
    tensor.write_tensor(t, p1)
    tensor.write_tensor(t, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_float64_file_rejected(tmp_path):
    path = str(tmp_path / "f8.npy")
    np.save(path, np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(errors.UnsupportedDtype):
        tensor.read_tensor(path)


def test_fortran_order_rejected(tmp_path):
    path = str(tmp_path / "f.npy")
    literal = "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }"
    base = 10 + len(literal) + 1
    pad = (64 - base % 64) % 64
    header = literal.encode() + b" " * pad + b"\n"
    with open(path, "wb") as fh:
        fh.write(b"\x93NUMPY\x01\x00" + struct.pack("<H", len(header)) + header)
        fh.write(np.zeros(4, dtype="<f4").tobytes())
    with pytest.raises(errors.UnsupportedLayout):
        tensor.read_tensor(path)


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "bad.npy")
    open(path, "wb").write(b"NOTNUMPY" + b"\x00" * 64)
    with pytest.raises(errors.FormatError):
        tensor.read_tensor(path)


def test_truncated_payload_rejected(tmp_path, rng):
    t = rand_tensor(rng, 2)
    path = str(tmp_path / "trunc.npy")
    tensor.write_tensor(t, path)
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-2])
    with pytest.raises(errors.FormatError):
        tensor.read_tensor(path)


def test_scalar_and_zero_dim_rejected(tmp_path):
    with pytest.raises(errors.FormatError):
        tensor.write_tensor(np.float32(1.0).reshape(()), str(tmp_path / "s.npy"))
    with pytest.raises(errors.FormatError):
        tensor.write_tensor(np.zeros((0, 3), dtype=np.float32), str(tmp_path / "z.npy"))


def test_non_finite_rejected(tmp_path):
    bad = np.array([1.0, np.nan], dtype=np.float32)
    with pytest.raises(errors.FormatError):
        tensor.write_tensor(bad, str(tmp_path / "nan.npy"))
    # also rejected when already on disk (crafted via raw bytes)
    path = str(tmp_path / "inf.npy")
    ok = np.array([1.0, 2.0], dtype=np.float32)
    tensor.write_tensor(ok, path)
    raw = bytearray(open(path, "rb").read())
    raw[-8:] = np.array([np.inf, 0.0], dtype="<f4").tobytes()
    open(path, "wb").write(bytes(raw))
    with pytest.raises(errors.FormatError):
        tensor.read_tensor(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(errors.IoError):
        tensor.read_tensor(str(tmp_path / "nope.npy"))


def test_read_tensor_shape_header_only(tmp_path, rng):
    t = rand_tensor(rng, 4)
    path = str(tmp_path / "h.npy")
    tensor.write_tensor(t, path)
    assert tensor.read_tensor_shape(path) == t.shape


@settings(max_examples=30)
@given(
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple),
    seed=st.integers(0, 2**31),
)
def test_round_trip_property(tmp_path_factory, shape, seed):
    t = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    path = str(tmp_path_factory.mktemp("rt") / "t.npy")
    tensor.write_tensor(t, path)
    back = tensor.read_tensor(path)
    assert back.shape == t.shape and back.tobytes() == t.tobytes()


def test_flatten_preserves_row_major_order():
    t = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
    flat = tensor.flatten_features(t)
    assert flat.shape == (2, 12)
    assert np.array_equal(flat[0], np.arange(12, dtype=np.float32))


def test_as_representation_padding():
    assert tensor.as_representation(np.zeros((4,), np.float32)).shape == (4, 1, 1, 1)
    assert tensor.as_representation(np.zeros((4, 3), np.float32)).shape == (4, 3, 1, 1)
    assert tensor.as_representation(np.zeros((4, 3, 2), np.float32)).shape == (4, 3, 2, 1)
    assert tensor.as_representation(np.zeros((4, 3, 2, 2), np.float32)).shape == (4, 3, 2, 2)
    with pytest.raises(errors.ShapeError):
        tensor.as_representation(np.zeros((1, 2, 3, 4, 5), np.float32))


def test_representation_set_invariants():
    good = {0: np.zeros((4, 2, 1, 1), np.float32), 1: np.ones((4, 3, 1, 1), np.float32)}
    assert tensor.RepresentationSet("m", good).n == 4
    with pytest.raises(errors.ShapeError):
        tensor.RepresentationSet("m", {0: np.zeros((4, 2, 1, 1), np.float32),
                                       1: np.zeros((5, 2, 1, 1), np.float32)})
    with pytest.raises(errors.ShapeError):
        tensor.RepresentationSet("m", {0: np.zeros((1, 2, 1, 1), np.float32)})


def test_dumps_round_trip(tmp_path, rng):
    reps = tensor.RepresentationSet(
        "m", {0: rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
              2: rng.standard_normal((4, 5, 1, 1)).astype(np.float32)}
    )
    index = tensor.write_dumps(reps, str(tmp_path))
    back = tensor.read_dumps(index)
    assert back.model == "m" and back.stage_ids == [0, 2] and back.n == 4
    for sid in back.stage_ids:
        assert back[sid].tobytes() == reps[sid].tobytes()
