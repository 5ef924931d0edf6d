import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simbridge.geometry import Box3D
from simbridge.pcdio import (REAL_CHANNELS, FormatError, PointCloud, decode_jpcd, encode_jpcd,
                             read_jpcd, read_labels, write_jpcd, write_labels)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.booleans(), st.integers(0, 2**32 - 1))
def test_jpcd_round_trip(n, real, seed):
    rng = np.random.default_rng(seed)
    ch = REAL_CHANNELS if real else ()
    c = PointCloud(rng.normal(size=(n, 3)) * 30, rng.uniform(size=(n, len(ch))), ch,
                   "real" if real else "sim")
    back = decode_jpcd(encode_jpcd(c))
    assert back.domain == c.domain and back.channels == c.channels
    assert np.array_equal(back.xyz, c.xyz) and np.array_equal(back.features, c.features)


def test_header_layout():
    c = PointCloud(np.ones((2, 3)), np.zeros((2, 2)), REAL_CHANNELS, "real")
    raw = encode_jpcd(c)
    assert raw[:4] == b"JPCD"
    assert raw[4:8] == (1).to_bytes(4, "little") and raw[8:12] == (2).to_bytes(4, "little")
    assert raw[12] == 2 and raw[13] == len("intensity")
    assert len(raw) == 13 + 1 + 9 + 1 + 9 + 2 * 5 * 4


def test_corrupt_files_rejected(tmp_path):
    raw = encode_jpcd(PointCloud(np.ones((3, 3))))
    with pytest.raises(FormatError):
        decode_jpcd(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        decode_jpcd(raw[:-1])
    p = tmp_path / "bad.jpcd"
    p.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="bad.jpcd"):
        read_jpcd(p)


def test_file_round_trip(tmp_path):
    c = PointCloud(np.arange(12.0).reshape(4, 3))
    write_jpcd(tmp_path / "a.jpcd", c)
    assert np.array_equal(read_jpcd(tmp_path / "a.jpcd").xyz, c.xyz)


def test_labels_round_trip(tmp_path):
    rows = [(0, Box3D((1, 2, 3), 4, 2, 1.5, 10, 0)), (2, Box3D((0, 0, 0), 1, 1, 1, 0, 3, 1.0, 2.0)),
            (0, Box3D((5, 5, 0), 1, 1, 1, 359, 2))]
    write_labels(tmp_path / "l.jsonl", rows)
    got = read_labels(tmp_path / "l.jsonl")
    assert got == {0: [rows[0][1], rows[2][1]], 2: [rows[1][1]]}


def test_malformed_label_reports_line(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text('{"scene_id": 0}\n')
    with pytest.raises(FormatError, match=":1:"):
        read_labels(p)


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.zeros((2, 1)), ())
