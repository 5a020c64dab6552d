import json

import numpy as np
import pytest

from ulf_emi.errors import InvalidInputError
from ulf_emi.io import (
    load_image,
    read_kspace,
    read_pgm,
    write_columns_csv,
    write_complex_csv,
    write_kspace,
    write_pgm,
)
from ulf_emi.kspace import KSpaceMatrix


def test_kspace_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    k = KSpaceMatrix(rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16)), 2e-5, "saddle")
    write_kspace(tmp_path / "a.ksp", k, seed=42, config_hash="abc", condition="raw")
    back, header = read_kspace(tmp_path / "a.ksp")
    assert np.array_equal(back.data, k.data)
    assert back.dwell == 2e-5 and back.channel == "saddle"
    assert header["dims"] == [8, 16] and header["seed"] == 42 and header["format_version"] == 1
    assert header["condition"] == "raw"


def test_kspace_layout(tmp_path):
    k = KSpaceMatrix(np.array([[1 + 2j, 3 + 4j], [5 + 6j, 7 + 8j]]), 1e-5)
    write_kspace(tmp_path / "a.ksp", k)
    raw = (tmp_path / "a.ksp").read_bytes()
    body = raw[raw.index(b"\n") + 1:]
    assert len(body) == 16 * 4
    # little-endian (re, im) pairs, readout index fastest
    assert np.frombuffer(body, "<f8").tolist() == [1, 2, 3, 4, 5, 6, 7, 8]


def test_kspace_payload_length_checked(tmp_path):
    k = KSpaceMatrix(np.ones((4, 4), complex), 1e-5)
    write_kspace(tmp_path / "a.ksp", k)
    raw = (tmp_path / "a.ksp").read_bytes()
    (tmp_path / "b.ksp").write_bytes(raw[:-8])
    with pytest.raises(InvalidInputError):
        read_kspace(tmp_path / "b.ksp")
    head = json.loads(raw[:raw.index(b"\n")])
    head["format_version"] = 99
    (tmp_path / "c.ksp").write_bytes(json.dumps(head).encode() + raw[raw.index(b"\n"):])
    with pytest.raises(InvalidInputError):
        read_kspace(tmp_path / "c.ksp")


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip(tmp_path, maxval):
    img = np.arange(12, dtype=float).reshape(3, 4) * (maxval // 11)
    write_pgm(tmp_path / "a.pgm", img, maxval=maxval, scale=float(maxval))
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (3, 4)
    assert np.array_equal(back, img)
    assert np.array_equal(load_image(tmp_path / "a.pgm"), img)


def test_pgm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# depth\n255\n\x05\xff")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[5.0, 255.0]]
    (tmp_path / "d.pgm").write_bytes(b"P2\n2 1\n255\n5 6\n")
    with pytest.raises(InvalidInputError):
        read_pgm(tmp_path / "d.pgm")


def test_csv_outputs(tmp_path):
    np.savetxt(tmp_path / "p.csv", np.eye(3), delimiter=",")
    assert np.array_equal(load_image(tmp_path / "p.csv"), np.eye(3))
    write_columns_csv(tmp_path / "c.csv", {"a": [1, 2], "b": [0.5, 0.25]})
    assert (tmp_path / "c.csv").read_text().splitlines() == ["a,b", "1.0,0.5", "2.0,0.25"]
    write_complex_csv(tmp_path / "z.csv", np.array([[1 + 2j]]))
    assert (tmp_path / "z.csv").read_text().splitlines()[1] == "0,0,1.0,2.0"
    with pytest.raises(InvalidInputError):
        load_image(tmp_path / "z.txt")
