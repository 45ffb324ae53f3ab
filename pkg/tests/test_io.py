"""Snapshot format, key=value configuration and report writers."""

import struct
from fractions import Fraction

import numpy as np
import pytest

from eulalpha import io
from eulalpha.spectral import Grid, SpectralField, StressField, random_band_limited


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestSnapshot:
    def test_roundtrip_vector_bit_identical(self, rng, tmp_path):
        g = Grid(2, 32)
        u = random_band_limited(g, 8, rng)
        path = io.save_snapshot(u, tmp_path / "u.eafs", time=0.25)
        snap = io.load_snapshot(path)
        assert snap.dim == 2 and snap.rank == 1
        assert snap.time == 0.25
        assert snap.resolution == (32, 32)
        assert snap.data.tobytes() == u.tobytes()

    def test_payload_size_3d(self, rng):
        g = Grid(3, 32)
        u = random_band_limited(g, 4, rng)
        buf = io.encode_snapshot(u)
        head = 4 + 3 * 4 + 3 * 4 + 8
        assert len(buf) - head == 3 * 32**3 * 8

    def test_stress_stored_as_full_tensor(self, rng):
        g = Grid(2, 16)
        R = StressField(g, rng.standard_normal((3, 16, 16)))
        snap = io.decode_snapshot(io.encode_snapshot(R))
        assert snap.rank == 2
        assert snap.data.shape == (2, 2, 16, 16)
        np.testing.assert_array_equal(snap.data, R.full())

    def test_scalar_field(self, rng):
        g = Grid(3, 16)
        f = SpectralField(g, rng.standard_normal((16, 16, 16)))
        snap = io.decode_snapshot(io.encode_snapshot(f, 1.5))
        assert snap.rank == 0 and snap.dim == 3
        assert snap.grid == g

    def test_header_layout(self):
        a = np.zeros((2, 8, 8))
        buf = io.encode_snapshot(a, 2.0)
        assert buf[:4] == b"EAFS"
        assert struct.unpack_from("<IIIII", buf, 4) == (1, 2, 1, 8, 8)
        assert struct.unpack_from("<d", buf, 24)[0] == 2.0

    @pytest.mark.parametrize(
        "mutate, msg",
        [
            (lambda b: b"XXXX" + b[4:], "bad magic"),
            (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "unsupported snapshot version"),
            (lambda b: b[:8] + struct.pack("<I", 4) + b[12:], "dim must be"),
            (lambda b: b[:12] + struct.pack("<I", 3) + b[16:], "rank must be"),
            (lambda b: b[:10], "truncated header"),
            (lambda b: b[:-8], "truncated payload"),
            (lambda b: b + b"\0" * 8, "trailing bytes"),
        ],
    )
    def test_malformed(self, mutate, msg):
        buf = io.encode_snapshot(np.ones((2, 8, 8)))
        with pytest.raises(io.SnapshotError, match=msg):
            io.decode_snapshot(mutate(buf))

    def test_uninferable_shape(self):
        with pytest.raises(io.SnapshotError):
            io.encode_snapshot(np.zeros((5, 7)))


class TestExperimentConfig:
    def test_defaults(self):
        cfg = io.ExperimentConfig()
        assert cfg.resolution == 128 and cfg.r == Fraction(1, 8)

    def test_parse(self):
        cfg = io.ExperimentConfig.parse("# comment\nresolution = 64\nlambda = 16  # trailing\nr = 1/4\nalpha=0.5\n")
        assert cfg.resolution == 64
        assert cfg.lam == 16
        assert cfg.r == Fraction(1, 4)
        assert cfg.alpha == 0.5
        assert cfg.explicit == {"resolution", "lam", "r", "alpha"}

    def test_text_roundtrip(self):
        cfg = io.ExperimentConfig(resolution=256, lam=8, r=Fraction(1, 2))
        again = io.ExperimentConfig.parse(cfg.text())
        assert (again.resolution, again.lam, again.r) == (256, 8, Fraction(1, 2))

    @pytest.mark.parametrize("text, msg", [
        ("colour = red", "unknown key"),
        ("resolution = -4", "must be positive"),
        ("dt = fast", "bad value"),
        ("no equals sign", "expected key = value"),
        ("seed = -1", "non-negative"),
    ])
    def test_rejects(self, text, msg):
        with pytest.raises(io.ConfigError, match=msg):
            io.ExperimentConfig.parse(text)

    def test_output_dir_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EAF_OUTPUT_DIR", str(tmp_path / "env"))
        assert io.resolve_output_dir(tmp_path / "cfg") == tmp_path / "env"
        monkeypatch.delenv("EAF_OUTPUT_DIR")
        assert io.resolve_output_dir(tmp_path / "cfg") == tmp_path / "cfg"


def test_fmt_round_trips_floats():
    x = 0.1 + 0.2
    assert float(io.fmt(x)) == x
    assert io.fmt(True) == "true"
    assert io.fmt(Fraction(3, 7)) == "3/7"


def test_emit_report(tmp_path):
    paths = io.emit_report(tmp_path, "demo", {"t": (("a", "b"), [(1, 0.5), (2, 0.25)])}, ["ok"])
    assert [p.name for p in paths] == ["demo_t.csv", "demo.txt"]
    head, rows = io.read_table(tmp_path / "demo_t.csv")
    assert head == ["a", "b"]
    assert rows == [["1", "0.5"], ["2", "0.25"]]
