import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvsplat.config import Config, parse_config, serialize_config
from uvsplat.errors import FormatError
from uvsplat.formats.atl import read_atl, write_atl
from uvsplat.formats.imgio import read_pgm, read_ppm, write_pgm, write_ppm
from uvsplat.formats.points import write_points


@given(dims=st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
       seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_atl_roundtrip_bit_exact(tmp_path_factory, dims, seed):
    path = tmp_path_factory.mktemp("atl") / "t.atl"
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(dims).astype(np.float32)
    write_atl(path, data)
    back = read_atl(path)
    assert back.shape == tuple(dims)
    assert back.dtype == np.float32
    assert np.array_equal(back, data)


def test_atl_byte_layout(tmp_path):
    path = tmp_path / "t.atl"
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    n = write_atl(path, data)
    blob = path.read_bytes()
    assert n == len(blob) == 5 + 4 * 2 + 4 * 6
    assert blob[:4] == b"ATL1"
    assert blob[4] == 2
    assert int.from_bytes(blob[5:9], "little") == 2
    assert int.from_bytes(blob[9:13], "little") == 3
    # row-major, last dim fastest
    assert np.frombuffer(blob, dtype="<f4", offset=13)[1] == 1.0


def test_atl_rejects_garbage(tmp_path):
    p = tmp_path / "bad.atl"
    p.write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        read_atl(p)
    p.write_bytes(b"ATL1" + bytes([1]) + (7).to_bytes(4, "little") + b"\0" * 8)
    with pytest.raises(FormatError):
        read_atl(p)


def test_config_roundtrip_identity():
    cfg = Config(k=64, lambda_3d=12.5, include_vertices=False, seed=9)
    text = serialize_config(cfg)
    assert parse_config(serialize_config(parse_config(text))) == parse_config(text)
    assert parse_config(text) == cfg


def test_config_defaults_match_reference_operating_point():
    cfg = Config()
    assert cfg.k == 256
    assert cfg.window == 7
    assert cfg.scales == 4
    assert cfg.epsilon == 0.1
    assert (cfg.lambda_3d, cfg.lambda_eye, cfg.lambda_pos, cfg.lambda_shape,
            cfg.lambda_shape_tv) == (50.0, 5.0, 1.0, 1.0, 10.0)


def test_config_unknown_key_rejected():
    with pytest.raises(FormatError) as err:
        parse_config("k = 32\nbogus_key = 1\n")
    assert "line 2" in str(err.value)
    assert "bogus_key" in str(err.value)


def test_config_comments_and_malformed():
    cfg = parse_config("# comment\nk = 32  # trailing\n")
    assert cfg.k == 32
    with pytest.raises(FormatError):
        parse_config("k : 32\n")
    with pytest.raises(FormatError):
        parse_config("k = many\n")


def test_ppm_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.uniform(0, 1, (5, 7, 3))
    write_ppm(tmp_path / "x.ppm", rgb)
    back = read_ppm(tmp_path / "x.ppm")
    assert back.shape == (5, 7, 3)
    assert np.abs(back - rgb).max() <= 0.5 / 255 + 1e-9

    gray = rng.uniform(0, 1, (4, 6))
    write_pgm(tmp_path / "x.pgm", gray)
    back = read_pgm(tmp_path / "x.pgm")
    assert np.abs(back - gray).max() <= 0.5 / 255 + 1e-9


def test_ppm_quantization_is_srgb_naive(tmp_path):
    img = np.full((1, 1, 3), 0.5)
    write_ppm(tmp_path / "q.ppm", img)
    blob = (tmp_path / "q.ppm").read_bytes()
    assert blob.endswith(bytes([128, 128, 128]))


def test_points_export(tmp_path, head_mesh, head_atlas_32):
    from uvsplat.gsmap import AttributeMaps, default_sample_grid, sample_gaussians
    grid = default_sample_grid(head_atlas_32, dense=(8, 8), hair=None,
                               include_vertices=False)
    g = sample_gaussians(AttributeMaps.zeros(32), head_atlas_32, grid,
                         head_mesh.vertices).gaussians
    n = write_points(tmp_path / "pts.txt", g)
    lines = (tmp_path / "pts.txt").read_text().strip().splitlines()
    assert len(lines) == n == len(g)
    assert len(lines[0].split()) == 14
