import numpy as np
import pytest

from baa.data_io import (Manifest, ManifestEntry, ManifestError, PgmError, ShapeConfig, boundary_map,
                         encode_pgm, gen_synthetic, load_dataset, load_manifest, load_pgm, parse_pgm, render_sample,
                         save_manifest, save_pgm, write_dataset)


def test_single_rectangle_boundary_is_perimeter():
    labels = np.zeros((10, 12), int)
    labels[2:7, 3:9] = 1
    edge = boundary_map(labels)
    expected = np.zeros_like(edge)
    expected[2:7, 3:9] = True
    expected[3:6, 4:8] = False
    np.testing.assert_array_equal(edge, expected)


def test_noise_free_rectangle_sample_matches_perimeter():
    cfg = ShapeConfig(min_shapes=1, max_shapes=1, noise_sigma=0.0, kinds=("rect",))
    s = gen_synthetic(3, 1, 24, cfg)[0]
    inside = s.image > s.image.min()  # shapes are brighter than the background
    assert inside.any()
    np.testing.assert_array_equal(s.gt.astype(bool), boundary_map(inside.astype(int)))


def test_generator_is_deterministic():
    a = gen_synthetic(5, 4, 20)
    b = gen_synthetic(5, 4, 20)
    for x, y in zip(a, b):
        assert x.id == y.id
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.gt, y.gt)


def test_generator_class_imbalance():
    samples = gen_synthetic(0, 50, 32)
    frac = np.mean([s.gt.mean() for s in samples])
    assert 0.01 <= frac <= 0.25
    assert all(s.image.min() >= 0 and s.image.max() <= 1 for s in samples)


def test_generator_validates():
    with pytest.raises(ValueError):
        gen_synthetic(0, 1, 8)
    with pytest.raises(ValueError):
        gen_synthetic(0, 0, 32)
    with pytest.raises(ValueError):
        gen_synthetic(0, 1, 32, ShapeConfig(noise_sigma=-1))


def test_render_any_polarity_keeps_contrast():
    rng = np.random.default_rng(0)
    img, labels = render_sample(rng, 32, ShapeConfig(polarity="any", noise_sigma=0))
    assert labels.max() >= 1 and img.shape == (32, 32)


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip_bound(tmp_path, maxval):
    grid = np.random.default_rng(1).uniform(size=(7, 9))
    path = tmp_path / "a.pgm"
    save_pgm(path, grid, maxval=maxval)
    back = load_pgm(path)
    assert back.shape == grid.shape
    assert np.max(np.abs(back - grid)) <= 1 / (2 * maxval) + 1e-15


def test_pgm_lossless_for_quantized(tmp_path):
    grid = np.random.default_rng(2).integers(0, 256, size=(5, 6)) / 255
    for ascii in (False, True):
        save_pgm(tmp_path / "q.pgm", grid, ascii=ascii)
        np.testing.assert_array_equal(load_pgm(tmp_path / "q.pgm"), grid)


def test_p2_with_comments():
    data = b"P2\n# a comment\n2 1\n255\n128 0\n"
    grid, maxval = parse_pgm(data)
    assert maxval == 255
    assert grid[0, 0] == 128 / 255 and grid[0, 1] == 0


def test_p5_sixteen_bit_is_big_endian():
    data = b"P5 1 1 65535\n" + bytes([0x01, 0x00])
    grid, _ = parse_pgm(data)
    assert grid[0, 0] == 256 / 65535


@pytest.mark.parametrize(
    "data, offset",
    [
        (b"P7\n1 1\n255\n\x00", 0),
        (b"P5\n2 2\n255\n\x00\x00", 11),
        (b"P2\n2 x\n255\n", 5),
        (b"P2\n1 1\n70000\n1", 7),
        (b"P2\n2 1\n255\n7", 12),
    ],
)
def test_pgm_errors_carry_offsets(data, offset):
    with pytest.raises(PgmError) as err:
        parse_pgm(data)
    assert err.value.offset == offset
    assert "offset" in str(err.value)


def test_unsupported_magic_message():
    with pytest.raises(PgmError, match="unsupported magic"):
        parse_pgm(b"P7\n1 1\n255\n\x00")


def test_encode_is_stable():
    g = np.linspace(0, 1, 12).reshape(3, 4)
    assert encode_pgm(g) == encode_pgm(g.copy())
    assert encode_pgm(g).startswith(b"P5\n4 3\n255\n")


def _write_pair(tmp_path, name):
    save_pgm(tmp_path / f"{name}_i.pgm", np.zeros((2, 2)))
    save_pgm(tmp_path / f"{name}_g.pgm", np.eye(2) * 0.8)


def test_manifest_round_trip(tmp_path):
    for n in "abc":
        _write_pair(tmp_path, n)
    entries = [ManifestEntry(n, tmp_path / f"{n}_i.pgm", tmp_path / f"{n}_g.pgm") for n in "abc"]
    save_manifest(tmp_path / "m.csv", Manifest(entries))
    m = load_manifest(tmp_path / "m.csv")
    assert m.ids == ["a", "b", "c"] and m.version == 1
    samples = load_dataset(m)
    assert len(samples) == 3
    np.testing.assert_array_equal(samples[0].gt, np.eye(2))


def test_manifest_relative_paths(tmp_path):
    _write_pair(tmp_path, "a")
    (tmp_path / "m.csv").write_text("id,image,gt\na,a_i.pgm,a_g.pgm\n")
    assert load_manifest(tmp_path / "m.csv").entries[0].image == tmp_path / "a_i.pgm"


def test_manifest_duplicate_id(tmp_path):
    _write_pair(tmp_path, "a")
    (tmp_path / "m.csv").write_text("id,image,gt\na,a_i.pgm,a_g.pgm\na,a_i.pgm,a_g.pgm\n")
    with pytest.raises(ManifestError, match="duplicate id 'a'"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_empty_and_bad_header(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ManifestError, match="missing header"):
        load_manifest(tmp_path / "e.csv")
    (tmp_path / "b.csv").write_text("name,image,gt\n")
    with pytest.raises(ManifestError, match="bad header"):
        load_manifest(tmp_path / "b.csv")


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.csv").write_text("id,image,gt\na,nope.pgm,nope.pgm\n")
    with pytest.raises(ManifestError, match="missing file"):
        load_manifest(tmp_path / "m.csv")


def test_written_dataset_is_byte_reproducible(tmp_path):
    samples = gen_synthetic(9, 3, 16)
    write_dataset(tmp_path / "a", samples)
    write_dataset(tmp_path / "b", gen_synthetic(9, 3, 16))
    for rel in ["manifest.csv", "images/s0000.pgm", "gt/s0002.pgm"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    loaded = load_dataset(load_manifest(tmp_path / "a" / "manifest.csv"))
    assert all(set(np.unique(s.gt)) <= {0.0, 1.0} for s in loaded)
