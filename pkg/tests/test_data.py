import numpy as np
import pytest

from linerec.ctc import LabelAlphabet
from linerec.data import (
    GLYPHS_7X5,
    Sample,
    SyntheticFontSpec,
    default_alphabet,
    generate_synthetic,
    load_dataset,
    read_pgm,
    render_line,
    save_dataset,
    write_pgm,
)
from linerec.errors import DataError
from linerec.numerics import stream_rng


class TestGlyphs:
    def test_ten_digits_present(self):
        assert sorted(GLYPHS_7X5) == [str(d) for d in range(10)]

    def test_uniform_bitmap_shape(self):
        for ch, rows in GLYPHS_7X5.items():
            assert len(rows) == 7, ch
            assert all(len(r) == 5 for r in rows), ch
            assert all(set(r) <= {"0", "1"} for r in rows), ch

    def test_glyphs_distinct(self):
        assert len({tuple(v) for v in GLYPHS_7X5.values()}) == 10


class TestFontSpec:
    def test_derived_sizes(self):
        spec = SyntheticFontSpec(scale=2, margin=1, jitter=1)
        assert spec.glyph_height == 14
        assert spec.glyph_width == 10
        assert spec.line_height == 14 + 2 * (1 + 1)

    def test_dict_round_trip(self):
        spec = SyntheticFontSpec(scale=3, noise=0.25)
        assert SyntheticFontSpec.from_dict(spec.to_dict()) == spec

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticFontSpec(scale=0)
        with pytest.raises(ValueError):
            SyntheticFontSpec(noise=-0.1)


class TestRenderLine:
    def test_shape_and_range(self):
        spec = SyntheticFontSpec(scale=1, noise=0.1)
        img = render_line("12", spec, stream_rng(0, "r"))
        assert img.shape[0] == spec.line_height
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_deterministic_under_stream(self):
        spec = SyntheticFontSpec(scale=1, noise=0.2)
        a = render_line("907", spec, stream_rng(1, "r"))
        b = render_line("907", spec, stream_rng(1, "r"))
        np.testing.assert_array_equal(a, b)

    def test_noise_free_render_is_binary_ink(self):
        spec = SyntheticFontSpec(scale=1, noise=0.0, jitter=0)
        img = render_line("1", spec, stream_rng(2, "r"))
        assert set(np.unique(img)) <= {0.0, 1.0}

    def test_quantized_to_pgm_grid(self):
        spec = SyntheticFontSpec(scale=1, noise=0.3)
        img = render_line("5", spec, stream_rng(3, "r"))
        np.testing.assert_array_equal(img, np.round(img * 255) / 255)

    def test_wider_text_wider_image(self):
        spec = SyntheticFontSpec(scale=1, jitter=0)
        a = render_line("1", spec, stream_rng(4, "r"))
        b = render_line("11", spec, stream_rng(4, "r"))
        assert b.shape[1] > a.shape[1]

    def test_whitespace_renders_as_gap(self):
        spec = SyntheticFontSpec(scale=1, noise=0.0, jitter=0)
        img = render_line("1 1", spec, stream_rng(5, "r"))
        assert img.shape[1] > 2 * spec.glyph_width


class TestGenerate:
    def test_char_mode_lengths_and_alphabet(self):
        a = LabelAlphabet("0123456789")
        spec = SyntheticFontSpec(scale=1)
        samples = generate_synthetic(20, a, (2, 4), spec, stream_rng(6, "g"))
        assert len(samples) == 20
        for s in samples:
            assert 2 <= len(s.transcript) <= 4
            assert all(ch in a for ch in s.transcript)
            assert s.sample_id.startswith("syn")

    def test_ids_unique_and_sorted(self):
        a = LabelAlphabet("01")
        spec = SyntheticFontSpec(scale=1)
        samples = generate_synthetic(11, a, (1, 1), spec, stream_rng(7, "g"))
        ids = [s.sample_id for s in samples]
        assert len(set(ids)) == 11
        assert ids == sorted(ids)

    def test_word_mode_uses_vocabulary(self):
        a = LabelAlphabet("0123456789 ")
        spec = SyntheticFontSpec(scale=1)
        vocab = ["12", "907", "3"]
        samples = generate_synthetic(
            15, a, (3, 9), spec, stream_rng(8, "g"), vocabulary=vocab
        )
        for s in samples:
            assert 3 <= len(s.transcript) <= 9
            for w in s.transcript.split(" "):
                assert w in vocab

    def test_deterministic(self):
        a = LabelAlphabet("0123456789")
        spec = SyntheticFontSpec(scale=1)
        s1 = generate_synthetic(5, a, (1, 3), spec, stream_rng(9, "g"))
        s2 = generate_synthetic(5, a, (1, 3), spec, stream_rng(9, "g"))
        for x, y in zip(s1, s2):
            assert x.transcript == y.transcript
            np.testing.assert_array_equal(x.image, y.image)

    def test_impossible_word_length_rejected(self):
        a = LabelAlphabet("0123456789 ")
        spec = SyntheticFontSpec(scale=1)
        with pytest.raises(ValueError):
            generate_synthetic(
                2, a, (1, 1), spec, stream_rng(10, "g"), vocabulary=["12345"]
            )


class TestPgm:
    def test_round_trip_bitwise(self, tmp_path):
        spec = SyntheticFontSpec(scale=1, noise=0.3)
        img = render_line("42", spec, stream_rng(11, "p"))
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        np.testing.assert_array_equal(back, img)

    def test_header_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        body = bytes([0, 128, 255, 64])
        path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + body)
        img = read_pgm(path)
        assert img.shape == (2, 2)
        assert img[0, 0] == 0.0
        assert img[0, 1] == pytest.approx(128 / 255)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(DataError):
            read_pgm(path)

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(DataError):
            read_pgm(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 2\n255\n\x00\x00")
        with pytest.raises(DataError):
            read_pgm(path)


class TestDatasetIo:
    def make_samples(self):
        spec = SyntheticFontSpec(scale=1, noise=0.1)
        a = LabelAlphabet("0123456789")
        return generate_synthetic(6, a, (1, 3), spec, stream_rng(12, "d")), a

    def test_save_load_round_trip(self, tmp_path):
        samples, a = self.make_samples()
        save_dataset(samples, tmp_path)
        result = load_dataset(tmp_path / "images", tmp_path / "transcripts.tsv", a)
        assert result.rejected == []
        assert len(result.samples) == len(samples)
        for got, want in zip(result.samples, samples):
            assert got.sample_id == want.sample_id
            assert got.transcript == want.transcript
            np.testing.assert_array_equal(got.image, want.image)

    def test_out_of_alphabet_lines_rejected_not_fatal(self, tmp_path):
        samples, a = self.make_samples()
        save_dataset(samples, tmp_path)
        tsv = tmp_path / "transcripts.tsv"
        first_file = tsv.read_text().split("\n")[0].split("\t")[0]
        lines = tsv.read_text().rstrip("\n").split("\n")
        lines[0] = f"{first_file}\tbad?"
        tsv.write_text("\n".join(lines) + "\n")
        result = load_dataset(tmp_path / "images", tsv, a)
        assert len(result.rejected) == 1
        assert result.rejected[0][0] == first_file
        assert len(result.samples) == len(samples) - 1

    def test_missing_image_is_fatal(self, tmp_path):
        samples, a = self.make_samples()
        save_dataset(samples, tmp_path)
        tsv = tmp_path / "transcripts.tsv"
        tsv.write_text(tsv.read_text() + "ghost.pgm\t1\n")
        with pytest.raises(DataError):
            load_dataset(tmp_path / "images", tsv, a)

    def test_malformed_line_is_fatal(self, tmp_path):
        samples, a = self.make_samples()
        save_dataset(samples, tmp_path)
        tsv = tmp_path / "transcripts.tsv"
        tsv.write_text(tsv.read_text() + "no-tab-here\n")
        with pytest.raises(DataError):
            load_dataset(tmp_path / "images", tsv, a)

    def test_missing_transcript_file_is_fatal(self, tmp_path):
        _, a = self.make_samples()
        with pytest.raises((DataError, OSError)):
            load_dataset(tmp_path / "images", tmp_path / "none.tsv", a)


def test_default_alphabet_contents():
    assert default_alphabet().labels == tuple("0123456789 ")
    assert default_alphabet(with_space=False).labels == tuple("0123456789")


def test_sample_holds_float_image():
    s = Sample("id0", np.zeros((2, 2)), "7")
    assert s.image.dtype == np.float64
