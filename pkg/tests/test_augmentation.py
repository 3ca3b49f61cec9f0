import math

import numpy as np
import pytest

from envspoof.augmentation import (
    GriffinLimConfig,
    GriffinLimResynthesizer,
    ResynthesisError,
    augment_manifest,
    copy_synthesis,
    griffin_lim,
    mel_to_magnitude,
)
from envspoof.frontend import (
    MelConfig,
    MelSpec,
    Waveform,
    fix_duration,
    load_waveform,
    mel_spectrogram,
    save_waveform,
    stft,
)
from envspoof.manifest import ManifestRow

SR = 16000
CFG = MelConfig()


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return Waveform(amp * np.sin(2 * np.pi * freq * t), SR)


class CachedSource:
    """Test resynthesizer that hands back the waveform it was built with."""

    name = "identity"

    def __init__(self, w):
        self.w = w

    def __call__(self, mel):
        return self.w


class Broken:
    name = "broken"

    def __call__(self, mel):
        raise RuntimeError("boom")


class TestGriffinLim:
    def test_monotone_distance(self):
        rng = np.random.default_rng(0)
        w = Waveform(rng.standard_normal(8000) * 0.1, SR)
        hist = []
        griffin_lim(mel_spectrogram(w, CFG), GriffinLimConfig(30, seed=1), hist)
        assert len(hist) == 30
        assert all(b <= a * (1 + 1e-9) for a, b in zip(hist, hist[1:]))
        assert hist[-1] < hist[0]

    def test_floor_gives_silence(self):
        m = MelSpec(np.full((98, 128), math.log(1e-10)), CFG)
        out = griffin_lim(m, GriffinLimConfig(5))
        assert np.sqrt(np.mean(out.samples**2)) < 1e-3

    @pytest.mark.parametrize("freq", [440.0, 1000.0, 3000.0])
    def test_dominant_stft_bin(self, freq):
        w = tone(freq)
        out = griffin_lim(mel_spectrogram(w, CFG), GriffinLimConfig(30))
        src_bin = np.argmax(np.abs(stft(w.samples, CFG)).mean(0))
        out_bin = np.argmax(np.abs(stft(out.samples, CFG)).mean(0))
        assert src_bin == out_bin

    def test_deterministic(self):
        m = mel_spectrogram(tone(700.0, 0.3), CFG)
        a = griffin_lim(m, GriffinLimConfig(4, seed=3)).samples
        b = griffin_lim(m, GriffinLimConfig(4, seed=3)).samples
        np.testing.assert_array_equal(a, b)

    def test_zero_phase_init(self):
        m = mel_spectrogram(tone(700.0, 0.3), CFG)
        out = griffin_lim(m, GriffinLimConfig(2, init_phase="zero"))
        assert np.all(np.isfinite(out.samples))

    def test_bad_iterations(self):
        with pytest.raises(ValueError):
            griffin_lim(mel_spectrogram(tone(500.0, 0.1), CFG), GriffinLimConfig(0))

    def test_magnitude_nonnegative(self):
        m = mel_spectrogram(Waveform(np.random.default_rng(2).standard_normal(4000), SR), CFG)
        assert (mel_to_magnitude(m) >= 0).all()


class TestCopySynthesis:
    def test_identity_resynth(self):
        w = tone(440.0)
        out = copy_synthesis(w, CachedSource(w), CFG)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_gl_preserves_dominant_mel_bin(self):
        w = tone(440.0)
        out = copy_synthesis(w, GriffinLimResynthesizer(), CFG)
        src = np.argmax(mel_spectrogram(w, CFG).values.mean(0))
        dst = np.argmax(mel_spectrogram(out, CFG).values.mean(0))
        assert src == dst

    def test_silence(self):
        out = copy_synthesis(Waveform(np.zeros(SR), SR), GriffinLimResynthesizer(), CFG)
        assert np.sqrt(np.mean(out.samples**2)) < 1e-3

    def test_length_after_fix(self):
        w = tone(440.0, 4.0)
        out = fix_duration(copy_synthesis(w, GriffinLimResynthesizer(GriffinLimConfig(2)), CFG), 4.0)
        assert len(out) == len(w) and out.sample_rate == SR

    def test_failure_names_utterance(self):
        with pytest.raises(ResynthesisError, match="utt42"):
            copy_synthesis(tone(440.0, 0.1), Broken(), CFG, "utt42")


@pytest.fixture
def bona_manifest(tmp_path):
    rows = []
    rng = np.random.default_rng(0)
    for i in range(6):
        path = tmp_path / f"b{i}.wav"
        save_waveform(path, Waveform(rng.standard_normal(4000) * 0.1, SR))
        rows.append(ManifestRow(f"b{i}", f"b{i}.wav", "bonafide", "-"))
    rows.append(ManifestRow("s0", "b0.wav", "spoof", "tta"))
    return rows, tmp_path


FAST = GriffinLimConfig(2)


class TestAugmentManifest:
    def run(self, rows, base, resynths, ratio, seed=0, out="aug"):
        return augment_manifest(rows, resynths, ratio, seed, base / out, CFG, 0.25, base)

    def test_ratio_zero(self, bona_manifest):
        rows, base = bona_manifest
        assert self.run(rows, base, [GriffinLimResynthesizer(FAST)], 0.0) == rows

    def test_ratio_one_counts(self, bona_manifest):
        rows, base = bona_manifest
        out = self.run(rows, base, [GriffinLimResynthesizer(FAST)], 1.0)
        assert out[: len(rows)] == rows
        new = out[len(rows) :]
        assert len(new) == 6
        assert all(r.label == "spoof" and r.attack_tag == "gl" for r in new)
        for r in new:
            w = load_waveform(base / r.path)
            assert len(w) == 4000

    def test_round_robin(self, bona_manifest):
        rows, base = bona_manifest
        rs = [GriffinLimResynthesizer(FAST, "gl_a"), GriffinLimResynthesizer(FAST, "gl_b")]
        new = self.run(rows, base, rs, 1.0)[len(rows) :]
        tags = [r.attack_tag for r in new]
        assert tags.count("gl_a") == tags.count("gl_b") == 3

    def test_partial_ratio_and_determinism(self, bona_manifest):
        rows, base = bona_manifest
        a = self.run(rows, base, [GriffinLimResynthesizer(FAST)], 0.5, seed=3, out="a")
        b = self.run(rows, base, [GriffinLimResynthesizer(FAST)], 0.5, seed=3, out="b")
        assert len(a) == len(rows) + 3
        assert [r.utt_id for r in a] == [r.utt_id for r in b]
        for ra, rb in zip(a[len(rows) :], b[len(rows) :]):
            assert (base / ra.path).read_bytes() == (base / rb.path).read_bytes()

    def test_bad_ratio(self, bona_manifest):
        rows, base = bona_manifest
        with pytest.raises(ValueError):
            self.run(rows, base, [GriffinLimResynthesizer(FAST)], 1.5)

    def test_unwritable(self, bona_manifest):
        rows, base = bona_manifest
        blocker = base / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            augment_manifest(rows, [GriffinLimResynthesizer(FAST)], 1.0, 0, blocker / "sub", CFG, 0.25, base)
