"""WAV I/O, synthesis, config parsing, dataset plumbing, and CLI tests."""

import numpy as np
import pytest
from scipy.io import wavfile
from scipy.ndimage import median_filter

from hpsep import cli
from hpsep.audio_io import AudioError, read_wav, write_wav
from hpsep.config import (
    ConfigError,
    load_run_config,
    load_synth_spec,
    parse_config_text,
    RUN_SCHEMA,
)
from hpsep.data import (
    SynthSpec,
    Track,
    load_dataset,
    read_manifest,
    synth_track,
    write_dataset,
)
from hpsep.dsp import stft
from hpsep.network import MaskSeparator, NetworkConfig, save_checkpoint
from hpsep.dsp import GlobalStats
from hpsep.pipeline import separate_samples


class TestWavIO:
    def test_float32_roundtrip_bit_exact(self, tmp_path):
        path = tmp_path / "z.wav"
        samples = np.zeros(44100)
        write_wav(path, samples)
        back, rate = read_wav(path)
        assert rate == 44100
        np.testing.assert_array_equal(back, samples)

        noisy = np.random.default_rng(0).normal(size=2048).astype(np.float32)
        write_wav(path, noisy.astype(np.float64))
        back, _ = read_wav(path)
        np.testing.assert_array_equal(back, noisy.astype(np.float64))

    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "sq.wav"
        square = np.tile(np.array([32767, -32767], dtype=np.int16), 100)
        wavfile.write(path, 44100, square)
        samples, _ = read_wav(path)
        expected = 32767.0 / 32768.0
        np.testing.assert_allclose(np.unique(samples), [-expected, expected])

    def test_stereo_downmix_is_channel_mean(self, tmp_path):
        path = tmp_path / "st.wav"
        left = np.linspace(-0.5, 0.5, 500, dtype=np.float32)
        right = np.full(500, 0.25, dtype=np.float32)
        wavfile.write(path, 44100, np.stack([left, right], axis=1))
        samples, _ = read_wav(path)
        np.testing.assert_allclose(samples, (left.astype(np.float64) + 0.25) / 2.0)

    def test_identical_channels_downmix_to_either(self, tmp_path):
        path = tmp_path / "dup.wav"
        mono = np.random.default_rng(1).normal(size=300).astype(np.float32) * 0.1
        wavfile.write(path, 44100, np.stack([mono, mono], axis=1))
        samples, _ = read_wav(path)
        np.testing.assert_allclose(samples, mono.astype(np.float64))

    def test_wrong_rate_rejected_unless_allowed(self, tmp_path):
        path = tmp_path / "r.wav"
        wavfile.write(path, 48000, np.zeros(100, dtype=np.float32))
        with pytest.raises(AudioError, match="48000"):
            read_wav(path)
        _, rate = read_wav(path, allow_other_rate=True)
        assert rate == 48000

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not RIFF data at all........")
        with pytest.raises(AudioError, match="cannot read"):
            read_wav(path)

    def test_unsupported_codec_rejected(self, tmp_path):
        path = tmp_path / "i32.wav"
        wavfile.write(path, 44100, np.zeros(64, dtype=np.int32))
        with pytest.raises(AudioError, match="unsupported sample format"):
            read_wav(path)

    def test_write_rejects_non_mono(self, tmp_path):
        with pytest.raises(AudioError, match="non-mono"):
            write_wav(tmp_path / "x.wav", np.zeros((10, 2)))

    def test_write_rejects_non_finite(self, tmp_path):
        with pytest.raises(AudioError, match="non-finite"):
            write_wav(tmp_path / "x.wav", np.array([0.0, np.nan]))


def quick_spec(**overrides):
    base = dict(n_tracks=2, duration_s=1.6, voices=2, partials=4)
    base.update(overrides)
    return SynthSpec(**base)


class TestSynthesis:
    def test_deterministic_per_seed_pair(self):
        a = synth_track(quick_spec(), 3)
        b = synth_track(quick_spec(), 3)
        np.testing.assert_array_equal(a.mixture, b.mixture)
        np.testing.assert_array_equal(a.stems["drums"], b.stems["drums"])
        c = synth_track(quick_spec(), 4)
        assert not np.array_equal(a.mixture, c.mixture)
        d = synth_track(quick_spec(seed=9), 3)
        assert not np.array_equal(a.mixture, d.mixture)

    def test_mixture_is_exact_stem_sum_and_peak_bounded(self):
        track = synth_track(quick_spec(), 0)
        np.testing.assert_array_equal(
            track.mixture, track.stems["drums"] + track.stems["harmonic_rest"]
        )
        assert np.max(np.abs(track.mixture)) <= 0.9
        assert np.max(np.abs(track.mixture)) > 0.5  # normalization actually ran

    def test_zero_percussive_gain_leaves_pure_harmonic_mixture(self):
        track = synth_track(quick_spec(gain_perc=0.0), 1)
        np.testing.assert_array_equal(track.stems["drums"], 0.0)
        np.testing.assert_array_equal(track.mixture, track.stems["harmonic_rest"])

    def test_aliasing_spec_rejected(self):
        with pytest.raises(ValueError, match="alias"):
            SynthSpec(f0_max_hz=4000.0, partials=8)

    def test_invariants_validated(self):
        with pytest.raises(ValueError):
            SynthSpec(onset_rate_hz=0.0)
        with pytest.raises(ValueError):
            SynthSpec(n_tracks=0)
        with pytest.raises(ValueError):
            SynthSpec(band_emphasis=1.5)

    def test_stem_orientation_in_spectrogram(self):
        # harmonic energy should survive a median along time, percussive
        # a median along frequency; each stem must win its own direction
        track = synth_track(quick_spec(duration_s=3.0), 2)
        for name, sign in (("harmonic_rest", 1.0), ("drums", -1.0)):
            power = np.abs(stft(track.stems[name]).values[:512]) ** 2
            along_time = median_filter(power, size=(1, 17), mode="reflect").sum()
            along_freq = median_filter(power, size=(17, 1), mode="reflect").sum()
            assert sign * (along_time - along_freq) > 0.0, name

    def test_track_validation(self):
        good = synth_track(quick_spec(), 0)
        with pytest.raises(ValueError, match="not the sum"):
            Track(id="bad", mixture=good.mixture * 1.5, stems=good.stems,
                  duration_s=good.duration_s)
        with pytest.raises(ValueError, match="stems"):
            Track(id="bad", mixture=good.mixture,
                  stems={"drums": good.stems["drums"]}, duration_s=good.duration_s)


class TestDatasetIO:
    def test_write_then_load_roundtrip(self, tmp_path):
        tracks = [synth_track(quick_spec(), i) for i in range(2)]
        manifest = write_dataset(tracks, tmp_path / "ds")
        rows = read_manifest(manifest)
        assert [r[0] for r in rows] == ["track000", "track001"]
        assert rows[0][2] == 0 and rows[1][2] == 1
        loaded = load_dataset(tmp_path / "ds")
        assert [tid for tid, _, _ in loaded] == ["track000", "track001"]
        for (tid, mixture, drums), track in zip(loaded, tracks):
            assert len(mixture) == len(track.mixture)
            # float32 storage quantizes the float64 stems
            np.testing.assert_allclose(mixture, track.mixture, atol=1e-6)
            np.testing.assert_allclose(drums, track.stems["drums"], atol=1e-6)

    def test_musdb_wav_layout_scan(self, tmp_path):
        tracks = [synth_track(quick_spec(), i) for i in range(2)]
        write_dataset(tracks, tmp_path / "ds")
        (tmp_path / "ds" / "manifest.tsv").unlink()
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_dataset(tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds", layout="musdb-wav")
        assert len(loaded) == 2

    def test_unknown_layout_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="layout"):
            load_dataset(tmp_path, layout="flac")


class TestConfig:
    def test_parse_basics(self):
        text = "# comment\n\n a = 1 \nb=2.5\n"
        values = parse_config_text(text, {"a", "b"})
        assert values == {"a": "1", "b": "2.5"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key 'lr'"):
            parse_config_text("lr = 3", RUN_SCHEMA.keys())

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2", RUN_SCHEMA.keys())

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("growth_rate 4", RUN_SCHEMA.keys())

    def test_shipped_default_loads(self):
        net_cfg, train_cfg = load_run_config(None)
        assert net_cfg.growth_rate == 10
        assert net_cfg.depth == 4
        assert train_cfg.lr0 == 1e-3
        assert train_cfg.plateau_patience == 3
        assert train_cfg.stop_patience == 15

    def test_partial_override_keeps_other_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("growth_rate = 2\nmax_epochs = 1\n")
        net_cfg, train_cfg = load_run_config(path)
        assert net_cfg.growth_rate == 2
        assert net_cfg.depth == 4
        assert train_cfg.max_epochs == 1

    def test_bad_value_type_reported(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("growth_rate = fast\n")
        with pytest.raises(ConfigError, match="growth_rate"):
            load_run_config(path)

    def test_invalid_combination_reported_as_config_error(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("plateau_factor = 1.5\n")
        with pytest.raises(ConfigError, match="plateau_factor"):
            load_run_config(path)

    def test_synth_spec_loads(self, tmp_path):
        path = tmp_path / "synth.cfg"
        path.write_text("n_tracks = 3\nduration_s = 2.0\nseed = 4\n")
        spec = load_synth_spec(path)
        assert (spec.n_tracks, spec.duration_s, spec.seed) == (3, 2.0, 4)
        assert spec.partials == SynthSpec().partials


def small_checkpoint(tmp_path):
    cfg = NetworkConfig(growth_rate=1, layers_per_block=1, depth=1,
                        final_block_layers=1)
    model = MaskSeparator(cfg, seed=0)
    stats = GlobalStats(min_val=0.0, max_val=3.0)
    path = tmp_path / "tiny.ckpt"
    save_checkpoint(path, cfg, stats, model.store)
    return model, stats, path


class TestPipeline:
    def test_output_lengths_match_input(self, tmp_path):
        model, stats, _ = small_checkpoint(tmp_path)
        for n in (44100, 44100 + 311, 66150):
            samples = np.random.default_rng(n).normal(size=n) * 0.1
            perc, harm = separate_samples(model, stats, samples)
            assert len(perc) == n and len(harm) == n

    def test_outputs_are_finite_and_bounded_by_mixture_scale(self, tmp_path):
        model, stats, _ = small_checkpoint(tmp_path)
        samples = np.random.default_rng(5).normal(size=50000) * 0.2
        perc, harm = separate_samples(model, stats, samples)
        assert np.all(np.isfinite(perc)) and np.all(np.isfinite(harm))
        # masks are in (0,1): each estimate carries less energy than the input
        assert np.sum(perc**2) < np.sum(samples**2)
        assert np.sum(harm**2) < np.sum(samples**2)


def write_synth_cfg(path, n_tracks=2, duration_s=1.6):
    path.write_text(
        f"n_tracks = {n_tracks}\nduration_s = {duration_s}\n"
        "voices = 2\npartials = 4\nseed = 1\n"
    )
    return path


def write_run_cfg(path, max_epochs=1):
    path.write_text(
        "growth_rate = 1\nlayers_per_block = 1\ndepth = 1\nfinal_block_layers = 1\n"
        f"batch_size = 4\nmax_epochs = {max_epochs}\nseed = 0\n"
    )
    return path


class TestCli:
    def test_usage_errors_exit_2(self, capsys):
        assert cli.main([]) == 2
        assert cli.main(["separate"]) == 2
        assert cli.main(["no-such-command"]) == 2
        capsys.readouterr()

    def test_module_errors_exit_1(self, tmp_path, capsys):
        rc = cli.main(["param-count", "--config", str(tmp_path / "missing.cfg")])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_param_count_default_config(self, capsys):
        assert cli.main(["param-count"]) == 0
        printed = int(capsys.readouterr().out.strip())
        assert 550_000 <= printed <= 610_000

    def test_gen_data_then_train_then_separate_then_eval(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        spec_path = write_synth_cfg(tmp_path / "synth.cfg")
        assert cli.main(["gen-data", "--spec", str(spec_path),
                         "--out", str(data_dir)]) == 0
        assert (data_dir / "track000" / "mixture.wav").exists()
        assert (data_dir / "track001" / "other.wav").exists()

        run_cfg = write_run_cfg(tmp_path / "run.cfg")
        ckpt = tmp_path / "model.ckpt"
        assert cli.main(["train", "--data", str(data_dir), "--config", str(run_cfg),
                         "--out", str(ckpt)]) == 0
        assert ckpt.exists()
        assert (tmp_path / "model.ckpt.metrics.csv").exists()

        est_dir = tmp_path / "est"
        for tid in ("track000", "track001"):
            (est_dir / tid).mkdir(parents=True)
            assert cli.main([
                "separate", "--ckpt", str(ckpt),
                "--in", str(data_dir / tid / "mixture.wav"),
                "--out-perc", str(est_dir / tid / "perc.wav"),
                "--out-harm", str(est_dir / tid / "harm.wav"),
            ]) == 0

        report = tmp_path / "report.csv"
        assert cli.main(["eval", "--est-dir", str(est_dir),
                         "--ref-dir", str(data_dir),
                         "--report", str(report)]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "track,source,sdr_db,sir_db,sar_db"
        assert len(lines) == 1 + 2 * 3  # 2 tracks x (percussive, harmonic, average)
        capsys.readouterr()

    def test_baseline_command_and_self_eval_caps(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        spec_path = write_synth_cfg(tmp_path / "synth.cfg", n_tracks=1)
        assert cli.main(["gen-data", "--spec", str(spec_path),
                         "--out", str(data_dir)]) == 0

        out_p = tmp_path / "p.wav"
        out_h = tmp_path / "h.wav"
        assert cli.main(["baseline",
                         "--in", str(data_dir / "track000" / "mixture.wav"),
                         "--out-perc", str(out_p), "--out-harm", str(out_h),
                         "--l-harm", "9", "--l-perc", "9"]) == 0
        assert out_p.exists() and out_h.exists()

        # estimates equal to the references must hit the +100 dB caps
        est_dir = tmp_path / "est" / "track000"
        est_dir.mkdir(parents=True)
        ref_p, _ = read_wav(data_dir / "track000" / "drums.wav")
        ref_h, _ = read_wav(data_dir / "track000" / "other.wav")
        write_wav(est_dir / "perc.wav", ref_p)
        write_wav(est_dir / "harm.wav", ref_h)
        report = tmp_path / "self.csv"
        assert cli.main(["eval", "--est-dir", str(tmp_path / "est"),
                         "--ref-dir", str(data_dir),
                         "--report", str(report)]) == 0
        rows = [line.split(",") for line in report.read_text().strip().splitlines()[1:]]
        for row in rows:
            assert float(row[2]) == 100.0
        capsys.readouterr()
