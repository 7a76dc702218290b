"""Synthetic corpus generator: voices, layout, trials, toy anonymizer."""

import numpy as np
import pytest

from specwav import dsp, synth
from specwav.corpus import load_manifest, load_trials, read_wav


# ---------------------------------------------------------------- speakers

def test_default_speakers_roster():
    speakers = synth.default_speakers()
    assert [s.speaker_id for s in speakers] == [
        "f1", "f2", "f3", "f4", "m1", "m2", "m3", "m4"]
    for s in speakers:
        assert s.gender == ("female" if s.speaker_id[0] == "f" else "male")
        assert len(s.formants) == len(s.bandwidths) == 3
        assert 0.0 < s.am_depth <= 1.0


def test_default_speakers_climb_mel_ladder():
    speakers = {s.speaker_id: s for s in synth.default_speakers()}
    for prefix in ("f", "m"):
        for rung in range(1, 4):
            lo = speakers[f"{prefix}{rung}"]
            hi = speakers[f"{prefix}{rung + 1}"]
            ratio = dsp.hz_to_mel(hi.f0) / dsp.hz_to_mel(lo.f0)
            assert ratio == pytest.approx(synth.LADDER_STEP, rel=1e-9)
            for f_lo, f_hi in zip(lo.formants, hi.formants):
                assert dsp.hz_to_mel(f_hi) / dsp.hz_to_mel(f_lo) == (
                    pytest.approx(synth.LADDER_STEP, rel=1e-9))


def test_default_speakers_have_distinct_am_rates():
    rates = [s.am_rate for s in synth.default_speakers()]
    assert len(set(rates)) == len(rates)
    # temporal cue must sit well under the fbank frame rate's reach but
    # above the syllable gate band (4 Hz)
    assert all(4.0 < r < 20.0 for r in rates)


# --------------------------------------------------------- synth_utterance

def test_synth_utterance_shape_and_peak():
    profile = synth.default_speakers()[0]
    wave = synth.synth_utterance(profile, 0.5, np.random.default_rng(1))
    assert wave.sample_rate == 16000
    assert len(wave.samples) == 8000
    assert np.max(np.abs(wave.samples)) == pytest.approx(0.7, abs=1e-12)


def test_synth_utterance_deterministic_per_seed():
    profile = synth.default_speakers()[0]
    a = synth.synth_utterance(profile, 0.3, np.random.default_rng(7))
    b = synth.synth_utterance(profile, 0.3, np.random.default_rng(7))
    c = synth.synth_utterance(profile, 0.3, np.random.default_rng(8))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_synth_utterance_concentrates_energy_near_formants():
    profile = synth.default_speakers()[0]
    wave = synth.synth_utterance(profile, 1.0, np.random.default_rng(3))
    spectrum = np.abs(np.fft.rfft(wave.samples))
    freqs = np.fft.rfftfreq(len(wave.samples), 1.0 / wave.sample_rate)
    near = (np.abs(freqs - profile.formants[0]) < 150.0)
    far = (freqs > 5000.0) & (freqs < 6000.0)
    assert spectrum[near].mean() > 10.0 * spectrum[far].mean()


# --------------------------------------------------------- generate_corpus

@pytest.fixture(scope="module")
def mini_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_synth")
    speakers = [s for s in synth.default_speakers()
                if s.speaker_id in ("f1", "f2", "m1", "m2")]
    paths = synth.generate_corpus(root, seed=99, train_per_speaker=2,
                                  eval_per_speaker=3, duration=0.4,
                                  speakers=speakers)
    return root, paths


def test_generate_corpus_layout(mini_corpus):
    root, paths = mini_corpus
    assert paths["train_manifest"] == root / "train.tsv"
    assert paths["eval_manifest"] == root / "eval.tsv"
    assert (root / "wavs").is_dir()
    train = load_manifest(paths["train_manifest"])
    eval_man = load_manifest(paths["eval_manifest"])
    assert len(train) == 4 * 2 and len(eval_man) == 4 * 3
    assert train.label == "train" and eval_man.label == "eval"
    assert train.records[0].utt_id == "f1-train00"
    assert eval_man.records[0].utt_id == "f1-eval02"
    for rec in train.records + eval_man.records:
        assert rec.path.is_file()
        assert read_wav(rec.path).sample_rate == 16000


def test_generate_corpus_trials_are_within_gender(mini_corpus):
    _, paths = mini_corpus
    eval_man = load_manifest(paths["eval_manifest"])
    by_utt = {rec.utt_id: rec for rec in eval_man.records}
    for gender, n_utts in (("female", 6), ("male", 6)):
        trials = load_trials(paths[f"trials_{gender}"])
        assert len(trials) == n_utts * (n_utts - 1) // 2
        for trial in trials:
            a, b = by_utt[trial.enroll_id], by_utt[trial.test_id]
            assert a.gender == gender and b.gender == gender
            assert trial.is_target == (a.speaker_id == b.speaker_id)
        assert trials.n_target > 0 and trials.n_nontarget > 0


def test_generate_corpus_deterministic(tmp_path):
    speakers = synth.default_speakers()[:1]
    out = []
    for name in ("a", "b"):
        paths = synth.generate_corpus(tmp_path / name, seed=5,
                                      train_per_speaker=1, eval_per_speaker=1,
                                      duration=0.3, speakers=speakers)
        man = load_manifest(paths["train_manifest"])
        out.append(read_wav(man.records[0].path).samples)
    assert np.array_equal(out[0], out[1])


# -------------------------------------------------------- anonymize_corpus

def test_anonymize_corpus_keeps_ids_and_marks_label(mini_corpus, tmp_path):
    _, paths = mini_corpus
    eval_man = load_manifest(paths["eval_manifest"])
    anon = synth.anonymize_corpus(eval_man, tmp_path / "anon", ratio=0.9,
                                  griffin_lim_iters=8)
    assert anon.label == "eval-anon"
    assert [r.utt_id for r in anon.records] == [
        r.utt_id for r in eval_man.records]
    assert (tmp_path / "anon" / "eval-anon.tsv").is_file()
    reloaded = load_manifest(tmp_path / "anon" / "eval-anon.tsv")
    assert [r.utt_id for r in reloaded.records] == [
        r.utt_id for r in anon.records]


def test_anonymize_corpus_changes_audio(mini_corpus, tmp_path):
    _, paths = mini_corpus
    eval_man = load_manifest(paths["eval_manifest"])
    anon = synth.anonymize_corpus(eval_man, tmp_path / "anon", ratio=0.8,
                                  griffin_lim_iters=8)
    orig = read_wav(eval_man.records[0].path).samples
    shifted = read_wav(anon.records[0].path).samples
    assert len(shifted) == len(orig)
    # same-length signals, but the spectral envelope has moved
    assert np.linalg.norm(shifted - orig) > 0.1 * np.linalg.norm(orig)
