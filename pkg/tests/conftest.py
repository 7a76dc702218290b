"""Shared fixtures: synthetic corpora at two scales.

The tiny corpus keeps unit tests fast; the full bundle matches the
determinism and end-to-end trend checks and is only built when a test
asks for it.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from specwav import feature_store, sr_augment, synth
from specwav.corpus import load_manifest


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 speakers x (3 train + 3 eval) x 1.2 s, with fbank features."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    speakers = [s for s in synth.default_speakers()
                if s.speaker_id in ("f1", "f2", "m1", "m2")]
    paths = synth.generate_corpus(root, seed=2024, train_per_speaker=3,
                                  eval_per_speaker=3, duration=1.2,
                                  speakers=speakers)
    train = load_manifest(paths["train_manifest"])
    eval_man = load_manifest(paths["eval_manifest"])
    fb = feature_store.FbankConfig()
    feature_store.extract_corpus(train, root / "feats" / "train", fb, jobs=4)
    feature_store.extract_corpus(eval_man, root / "feats" / "eval", fb, jobs=4)
    stats = feature_store.compute_cmvn(train, root / "feats" / "train")
    feature_store.save_cmvn(stats, root / "feats" / "cmvn.spwf")
    return {
        "root": root,
        "paths": paths,
        "train_manifest": train,
        "eval_manifest": eval_man,
        "train_features": root / "feats" / "train",
        "eval_features": root / "feats" / "eval",
        "cmvn": root / "feats" / "cmvn.spwf",
    }


@pytest.fixture(scope="session")
def synth_bundle(tmp_path_factory):
    """The full 8-speaker corpus with augmented train and anonymized eval.

    Roughly five minutes of audio; shared by the determinism and trend
    checks so the Griffin-Lim work happens once per session.  The
    augmentation range is widened to [0.8, 1.2] so it covers the 0.82
    shift the toy anonymizer applies to the eval half.
    """
    root = tmp_path_factory.mktemp("synth_bundle")
    paths = synth.generate_corpus(root / "corpus", seed=1234)
    train = load_manifest(paths["train_manifest"])
    eval_man = load_manifest(paths["eval_manifest"])
    policy = sr_augment.SrPolicy(ratio_min=0.8, ratio_max=1.2)
    aug_man, ratios = sr_augment.augment_corpus(train, policy, root / "aug",
                                                seed=11, jobs=4)
    anon_man = synth.anonymize_corpus(eval_man, root / "anon", ratio=0.82)
    fb = feature_store.FbankConfig()
    feats = root / "feats"
    feature_store.extract_corpus(train, feats / "train", fb, jobs=4)
    feature_store.extract_corpus(aug_man, feats / "aug", fb, jobs=4)
    feature_store.extract_corpus(eval_man, feats / "eval", fb, jobs=4)
    feature_store.extract_corpus(anon_man, feats / "anon", fb, jobs=4)
    stats = feature_store.compute_cmvn(train, feats / "train")
    feature_store.save_cmvn(stats, feats / "cmvn.spwf")
    return {
        "root": root,
        "paths": paths,
        "train_manifest": train,
        "aug_manifest": aug_man,
        "eval_manifest": eval_man,
        "anon_manifest": anon_man,
        "ratios": ratios,
        "features": feats,
        "cmvn": feats / "cmvn.spwf",
    }
