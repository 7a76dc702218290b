"""Command-line entry point: config-driven batch pipeline commands."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import eval as eval_mod
from . import feature_store, plotting, sr_augment, trainer
from .config import ConfigError, RunConfig, section_keys
from .corpus import load_manifest, load_trials, save_manifest

log = logging.getLogger("specwav")

RUN_SUBDIRS = ("manifests", "features", "checkpoints", "scores", "reports", "logs")


def _init_run(cfg: RunConfig, command: str) -> Path:
    run_dir = cfg.run_dir
    for sub in RUN_SUBDIRS:
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    cfg.echo(run_dir)
    handler = logging.FileHandler(run_dir / "logs" / f"{command}.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    if not any(isinstance(h, logging.StreamHandler)
               and not isinstance(h, logging.FileHandler) for h in log.handlers):
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(stream)
    return run_dir


def _stage2_manifest(cfg: RunConfig) -> Path:
    explicit = cfg.optional_path("stage2", "manifest")
    if explicit is not None:
        return explicit
    label = load_manifest(cfg.require_path("stage1", "manifest")).label
    return cfg.run_dir / "augmented" / f"{label}-augmented.tsv"


def _feature_dir(cfg: RunConfig, manifest_path: Path) -> Path:
    return cfg.run_dir / "features" / load_manifest(manifest_path).label


def _cmvn_path(cfg: RunConfig) -> Path | None:
    if cfg.data["features"]["cmvn"] != "global":
        return None
    return cfg.run_dir / "features" / "cmvn.spwf"


def cmd_augment(cfg: RunConfig, jobs: int) -> int:
    run_dir = _init_run(cfg, "augment")
    manifest_path = cfg.require_path("stage1", "manifest")
    manifest = load_manifest(manifest_path)
    save_manifest(manifest, run_dir / "manifests" / f"{manifest.label}.tsv")
    policy = cfg.sr_policy()
    out_manifest, ratios = sr_augment.augment_corpus(
        manifest, policy, run_dir / "augmented",
        seed=cfg.data["augment"]["seed"], stft_params=cfg.stft_params(),
        jobs=jobs)
    log.info("augmented %d utterances -> %s (ratios in [%.4f, %.4f])",
             len(out_manifest), run_dir / "augmented",
             min(ratios.values()), max(ratios.values()))
    return 0


def _extract_for_manifest(cfg: RunConfig, manifest_path: Path, jobs: int) -> Path:
    manifest = load_manifest(manifest_path)
    out_dir = cfg.run_dir / "features" / manifest.label
    per_utt = cfg.data["features"]["cmvn"] == "utterance"
    count = feature_store.extract_corpus(
        manifest, out_dir, cfg.fbank_config(), jobs=jobs,
        per_utterance_cmvn=per_utt)
    log.info("extracted %d feature files -> %s", count, out_dir)
    return out_dir


def cmd_features(cfg: RunConfig, jobs: int, which: list[str]) -> int:
    run_dir = _init_run(cfg, "features")
    source = cfg.data["features"]["source"]
    selected: list[tuple[str, Path]] = []
    for name in which:
        if name == "stage1":
            selected.append((name, cfg.require_path("stage1", "manifest")))
        elif name == "stage2":
            selected.append((name, _stage2_manifest(cfg)))
        elif name == "eval":
            selected.append((name, cfg.require_path("eval", "manifest")))
        else:
            raise ConfigError(f"unknown manifest selector {name!r}")
    failed = False
    for name, manifest_path in selected:
        if source == "fbank":
            _extract_for_manifest(cfg, manifest_path, jobs)
        else:
            manifest = load_manifest(manifest_path)
            external_dir = cfg.require_path("features", "external_dir")
            report = feature_store.ingest_external(
                external_dir, manifest,
                expected_dim=cfg.data["features"]["expected_dim"])
            report_path = run_dir / "reports" / f"ingest-{manifest.label}.txt"
            report_path.write_text(report.summary(), encoding="utf-8")
            log.info("ingest check for %s: %d ok, %d missing, %d bad dim, "
                     "%d non-finite (%s)", manifest.label, len(report.ok),
                     len(report.missing), len(report.bad_dim),
                     len(report.non_finite), report_path)
            if not report.passed:
                failed = True
    if source == "fbank" and cfg.data["features"]["cmvn"] == "global" \
            and "stage1" in which:
        manifest = load_manifest(cfg.require_path("stage1", "manifest"))
        stats = feature_store.compute_cmvn(
            manifest, run_dir / "features" / manifest.label)
        feature_store.save_cmvn(stats, run_dir / "features" / "cmvn.spwf")
        log.info("CMVN stats over %d frames -> %s", stats.frame_count,
                 run_dir / "features" / "cmvn.spwf")
    return 1 if failed else 0


def cmd_train(cfg: RunConfig, jobs: int, stage: str) -> int:
    run_dir = _init_run(cfg, "train")
    ckpt_dir = run_dir / "checkpoints"
    reports = run_dir / "reports"
    template = cfg.embedder_template()
    cmvn = _cmvn_path(cfg)

    def plan(stage_id: int) -> trainer.StagePlan:
        section = cfg.data[f"stage{stage_id}"]
        manifest_path = (cfg.require_path("stage1", "manifest")
                         if stage_id == 1 else _stage2_manifest(cfg))
        kwargs = {}
        if stage_id == 2 and section["mix_clean"] > 0.0:
            clean = cfg.require_path("stage1", "manifest")
            kwargs = {
                "mix_manifest_path": clean,
                "mix_feature_dir": _feature_dir(cfg, clean),
                "mix_fraction": section["mix_clean"],
            }
        return trainer.StagePlan(
            stage_id=stage_id, manifest_path=manifest_path,
            feature_dir=_feature_dir(cfg, manifest_path),
            epochs=section["epochs"], batch_size=section["batch_size"],
            chunk_frames=section["chunk_frames"], lr=section["lr"],
            seed=section["seed"], val_fraction=section["val_fraction"],
            cmvn_path=cmvn, **kwargs)

    def emit(name: str, curve: trainer.LossCurve) -> None:
        trainer.write_loss_curve(curve, reports / f"loss_{name}.csv")
        plotting.loss_curve_figure({name: curve}, reports / f"loss_{name}.png",
                                   title=f"{name} training loss")
        log.info("%s: train loss %.4f -> %.4f over %d epochs", name,
                 curve.train[0], curve.train[-1], len(curve.train))

    if stage == "both":
        ckpt1, ckpt2, curve1, curve2 = trainer.incremental_train(
            plan(1), plan(2), template, ckpt_dir, jobs=jobs)
        emit("stage1", curve1)
        emit("stage2", curve2)
        plotting.loss_curve_figure(
            {"stage1": curve1, "stage2": curve2}, reports / "loss_both.png",
            title="incremental training loss")
    elif stage == "1":
        ckpt1, curve1 = trainer.train_stage(plan(1), model_config=template,
                                            jobs=jobs)
        trainer.save_checkpoint(ckpt1, ckpt_dir / "stage1.spwc")
        emit("stage1", curve1)
    elif stage == "2":
        init_path = ckpt_dir / "stage1.spwc"
        if not init_path.exists():
            raise trainer.TrainerError(
                f"stage 2 requires {init_path}; run with --stage 1 or both first"
            )
        init = trainer.load_checkpoint(init_path)
        ckpt2, curve2 = trainer.train_stage(plan(2), init=init, jobs=jobs)
        trainer.save_checkpoint(ckpt2, ckpt_dir / "stage2.spwc")
        emit("stage2", curve2)
    else:
        raise ConfigError(f"unknown stage {stage!r}")
    return 0


def cmd_eval(cfg: RunConfig, jobs: int, checkpoint: str | None) -> int:
    run_dir = _init_run(cfg, "eval")
    if checkpoint is not None:
        ckpt_path = Path(checkpoint)
    else:
        ckpt_path = cfg.optional_path("eval", "checkpoint")
        if ckpt_path is None:
            ckpt_path = run_dir / "checkpoints" / "stage2.spwc"
    ckpt = trainer.load_checkpoint(ckpt_path)
    manifest = load_manifest(cfg.require_path("eval", "manifest"))
    feature_dir = run_dir / "features" / manifest.label
    cmvn_path = _cmvn_path(cfg)
    cmvn = feature_store.load_cmvn(cmvn_path) if cmvn_path is not None else None
    trial_entries = cfg.data["eval"]["trials"]
    if not trial_entries:
        raise ConfigError("eval.trials must list at least one trial set")
    embeddings = eval_mod.embed_utterances(ckpt, manifest, feature_dir,
                                           cmvn=cmvn, jobs=jobs)
    subset_eers: dict[tuple[str, str], float] = {}
    for entry in trial_entries:
        key = (entry["dataset"], entry["gender"])
        if key in subset_eers:
            raise ConfigError(
                f"duplicate trials for dataset {key[0]!r} gender {key[1]!r}"
            )
        trials = load_trials(cfg._resolve(entry["path"]), subset=entry["name"])
        score_set = eval_mod.score_trials(trials, embeddings)
        eval_mod.write_scores(score_set, trials,
                              run_dir / "scores" / f"{entry['name']}.txt")
        eer = eval_mod.compute_eer(score_set)
        subset_eers[key] = eer
        log.info("%s: EER %.2f%% over %d trials", entry["name"], eer * 100.0,
                 len(trials))
    system = cfg.data["eval"]["system"]
    report = eval_mod.build_report(system, subset_eers)
    eval_mod.write_report_csv(report, run_dir / "reports" / f"eer_{system}.csv")
    table = eval_mod.render_table([report])
    (run_dir / "reports" / f"eer_{system}.txt").write_text(table,
                                                           encoding="utf-8")
    plotting.report_figure([report], run_dir / "reports" / f"eer_{system}.png",
                           title=f"EER: {system}")
    print(table, end="")
    return 0


def cmd_report(csv_paths: list[str], out: str | None) -> int:
    reports = [eval_mod.read_report_csv(p) for p in csv_paths]
    table = eval_mod.render_table(reports)
    print(table, end="")
    deltas_text = None
    if len(reports) == 2:
        deltas_text = eval_mod.render_deltas(reports[0], reports[1])
        print(deltas_text, end="")
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "table.txt").write_text(table, encoding="utf-8")
        plotting.report_figure(reports, out_dir / "table.png")
        if deltas_text is not None:
            (out_dir / "deltas.txt").write_text(deltas_text, encoding="utf-8")
    return 0


def _keys_help(*sections: str) -> str:
    keys = []
    for section in sections:
        if section in ("run_dir", "jobs"):
            keys.append(section)
        else:
            keys.extend(section_keys(section))
    return "config keys read: " + ", ".join(keys)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specwav",
        description="Spectrogram-resize attack pipeline for anonymized speech.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, *sections: str,
            with_config: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog=_keys_help(*sections) if sections else None)
        if with_config:
            p.add_argument("-c", "--config", required=True,
                           help="run configuration YAML file")
            p.add_argument("--jobs", type=int, default=None,
                           help="worker threads (default: config jobs; "
                                "output is independent of this value)")
        return p

    add("augment", "resize-augment a corpus and write the augmented manifest",
        "run_dir", "jobs", "stage1", "stft", "augment")
    p_feat = add("features",
                 "extract fbank features or validate external features",
                 "run_dir", "jobs", "features", "stft", "stage1", "stage2",
                 "eval")
    p_feat.add_argument("--manifest", action="append",
                        choices=["stage1", "stage2", "eval"], default=None,
                        help="which manifests to process (repeatable; "
                             "default: stage1, stage2 if present, eval if set)")
    p_train = add("train", "run two-stage incremental training",
                  "run_dir", "jobs", "embedder", "features", "stage1", "stage2")
    p_train.add_argument("--stage", choices=["1", "2", "both"], default="both",
                         help="train one stage or both (default both)")
    p_eval = add("eval", "embed, score trials, compute EER, write the report",
                 "run_dir", "jobs", "features", "eval")
    p_eval.add_argument("--checkpoint", default=None,
                        help="checkpoint path (default: eval.checkpoint or "
                             "checkpoints/stage2.spwc)")
    p_rep = add("report", "merge or compare saved EER report CSVs",
                with_config=False)
    p_rep.add_argument("csvs", nargs="+", help="EER report CSV files")
    p_rep.add_argument("-o", "--out", default=None,
                       help="directory for rendered table, figure, and deltas")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.csvs, args.out)
        cfg = RunConfig.load(args.config)
        jobs = args.jobs if args.jobs is not None else cfg.jobs
        if jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {jobs}")
        if args.command == "augment":
            return cmd_augment(cfg, jobs)
        if args.command == "features":
            which = args.manifest
            if which is None:
                which = ["stage1"]
                if _stage2_manifest(cfg).exists():
                    which.append("stage2")
                if cfg.optional_path("eval", "manifest") is not None:
                    which.append("eval")
            return cmd_features(cfg, jobs, which)
        if args.command == "train":
            return cmd_train(cfg, jobs, args.stage)
        if args.command == "eval":
            return cmd_eval(cfg, jobs, args.checkpoint)
        parser.error(f"unknown command {args.command!r}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
