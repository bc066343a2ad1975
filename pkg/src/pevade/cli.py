"""Command-line front end.

Subcommands: gen-corpus, train, calibrate, attack, campaign, validate,
report.  Flags mirror the library defaults; campaign config files are
JSON with the same keys as CampaignConfig, and individual flags override
single keys.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import blackbox, campaign, corpus, equivalence, models, pe, whitebox


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (pe.PeError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pevade",
        description="Adversarial evasion toolkit for byte-based PE malware detectors",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic labeled corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--malware", type=int, default=200)
    p.add_argument("--goodware", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("train", help="train one classifier on a corpus directory")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--model", required=True, choices=models.ALL_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="set a model threshold at a target FPR")
    p.add_argument("--model-file", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--fpr", type=float, default=0.001)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("attack", help="run one attack against one file")
    p.add_argument("--input", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument(
        "--strategy",
        required=True,
        choices=list(campaign.ALL_STRATEGIES),
    )
    p.add_argument(
        "--manipulation",
        choices=list(campaign.WHITEBOX_BYTE_STRATEGIES),
        help="byte manipulation driven by the genetic strategy",
    )
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--gamma-bytes", type=int, default=256,
                   help="byte positions rewritten per white-box round")
    p.add_argument("--request-size", type=int, default=None)
    p.add_argument("--padding-size", type=int, default=10240)
    p.add_argument("--population", type=int, default=10)
    p.add_argument("--queries", type=int, default=3000)
    p.add_argument("--lambda", dest="penalty_weight", type=float, default=1e-5)
    p.add_argument("--benign-corpus-dir", help="goodware source for gamma harvesting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("campaign", help="run a full attack campaign and emit reports")
    p.add_argument("--config", help="JSON campaign config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fpr", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--attack-samples", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_campaign)

    p = sub.add_parser(
        "validate",
        help="check one file's format, or structural equivalence of two files",
    )
    p.add_argument("files", nargs="+")
    p.add_argument("--names-exempt", action="store_true",
                   help="declare a section-rename edit")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("report", help="re-render reports from a saved campaign result")
    p.add_argument("--result", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def _cmd_gen_corpus(args) -> int:
    spec = corpus.CorpusSpec(
        malware_count=args.malware, goodware_count=args.goodware, seed=args.seed
    )
    samples = corpus.generate_corpus(spec)
    out = corpus.save_corpus(samples, args.out_dir)
    print(f"wrote {len(samples)} files to {out}")
    return 0


def _cmd_train(args) -> int:
    samples = corpus.load_corpus(args.corpus_dir)
    c = models.train(samples, args.model, seed=args.seed)
    models.save_classifier(c, args.out)
    print(
        f"{args.model}: train acc {c.meta['train_accuracy']:.3f}, "
        f"val acc {c.meta['val_accuracy']:.3f} -> {args.out}"
    )
    return 0


def _cmd_calibrate(args) -> int:
    c = models.load_classifier(args.model_file)
    samples = corpus.load_corpus(args.corpus_dir)
    scores = c.score_batch([s.data for s in samples])
    c.threshold = models.calibrate_threshold(
        scores, [s.label for s in samples], args.fpr
    )
    models.save_classifier(c, args.model_file)
    print(f"threshold at {args.fpr:.4%} FPR: {c.threshold:.6f}")
    return 0


def _cmd_attack(args) -> int:
    z = Path(args.input).read_bytes()
    c = models.load_classifier(args.model_file)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    request = args.request_size or campaign.DEFAULT_REQUEST.get(args.strategy, 512)

    if args.strategy in campaign.WHITEBOX_BYTE_STRATEGIES:
        cfg = whitebox.WhiteboxConfig(
            bytes_per_round=args.gamma_bytes,
            iterations=args.iterations,
            seed=args.seed,
        )
        adv, trace = whitebox.attack(
            z, c, args.strategy, cfg,
            request_size=request, padding_size=args.padding_size,
        )
    elif args.strategy == "fgsm":
        cfg = whitebox.WhiteboxConfig(iterations=args.iterations, seed=args.seed)
        adv, trace = whitebox.fgsm_attack(z, c, cfg, padding_size=args.padding_size)
    elif args.strategy == "genetic":
        cfg = blackbox.GeneticConfig(
            population_size=args.population, query_budget=args.queries, seed=args.seed
        )
        adv, trace = blackbox.genetic_attack(
            z,
            blackbox.QueryScorer.from_classifier(c),
            args.manipulation or "full-dos",
            cfg,
            request_size=request,
            padding_size=args.padding_size,
        )
    else:  # gamma
        if not args.benign_corpus_dir:
            raise ValueError("gamma needs --benign-corpus-dir to harvest sections")
        pool = blackbox.harvest_sections(corpus.load_corpus(args.benign_corpus_dir))
        adv, trace = blackbox.gamma_padding_attack(
            z,
            blackbox.QueryScorer.from_classifier(c),
            blackbox.GammaConfig(
                penalty_weight=args.penalty_weight, benign_sections=tuple(pool)
            ),
            blackbox.GeneticConfig(
                population_size=args.population, query_budget=args.queries,
                seed=args.seed,
            ),
        )

    report = equivalence.structural_equivalence(z, adv)
    if not report.equivalent:
        print(equivalence.format_report(report), file=sys.stderr)
        return 1
    name = Path(args.input).name
    adv_path = out_dir / f"adv_{args.strategy}_{name}"
    adv_path.write_bytes(adv)
    trace_path = out_dir / f"trace_{args.strategy}_{name}.csv"
    trace_path.write_text("iteration,score\n" + "\n".join(trace.to_lines()) + "\n")
    final = c.score(adv)
    verdict = ""
    if c.threshold is not None:
        verdict = " (evaded)" if final < c.threshold else " (still detected)"
    print(f"score {c.score(z):.6f} -> {final:.6f}{verdict}")
    print(f"wrote {adv_path} and {trace_path}")
    return 0


def _cmd_campaign(args) -> int:
    cfg = campaign.CampaignConfig()
    if args.config:
        cfg = _config_from_json(Path(args.config).read_text())
    overrides = {
        key: getattr(args, key)
        for key in ("seed", "fpr", "iterations", "attack_samples", "workers")
        if getattr(args, key) is not None
    }
    if overrides:
        cfg = replace(cfg, **overrides)
    result = campaign.run_campaign(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json())

    from . import reports

    written = reports.emit_reports(result, out)
    for path in [out / "result.json"] + written:
        print(f"wrote {path}")
    return 0


def _config_from_json(text: str) -> campaign.CampaignConfig:
    raw = json.loads(text)
    if "corpus" in raw:
        spec = raw["corpus"]
        for key in ("size_range", "file_alignments", "pe_offset_range"):
            if key in spec:
                spec[key] = tuple(spec[key])
        raw["corpus"] = corpus.CorpusSpec(**spec)
    if "attacks" in raw:
        raw["attacks"] = tuple(
            campaign.AttackSpec(**a) if isinstance(a, dict) else campaign.AttackSpec(a)
            for a in raw["attacks"]
        )
    if "model_kinds" in raw:
        raw["model_kinds"] = tuple(raw["model_kinds"])
    return campaign.CampaignConfig(**raw)


def _cmd_validate(args) -> int:
    if len(args.files) == 1:
        report = pe.validate_bytes(Path(args.files[0]).read_bytes())
        if report.ok:
            print("ok")
            return 0
        for v in report.violations:
            print(f"[{v.rule}] at {v.offset:#x}: {v.message}")
        return 1
    if len(args.files) == 2:
        a = Path(args.files[0]).read_bytes()
        b = Path(args.files[1]).read_bytes()
        report = equivalence.structural_equivalence(
            a, b, names_exempt=args.names_exempt
        )
        print(equivalence.format_report(report))
        return 0 if report.equivalent else 1
    print("error: validate takes one file (format) or two (equivalence)", file=sys.stderr)
    return 2


def _cmd_report(args) -> int:
    result = campaign.CampaignResult.from_json(Path(args.result).read_text())

    from . import reports

    for path in reports.emit_reports(result, args.out_dir):
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
