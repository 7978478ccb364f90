"""Command-line entry point.

Exit codes: 0 success, 1 input or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import concept_kb, harness
from .prompting import load_templates
from .scoring import classify, format_prediction
from .verbalizer import MODES, PLAIN, Verbalizer, build_verbalizer


EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    dataset_format: str = "tsv"
    test_dataset: str | None = None
    kb: str | None = None
    kb_concept_first: bool = False
    templates: str | None = None
    template_id: int = 2
    mode: str = "full"
    n: int = harness.DEFAULT_N
    m: int = harness.DEFAULT_M
    k: int = 5
    support_size: int = harness.DEFAULT_SUPPORT
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    oracle: str = "hf"
    output_dir: str = "runs"
    freeze_verbalizer: bool = False
    select_on_support: bool = False
    workers: int = 1

    @classmethod
    def from_sources(cls, path: str | None, overrides: dict) -> "RunConfig":
        data: dict = {}
        if path:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as err:
                raise ConfigError(f"cannot read config {path}: {err}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must be a JSON object")
            base = Path(path).parent
            for key in ("dataset", "test_dataset", "kb", "templates"):
                if data.get(key):
                    data[key] = str(base / data[key]) if not Path(data[key]).is_absolute() else data[key]
            if isinstance(data.get("oracle"), str) and data["oracle"].startswith("toy:"):
                spec = data["oracle"][4:]
                data["oracle"] = "toy:" + (spec if Path(spec).is_absolute() else str(base / spec))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def validate(self, need: tuple[str, ...] = ()) -> None:
        for key in need:
            if not getattr(self, key):
                raise ConfigError(f"{key} is required")
        for key in ("dataset", "test_dataset", "kb", "templates"):
            value = getattr(self, key)
            if value and not Path(value).exists():
                raise ConfigError(f"{key} path does not exist: {value}")
        if self.oracle.startswith("toy:") and not Path(self.oracle[4:]).exists():
            raise ConfigError(f"toy oracle spec does not exist: {self.oracle[4:]}")
        if not (self.oracle.startswith("toy:") or self.oracle == "hf" or self.oracle.startswith("hf:")):
            raise ConfigError(f"oracle must be 'toy:<spec.json>', 'hf' or 'hf:<model>', got {self.oracle!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for key in ("n", "m", "k", "template_id", "workers"):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{key} must be an integer >= 1, got {value!r}")
        if not isinstance(self.support_size, int) or self.support_size < 0:
            raise ConfigError(f"support_size must be an integer >= 0, got {self.support_size!r}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be a non-empty list of distinct integers, got {self.seeds!r}")
        if self.dataset_format not in harness.FORMATS:
            raise ConfigError(f"dataset_format must be one of {sorted(harness.FORMATS)}")
        if self.mode != PLAIN and "kb" in need and not self.kb:
            raise ConfigError(f"mode {self.mode!r} needs a kb")

    def digest(self) -> str:
        """Hash of everything that affects results (not the seeds or output location)."""
        doc = {k: v for k, v in asdict(self).items() if k not in ("seeds", "output_dir", "workers")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def make_oracle(spec: str):
    if spec.startswith("toy:"):
        from .toy_oracle import ToyOracle

        return ToyOracle.from_file(spec[4:])
    from .hf_oracle import HFMaskedLMOracle

    name = spec[3:] if spec.startswith("hf:") else None
    return HFMaskedLMOracle.from_pretrained(name)


def _load_templates(cfg: RunConfig):
    templates = load_templates(cfg.templates)
    if cfg.template_id not in templates:
        raise ConfigError(f"template id {cfg.template_id} not found in {cfg.templates}")
    return templates


def _experiment(cfg: RunConfig, oracle) -> harness.ExperimentConfig:
    train = harness.load_dataset(cfg.dataset, cfg.dataset_format)
    test = harness.load_dataset(cfg.test_dataset, cfg.dataset_format) if cfg.test_dataset else None
    kb = concept_kb.read_kb(cfg.kb, concept_first=cfg.kb_concept_first) if cfg.kb else None
    return harness.ExperimentConfig(
        train=train, test=test, kb=kb, oracle=oracle, templates=_load_templates(cfg),
        template_id=cfg.template_id, mode=cfg.mode, n=cfg.n, m=cfg.m, k=cfg.k,
        support_size=cfg.support_size, freeze_verbalizer=cfg.freeze_verbalizer,
        select_on_support=cfg.select_on_support, workers=cfg.workers,
    )


def cmd_build_kb(args) -> int:
    kb = concept_kb.read_kb(args.input, concept_first=args.concept_first)
    concept_kb.write_kb(kb, args.output)
    n_checked, bad = concept_kb.audit_kb_file(args.output, fraction=args.audit_fraction)
    if bad:
        print(f"audit failed for {len(bad)} of {n_checked} sampled instances, e.g. {bad[0]!r}", file=sys.stderr)
        return EXIT_RUNTIME
    n_inst = len(kb)
    print(f"{kb.n_entries} entries, {n_inst} instance{'s' if n_inst != 1 else ''}, "
          f"{len(kb.concept_vocabulary)} concepts (audited {n_checked})")
    return EXIT_OK


def cmd_build_verbalizer(args) -> int:
    cfg = args.cfg
    cfg.validate(need=("dataset",) + (("kb",) if cfg.mode != PLAIN else ()))
    oracle = make_oracle(cfg.oracle)
    train = harness.load_dataset(cfg.dataset, cfg.dataset_format)
    kb = concept_kb.read_kb(cfg.kb, concept_first=cfg.kb_concept_first) if cfg.kb else None
    split = harness.sample_kshot(train, cfg.k, cfg.support_size, cfg.seeds[0])
    verb = build_verbalizer(kb, train.classes, split.texts_by_class(), oracle,
                            n=cfg.n, m=cfg.m, mode=cfg.mode, template_id=cfg.template_id)
    verb.save(args.output)
    for label in verb.classes:
        s = verb.stats.get(label, {})
        print(f"{label}\t{len(verb.words(label))} words\tdropped multi-token={s.get('dropped_multi_token', 0)} "
              f"no-embedding={s.get('dropped_no_embedding', 0)} derivation={s.get('dropped_derivation', 0)}")
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = args.cfg
    cfg.validate(need=("templates",))
    if args.text is not None:
        texts = [args.text]
    else:
        with open(args.input, encoding="utf-8") as f:
            texts = [line.rstrip("\r\n") for line in f]
    texts = [t for t in texts if t.strip()]
    if not texts:
        print("error: no input texts", file=sys.stderr)
        return EXIT_INPUT
    templates = _load_templates(cfg)
    template = templates[cfg.template_id]
    oracle = make_oracle(cfg.oracle)
    if args.verbalizer:
        verb = Verbalizer.load(args.verbalizer)
    else:
        if not args.classes:
            raise ConfigError("give --verbalizer or --classes")
        classes = [c for c in args.classes.split(",") if c]
        verb = build_verbalizer(None, classes, None, oracle, n=cfg.n, m=cfg.m, mode=PLAIN)
    for i, text in enumerate(texts, start=1):
        pred = classify(oracle, template, verb, text)
        if pred.truncated:
            print(f"warning: input {i} truncated to {oracle.max_length} tokens", file=sys.stderr)
        print(format_prediction(i, pred, verb.classes))
    return EXIT_OK


def _run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / cfg.digest()


def cmd_evaluate(args) -> int:
    cfg = args.cfg
    cfg.validate(need=("dataset", "templates") + (("kb",) if cfg.mode != PLAIN else ()))
    exp = _experiment(cfg, make_oracle(cfg.oracle))
    out = _run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = harness.run_repeats(exp, len(cfg.seeds), cfg.seeds, out_dir=out)
    table = harness.format_table("config", [(cfg.digest(), result)])
    (out / "results.tsv").write_text(table, encoding="utf-8", newline="\n")
    saved = {k: v for k, v in asdict(cfg).items() if k != "output_dir"}
    (out / "config.json").write_text(json.dumps(saved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def _parse_values(axis: str, raw: str) -> list:
    values = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(int(item))
        except ValueError:
            raise ConfigError(f"sweep value {item!r} for axis {axis} is not an integer") from None
    if not values:
        raise ConfigError("no sweep values given")
    return values


def cmd_sweep(args) -> int:
    cfg = args.cfg
    cfg.validate(need=("dataset", "templates") + (("kb",) if cfg.mode != PLAIN else ()))
    values = _parse_values(args.axis, args.values)
    attr = harness.SWEEP_AXES[args.axis]
    for v in values:
        try:
            point = replace(cfg, **{attr: v})
            point.validate()
            _load_templates(point)
        except ConfigError as err:
            raise ConfigError(f"invalid {args.axis} value {v!r}: {err}") from None
    exp = _experiment(cfg, make_oracle(cfg.oracle))
    out = _run_dir(cfg) / f"sweep-{args.axis}"
    out.mkdir(parents=True, exist_ok=True)
    table = harness.sweep(exp, args.axis, values, len(cfg.seeds), cfg.seeds, out_dir=out)
    text = table.dumps()
    (out / "results.tsv").write_text(text, encoding="utf-8", newline="\n")
    sys.stdout.write(text)
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--dataset")
    p.add_argument("--dataset-format", choices=sorted(harness.FORMATS))
    p.add_argument("--test-dataset")
    p.add_argument("--kb")
    p.add_argument("--templates")
    p.add_argument("--template-id", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--support-size", type=int)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",") if x])
    p.add_argument("--oracle", help="toy:<spec.json>, hf, or hf:<model-id>")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clozeverb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", help="validate and normalize an IsA triple file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--concept-first", action="store_true", help="input columns are concept, instance, weight")
    p.add_argument("--audit-fraction", type=float, default=0.01)
    p.set_defaults(func=cmd_build_kb, wants_config=False)

    p = sub.add_parser("build-verbalizer", help="expand and refine label words")
    _add_config_flags(p)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_verbalizer, wants_config=True)

    p = sub.add_parser("classify", help="classify one text or a file of texts")
    _add_config_flags(p)
    p.add_argument("--verbalizer")
    p.add_argument("--classes", help="comma-separated classes for a class-name-only verbalizer")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--text")
    g.add_argument("--input")
    p.set_defaults(func=cmd_classify, wants_config=True)

    p = sub.add_parser("evaluate", help="repeated k-shot evaluation")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate, wants_config=True)

    p = sub.add_parser("sweep", help="vary one parameter over a list of values")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep, wants_config=True)
    return parser


_OVERRIDES = ("dataset", "dataset_format", "test_dataset", "kb", "templates", "template_id", "mode",
              "n", "m", "k", "support_size", "seeds", "oracle", "output_dir", "workers")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are input errors; keep 2 for runtime failures
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.wants_config:
            args.cfg = RunConfig.from_sources(args.config, {k: getattr(args, k) for k in _OVERRIDES})
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as err:  # noqa: BLE001
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
