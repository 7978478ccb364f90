"""Few-shot experiment protocol: datasets, seeded k-shot splits, evaluation, sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .concept_kb import ConceptKB
from .prompting import PromptTemplate
from .scoring import Prediction, ScoringOracle, classify, format_prediction, prediction_header
from .verbalizer import FULL, MODES, Verbalizer, build_verbalizer

logger = logging.getLogger(__name__)

# Target 5-shot AG News accuracy (%) of the full method with roberta-large;
# kept for reference, not reproducible without that model and a GPU.
REFERENCE_AGNEWS_5SHOT = 78.53

DEFAULT_N = 5
DEFAULT_M = 50
DEFAULT_SUPPORT = 1000
DEFAULT_REPEATS = 5


class DatasetError(ValueError):
    def __init__(self, lineno: int | None, message: str):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


@dataclass(frozen=True)
class Example:
    text: str
    label: str


@dataclass
class Dataset:
    examples: list[Example]
    classes: list[str]
    name: str = ""

    def __post_init__(self):
        if not self.classes:
            raise DatasetError(None, "dataset has no classes")
        if len(set(self.classes)) != len(self.classes):
            raise DatasetError(None, "duplicate class labels")
        known = set(self.classes)
        for i, ex in enumerate(self.examples):
            if ex.label not in known:
                raise DatasetError(None, f"example {i} has unknown label {ex.label!r}")

    def __len__(self) -> int:
        return len(self.examples)

    def indices_by_class(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {c: [] for c in self.classes}
        for i, ex in enumerate(self.examples):
            out[ex.label].append(i)
        return out


@dataclass(frozen=True)
class DatasetFormat:
    """How to read a labeled text file.

    ``kind`` is ``"tsv"`` (``label<TAB>text[<TAB>more text...]``), ``"csv"``
    (AG's News style ``"class","title","description"``) or ``"suffix"``
    (text followed by a space and the label as the last token, as in the
    Snippets release). ``title_only`` keeps the first text field and drops
    the rest. ``label_map`` translates raw label values; ``classes`` fixes the
    class order, otherwise it follows first appearance.
    """

    kind: str = "tsv"
    classes: tuple[str, ...] | None = None
    label_map: Mapping[str, str] | None = None
    title_only: bool = False


AGNEWS = DatasetFormat(
    kind="csv",
    classes=("World", "Sports", "Business", "Sci/Tech"),
    label_map={"1": "World", "2": "Sports", "3": "Business", "4": "Sci/Tech"},
    title_only=True,
)
SNIPPETS = DatasetFormat(
    kind="suffix",
    classes=("business", "computers", "culture-arts-entertainment", "education-science",
             "engineering", "health", "politics-society", "sports"),
)
FORMATS = {"tsv": DatasetFormat(), "agnews": AGNEWS, "snippets": SNIPPETS}


def _records(lines: Iterable[str], fmt: DatasetFormat):
    if fmt.kind == "csv":
        reader = csv.reader(lines)
        for row in reader:
            yield reader.line_num, row
        return
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if fmt.kind == "tsv":
            yield lineno, line.split("\t")
        elif fmt.kind == "suffix":
            text, _, label = line.rstrip().rpartition(" ")
            yield lineno, [label, text]
        else:
            raise DatasetError(None, f"unknown dataset format kind {fmt.kind!r}")


def load_dataset(path: str | Path, fmt: DatasetFormat | str = "tsv", name: str | None = None) -> Dataset:
    if isinstance(fmt, str):
        try:
            fmt = FORMATS[fmt]
        except KeyError:
            raise DatasetError(None, f"unknown dataset format {fmt!r}; known: {sorted(FORMATS)}") from None
    path = Path(path)
    examples: list[Example] = []
    seen: list[str] = []
    known = set(fmt.classes) if fmt.classes else None
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, row in _records(f, fmt):
            if len(row) < 2:
                raise DatasetError(lineno, "expected a label and a text field")
            raw_label, fields = row[0].strip(), [x.strip() for x in row[1:]]
            label = fmt.label_map.get(raw_label, raw_label) if fmt.label_map else raw_label
            if known is not None and label not in known:
                raise DatasetError(lineno, f"unknown label {raw_label!r}")
            text = fields[0] if fmt.title_only else " ".join(x for x in fields if x)
            if not text:
                raise DatasetError(lineno, "empty text")
            if label not in seen:
                seen.append(label)
            examples.append(Example(text, label))
    if not examples:
        raise DatasetError(None, f"{path} contains no examples")
    classes = list(fmt.classes) if fmt.classes else seen
    return Dataset(examples, classes, name or path.stem)


class SplitRNG:
    """Bounded integers from the PCG64 bit stream by rejection sampling.

    Only raw 64-bit outputs of PCG64 are consumed, so a seed gives the same
    sequence on every platform and numpy version.
    """

    def __init__(self, seed: int):
        self._bits = np.random.PCG64(seed)

    def below(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be >= 1")
        limit = (1 << 64) - (1 << 64) % n
        while True:
            r = int(self._bits.random_raw())
            if r < limit:
                return r % n

    def reservoir(self, items: Sequence[int], size: int) -> list[int]:
        out: list[int] = []
        for i, item in enumerate(items):
            if i < size:
                out.append(item)
            else:
                j = self.below(i + 1)
                if j < size:
                    out[j] = item
        return out

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass
class KShotSplit:
    train_indices: list[int]
    support_indices: list[int]
    train: list[Example]
    support: list[Example]
    test: list[Example]
    classes: list[str]
    seed: int
    k: int
    support_size: int

    def texts_by_class(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {c: [] for c in self.classes}
        for ex in self.train:
            out[ex.label].append(ex.text)
        return out

    def dumps(self) -> str:
        doc = {
            "seed": self.seed, "k": self.k, "support_size": self.support_size, "classes": self.classes,
            "train": [[i, e.label, e.text] for i, e in zip(self.train_indices, self.train)],
            "support": self.support_indices,
            "test_size": len(self.test),
        }
        return json.dumps(doc, ensure_ascii=False, indent=1) + "\n"


def sample_kshot(dataset: Dataset, k: int, support_size: int, seed: int,
                 test: Dataset | Sequence[Example] | None = None) -> KShotSplit:
    """Draw ``k`` train and up to ``support_size`` support examples per class.

    Per class, in class order, a reservoir of ``k + support_size`` indices is
    drawn and shuffled; the first ``k`` become train and the rest support.
    A class with fewer than ``k`` examples contributes all of them to train.
    ``test`` defaults to the examples that were not drawn.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if support_size < 0:
        raise ValueError(f"support_size must be >= 0, got {support_size}")
    rng = SplitRNG(seed)
    train_idx: list[int] = []
    support_idx: list[int] = []
    for label, idx in dataset.indices_by_class().items():
        if not idx:
            raise DatasetError(None, f"class {label!r} has no training examples")
        if len(idx) < k:
            logger.warning("class %r has only %d examples for k=%d; using all", label, len(idx), k)
        drawn = rng.reservoir(idx, k + support_size)
        rng.shuffle(drawn)
        train_idx.extend(drawn[:k])
        support_idx.extend(drawn[k:])

    if test is None:
        used = set(train_idx) | set(support_idx)
        test_examples = [ex for i, ex in enumerate(dataset.examples) if i not in used]
    else:
        test_examples = list(test.examples if isinstance(test, Dataset) else test)
    return KShotSplit(
        train_indices=train_idx,
        support_indices=support_idx,
        train=[dataset.examples[i] for i in train_idx],
        support=[dataset.examples[i] for i in support_idx],
        test=test_examples,
        classes=list(dataset.classes),
        seed=seed,
        k=k,
        support_size=support_size,
    )


@dataclass
class EvalResult:
    accuracy: float
    n_test: int
    n_correct: int
    per_run: list[float]
    mean: float
    stddev: float
    seeds: list[int] = field(default_factory=list)
    predictions: list[Prediction] = field(default_factory=list, compare=False, repr=False)

    @classmethod
    def from_runs(cls, runs: Sequence["EvalResult"], seeds: Sequence[int] = ()) -> "EvalResult":
        per_run = [r.accuracy for r in runs]
        n_test = sum(r.n_test for r in runs)
        n_correct = sum(r.n_correct for r in runs)
        return cls(
            accuracy=n_correct / n_test if n_test else 0.0,
            n_test=n_test,
            n_correct=n_correct,
            per_run=per_run,
            mean=math.fsum(per_run) / len(per_run),
            stddev=statistics.pstdev(per_run) if len(per_run) > 1 else 0.0,
            seeds=list(seeds),
        )


def _classify_all(oracle, template, verbalizer, texts: Sequence[str], workers: int) -> list[Prediction]:
    def one(item):
        i, text = item
        try:
            return classify(oracle, template, verbalizer, text)
        except Exception as err:
            raise RuntimeError(f"classification failed on example {i}: {err}") from err

    items = list(enumerate(texts))
    if workers > 1 and getattr(oracle, "concurrent_safe", False):
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def evaluate(oracle: ScoringOracle, template: PromptTemplate, verbalizer: Verbalizer,
             split: KShotSplit | Sequence[Example], predictions_path: str | Path | None = None,
             workers: int = 1) -> EvalResult:
    """Classify every test example and report exact accuracy.

    Writes ``id, gold, predicted, score...`` rows to ``predictions_path`` when given.
    """
    if isinstance(split, KShotSplit):
        examples, classes = split.test, split.classes
        if set(classes) != set(verbalizer.classes):
            raise ValueError(f"verbalizer classes {verbalizer.classes} do not match dataset classes {classes}")
    else:
        examples = list(split)
    if not examples:
        raise ValueError("no test examples")
    preds = _classify_all(oracle, template, verbalizer, [ex.text for ex in examples], workers)
    n_trunc = sum(p.truncated for p in preds)
    if n_trunc:
        logger.warning("%d test text(s) were truncated to fit the model", n_trunc)
    correct = sum(p.label == ex.label for p, ex in zip(preds, examples))

    if predictions_path is not None:
        write_predictions(predictions_path, examples, preds, verbalizer.classes)

    acc = correct / len(examples)
    return EvalResult(acc, len(examples), correct, [acc], acc, 0.0, predictions=preds)


def write_predictions(path, examples: Sequence[Example], preds: Sequence[Prediction], classes: Sequence[str]) -> None:
    buf = io.StringIO()
    buf.write(prediction_header(classes, with_gold=True) + "\n")
    for i, (ex, p) in enumerate(zip(examples, preds)):
        buf.write(format_prediction(i, p, classes, gold=ex.label) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


@dataclass
class ExperimentConfig:
    train: Dataset
    oracle: Any
    templates: Mapping[int, PromptTemplate]
    template_id: int = 1
    kb: ConceptKB | None = None
    test: Dataset | None = None
    mode: str = FULL
    n: int = DEFAULT_N
    m: int = DEFAULT_M
    k: int = 5
    support_size: int = DEFAULT_SUPPORT
    freeze_verbalizer: bool = False
    # off by default: results then depend on the k-shot train set only
    select_on_support: bool = False
    selection_template_ids: tuple[int, ...] = ()
    selection_m_values: tuple[int, ...] = ()
    workers: int = 1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("n", "m", "k"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if not isinstance(self.support_size, int) or self.support_size < 0:
            raise ValueError(f"support_size must be an integer >= 0, got {self.support_size!r}")
        for tid in (self.template_id, *self.selection_template_ids):
            if tid not in self.templates:
                raise ValueError(f"template id {tid} not in {sorted(self.templates)}")
        if any(not isinstance(m, int) or m < 1 for m in self.selection_m_values):
            raise ValueError("selection M values must be integers >= 1")
        if self.mode != "plain" and self.kb is None:
            raise ValueError(f"mode {self.mode!r} needs a knowledge base")


def _build(config: ExperimentConfig, split: KShotSplit, m: int) -> Verbalizer:
    return build_verbalizer(config.kb, split.classes, split.texts_by_class(), config.oracle,
                            n=config.n, m=m, mode=config.mode, template_id=config.template_id)


def _select(config: ExperimentConfig, split: KShotSplit, verbalizer: Verbalizer) -> tuple[int, Verbalizer]:
    """Pick the (template, M) pair with the best accuracy on the support pool."""
    tids = config.selection_template_ids or (config.template_id,)
    ms = config.selection_m_values or (config.m,)
    best = None
    for m in ms:
        verb = verbalizer if m == config.m else _build(config, split, m)
        for tid in tids:
            acc = evaluate(config.oracle, config.templates[tid], verb, split.support, workers=config.workers).accuracy
            if best is None or acc > best[0]:
                best = (acc, tid, verb)
    logger.info("support selection: template %d, M=%s (support accuracy %.4f)", best[1], best[2].m, best[0])
    return best[1], best[2]


def run_once(config: ExperimentConfig, seed: int, out_dir: str | Path | None = None,
             verbalizer: Verbalizer | None = None) -> tuple[EvalResult, Verbalizer]:
    split = sample_kshot(config.train, config.k, config.support_size, seed, config.test)
    if verbalizer is None:
        verbalizer = _build(config, split, config.m)
    template_id = config.template_id
    if config.select_on_support and split.support:
        template_id, verbalizer = _select(config, split, verbalizer)

    pred_path = None
    if out_dir is not None:
        run_dir = Path(out_dir) / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "split.json").write_text(split.dumps(), encoding="utf-8", newline="\n")
        verbalizer.save(run_dir / "verbalizer.json")
        pred_path = run_dir / "predictions.tsv"
    result = evaluate(config.oracle, config.templates[template_id], verbalizer, split,
                      predictions_path=pred_path, workers=config.workers)
    return result, verbalizer


def run_repeats(config: ExperimentConfig, n_runs: int = DEFAULT_REPEATS, seeds: Sequence[int] | None = None,
                out_dir: str | Path | None = None) -> EvalResult:
    """Resample, rebuild the verbalizer, and evaluate once per seed; report mean and stddev.

    With ``config.freeze_verbalizer`` the first run's verbalizer is reused.
    Any failing run aborts the batch.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = list(range(n_runs)) if seeds is None else list(seeds)
    if len(seeds) != n_runs:
        raise ValueError(f"got {len(seeds)} seeds for {n_runs} runs")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    config.validate()
    runs = []
    frozen = None
    for seed in seeds:
        result, verb = run_once(config, seed, out_dir, verbalizer=frozen)
        if config.freeze_verbalizer:
            frozen = verb
        runs.append(result)
    return EvalResult.from_runs(runs, seeds)


SWEEP_AXES = {"N": "n", "M": "m", "template": "template_id", "support_size": "support_size", "k": "k"}


@dataclass
class SweepTable:
    axis: str
    rows: list[tuple[Any, EvalResult]]

    def dumps(self) -> str:
        return format_table(self.axis, self.rows)


def format_table(axis: str, rows: Iterable[tuple[Any, EvalResult]]) -> str:
    lines = [f"{axis}\tmean_accuracy\tstddev\tn_runs"]
    for value, r in rows:
        lines.append(f"{value}\t{r.mean:.4f}\t{r.stddev:.4f}\t{len(r.per_run)}")
    return "\n".join(lines) + "\n"


def sweep(config: ExperimentConfig, axis: str, values: Sequence, n_runs: int = DEFAULT_REPEATS,
          seeds: Sequence[int] | None = None, out_dir: str | Path | None = None) -> SweepTable:
    """One :func:`run_repeats` per value of ``axis`` with everything else fixed.

    All values are validated before the first run.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    attr = SWEEP_AXES[axis]
    configs = []
    for value in values:
        cfg = replace(config, **{attr: value})
        try:
            cfg.validate()
        except ValueError as err:
            raise ValueError(f"invalid {axis} value {value!r}: {err}") from None
        configs.append((value, cfg))
    rows = []
    for value, cfg in configs:
        sub = None if out_dir is None else Path(out_dir) / f"{axis}-{value}"
        rows.append((value, run_repeats(cfg, n_runs, seeds, sub)))
    return SweepTable(axis, rows)
