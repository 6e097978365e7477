"""Memory construction policy, evaluation with filtered scoring, oracle test."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.harness.data import DatasetSplits
from retrieval_nle.memory import ORACLE_MODES, MemoryStore, RetrievalConfig, build_store, retrieval_features
from retrieval_nle.metrics import METEOR_NOTE, MetricReport, ScoredPair, score_corpus, vqa_accuracy
from retrieval_nle.model.checkpoint import ModelBundle
from retrieval_nle.model.generation import GenerationConfig, generate_batch
from retrieval_nle.model.template import parse_prediction
from retrieval_nle.training.loop import image_features

PHASES = ("training", "inference")
GEN_BATCH = 64


def build_memory_for_phase(splits: DatasetSplits, phase: str, provider) -> MemoryStore:
    """Training phase: train split only.  Inference phase: train + val.  Never test."""
    if phase == "training":
        samples = list(splits.train)
    elif phase == "inference":
        samples = [*splits.train, *splits.val]
    else:
        raise ValidationError(f"unknown phase {phase!r}; choose training or inference")
    store = build_store(samples, provider)
    leaked = {s.id for s in splits.test} & set(store.ids)
    if leaked:
        raise RuntimeError(f"test ids leaked into the {phase} memory: {sorted(leaked)[:5]}")
    return store


@dataclass
class Prediction:
    id: str
    text: str
    answer: str
    explanation: str
    wellformed: bool
    correct: bool
    retrieved: list[str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvaluationReport:
    mode: str
    accuracy: float
    n_total: int
    n_correct: int
    unfiltered: MetricReport
    filtered: MetricReport
    predictions: list[Prediction] = field(default_factory=list)

    def to_dict(self, with_predictions: bool = True) -> dict:
        d = {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "unfiltered": self.unfiltered.to_dict(),
            "filtered": self.filtered.to_dict(),
            "filtered_empty": self.filtered.empty,
            "note": METEOR_NOTE,
        }
        if with_predictions:
            d["predictions"] = [p.to_dict() for p in self.predictions]
        return d

    def to_json(self, with_predictions: bool = True) -> str:
        return json.dumps(self.to_dict(with_predictions), indent=2, sort_keys=True)

    def table(self) -> str:
        return format_table([self])


def format_table(reports: Sequence[EvaluationReport], filtered: bool = True) -> str:
    """Plain-text table with the B4 / M / R / C / Acc layout.

    B4, M and R are shown x100; C is the 0-10 CIDEr value x10.
    """
    head = f"{'mode':<12}|{'B4':>7}{'M':>7}{'R':>7}{'C':>8} |{'Acc':>7}{'n':>6}"
    lines = [f"{'filtered' if filtered else 'unfiltered'} scores", head, "-" * len(head)]
    for r in reports:
        m = r.filtered if filtered else r.unfiltered
        c = f"{m.cider * 10:8.1f}" if m.cider is not None else f"{'-':>8}"
        lines.append(f"{r.mode:<12}|{m.bleu4 * 100:7.1f}{m.meteor_lite * 100:7.1f}{m.rouge_l * 100:7.1f}{c} "
                     f"|{r.accuracy:7.2f}{m.n:6d}")
    return "\n".join(lines)


def evaluate(model: ModelBundle, store: MemoryStore, samples: Sequence, provider,
             retrieval_cfg: RetrievalConfig = RetrievalConfig(),
             gen_cfg: GenerationConfig = GenerationConfig()) -> EvaluationReport:
    """Retrieve, generate and score every sample in order.

    Malformed generations count as wrong answers with an empty explanation.
    Explanation metrics compare the generated explanation clause with all
    reference explanations; the filtered report keeps only samples whose
    answer is correct.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("cannot evaluate an empty split")
    cfg = model.config
    if retrieval_cfg.mode == "zero":
        retr = np.zeros((len(samples), 2, cfg.d_feat))
        retrieved = [[] for _ in samples]
    else:
        retr, results = retrieval_features(store, samples, provider, retrieval_cfg)
        retrieved = [r.ids for r in results]
    img = np.stack([image_features(provider, s.image_ref, cfg.n_img_tokens) for s in samples])

    texts: list[str] = []
    for start in range(0, len(samples), GEN_BATCH):
        chunk = slice(start, start + GEN_BATCH)
        texts += generate_batch(model.params, cfg, model.tokenizer, [s.question for s in samples[chunk]],
                                img[chunk], retr[chunk], gen_cfg)

    preds = []
    for s, text, ids in zip(samples, texts, retrieved):
        answer, explanation, ok = parse_prediction(text)
        if not ok:
            explanation = ""
        correct = ok and vqa_accuracy(answer, s.answers)
        preds.append(Prediction(s.id, text, answer, explanation, ok, correct, ids))

    pairs = [ScoredPair.from_text(p.explanation, s.explanations) for p, s in zip(preds, samples)]
    n_correct = sum(p.correct for p in preds)
    return EvaluationReport(
        mode=retrieval_cfg.mode,
        accuracy=100.0 * n_correct / len(samples),
        n_total=len(samples),
        n_correct=n_correct,
        unfiltered=score_corpus(pairs),
        filtered=score_corpus([pair for pair, p in zip(pairs, preds) if p.correct]),
        predictions=preds,
    )


def oracle_test(model: ModelBundle, store: MemoryStore, samples: Sequence, provider, oracle_mode: str,
                gen_cfg: GenerationConfig = GenerationConfig(), k: int = 10) -> EvaluationReport:
    """Evaluate with retrieval driven by ground-truth answer/explanation similarity."""
    if oracle_mode not in ORACLE_MODES:
        raise ValidationError(f"oracle test needs one of {', '.join(ORACLE_MODES)}, got {oracle_mode!r}")
    return evaluate(model, store, samples, provider, RetrievalConfig(k=k, mode=oracle_mode), gen_cfg)
