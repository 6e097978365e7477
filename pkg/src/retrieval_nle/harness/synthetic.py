"""Synthetic attribute-scene VQA task with templated explanations.

A scene is one value per attribute (size, color, shape).  Each sample asks
about one attribute of one scene.  The image reference is the scene
descriptor plus a per-sample instance tag (``"small red ball#train-00003"``),
so the synthetic embedder gives every sample its own noisy image vector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

from retrieval_nle.errors import ValidationError
from retrieval_nle.harness.data import DatasetSplits, Sample, write_dataset
from retrieval_nle.numerics import SeededRng

DEFAULT_ATTRIBUTES = {
    "size": ["small", "medium", "large"],
    "color": ["red", "blue", "green", "yellow", "purple", "orange", "white", "black"],
    "shape": ["ball", "cube", "cone", "ring", "box", "star"],
}

# (asked attribute, question, explanation); fields filled from the scene
TEMPLATES = (
    ("color", "what color is the {shape}", "the {shape} is {color}"),
    ("shape", "what shape is the {color} object", "the {color} object is a {shape}"),
    ("size", "what size is the {color} {shape}", "the {color} {shape} is {size}"),
)


@dataclass(frozen=True)
class SyntheticTaskConfig:
    n_scenes: int = 60
    attributes: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_ATTRIBUTES.items()})
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    sigma_img: float = 0.1
    seed: int = 0

    def __post_init__(self):
        missing = {"size", "color", "shape"} - set(self.attributes)
        if missing:
            raise ValidationError(f"attributes need values for {sorted(missing)}")
        combos = 1
        for vals in self.attributes.values():
            if not vals:
                raise ValidationError("every attribute needs at least one value")
            combos *= len(vals)
        if not 1 <= self.n_scenes <= combos:
            raise ValidationError(f"n_scenes must lie in [1, {combos}] for these attributes")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")


def scene_descriptor(scene: dict) -> str:
    return f"{scene['size']} {scene['color']} {scene['shape']}"


def make_sample(sample_id: str, scene: dict, template) -> Sample:
    attr, question, explanation = template
    return Sample(
        id=sample_id,
        image_ref=f"{scene_descriptor(scene)}#{sample_id}",
        question=question.format(**scene),
        answers=(scene[attr],),
        explanations=(explanation.format(**scene),),
    )


def gen_synthetic(cfg: SyntheticTaskConfig, out_dir=None) -> DatasetSplits:
    """Generate the three splits; write ``{train,val,test}.jsonl`` when ``out_dir`` is given."""
    rng = SeededRng(cfg.seed)
    keys = sorted(cfg.attributes)
    combos = list(itertools.product(*(cfg.attributes[k] for k in keys)))
    picked = rng.choice(len(combos), cfg.n_scenes, replace=False)
    scenes = [dict(zip(keys, combos[i])) for i in sorted(picked)]

    def draw(split: str, n: int) -> list[Sample]:
        out = []
        for i in range(n):
            scene = scenes[int(rng.integers(0, len(scenes)))]
            template = TEMPLATES[int(rng.integers(0, len(TEMPLATES)))]
            out.append(make_sample(f"{split}-{i:05d}", scene, template))
        return out

    splits = DatasetSplits(draw("train", cfg.n_train), draw("val", cfg.n_val), draw("test", cfg.n_test))
    splits.check_disjoint()
    if out_dir is not None:
        write_dataset(Path(out_dir), splits)
    return splits
