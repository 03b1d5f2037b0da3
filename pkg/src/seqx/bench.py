"""Synthetic multi-reference captioning benchmark and evaluation harness.

Each scene is an attribute tuple (color, object, action) rendered as a
one-hot feature vector plus several template paraphrases of the same fact,
e.g. "a red circle moves left" / "the red circle is moving left".  Every
input therefore has multiple correct captions, which is what makes the
diversity metrics meaningful: a model can be precise while covering one
phrasing or many.

Evaluation mirrors the two decoding protocols used for reporting: random
sampling of 5 captions per input (rs) and beam-search top 5 (bs), scoring
the mean semantic score of the decoded set next to its diversity report.
"""

from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .diversity import diversity_report
from .metrics import build_doc_freq, semantic_delta
from .model import ModelParams, Vocab, beam_search, sample_caption
from .objectives import TrainInstance

COLORS = ("red", "blue", "green", "yellow", "purple")
OBJECTS = ("circle", "square", "triangle", "star", "ring", "cube")
# (plain form, progressive form) of each action.
ACTIONS = (
    ("moves left", "is moving left"),
    ("moves right", "is moving right"),
    ("spins around", "is spinning around"),
    ("falls down", "is falling down"),
)

TEMPLATES = (
    "a {color} {object} {plain}",
    "the {color} {object} {progressive}",
    "there is a {color} {object} that {plain}",
    "a {object} that is {color} {plain}",
    "the {color} {object} {plain} now",
    "the {object} is {color} and {plain}",
)

FEATURE_DIM = len(COLORS) + len(OBJECTS) + len(ACTIONS)

# Environment variable capping evaluation parallelism.
THREADS_ENV = "SEQX_THREADS"


@dataclass
class Scene:
    """One benchmark input: id, feature vector and its reference captions.

    ``attributes`` records the generating (color, object, action index)
    tuple; it is not part of the on-disk schema and is None for loaded
    datasets.
    """

    id: str
    features: np.ndarray
    refs: list[str]
    attributes: tuple[str, str, int] | None = None

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and self.refs == other.refs
        )


@dataclass(frozen=True)
class EvalReport:
    strategy: str
    mean_cider: float
    div1: float
    div2: float
    mbleu4: float
    num_inputs: int
    padded_beams: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "mean_cider": self.mean_cider,
                "div1": self.div1,
                "div2": self.div2,
                "mbleu4": self.mbleu4,
                "num_inputs": self.num_inputs,
                "padded_beams": self.padded_beams,
            },
            indent=2,
        )


def benchmark_vocab() -> Vocab:
    """The fixed vocabulary spanned by every template instantiation."""
    texts = []
    for color in COLORS:
        for obj in OBJECTS:
            for plain, progressive in ACTIONS:
                for template in TEMPLATES:
                    texts.append(
                        template.format(color=color, object=obj, plain=plain, progressive=progressive)
                    )
    return Vocab.from_texts(texts)


def render_refs(color: str, obj: str, action_index: int, template_indices: Sequence[int]) -> list[str]:
    plain, progressive = ACTIONS[action_index]
    return [
        TEMPLATES[t].format(color=color, object=obj, plain=plain, progressive=progressive)
        for t in template_indices
    ]


def scene_features(color: str, obj: str, action_index: int) -> np.ndarray:
    """Concatenated one-hot encoding of the three attributes."""
    features = np.zeros(FEATURE_DIM)
    features[COLORS.index(color)] = 1.0
    features[len(COLORS) + OBJECTS.index(obj)] = 1.0
    features[len(COLORS) + len(OBJECTS) + action_index] = 1.0
    return features


def generate_dataset(
    num_scenes: int, refs_per_scene: int, noise: float = 0.0, seed: int = 0
) -> list[Scene]:
    """Deterministically sample scenes with ``refs_per_scene`` paraphrases each."""
    if num_scenes < 1:
        raise ValueError(f"num_scenes must be >= 1, got {num_scenes}")
    if not 1 <= refs_per_scene <= len(TEMPLATES):
        raise ValueError(
            f"refs_per_scene must be in 1..{len(TEMPLATES)} (template count), got {refs_per_scene}"
        )
    rng = np.random.default_rng(seed)
    # Separate stream so the noise level never changes which scenes we get.
    noise_rng = np.random.default_rng((seed, 1))
    scenes = []
    for i in range(num_scenes):
        color = COLORS[rng.integers(len(COLORS))]
        obj = OBJECTS[rng.integers(len(OBJECTS))]
        action_index = int(rng.integers(len(ACTIONS)))
        template_indices = rng.choice(len(TEMPLATES), size=refs_per_scene, replace=False)
        features = scene_features(color, obj, action_index)
        if noise:
            features = features + noise * noise_rng.normal(size=FEATURE_DIM)
        scenes.append(
            Scene(
                id=f"scene-{i:05d}",
                features=features,
                refs=render_refs(color, obj, action_index, [int(t) for t in template_indices]),
                attributes=(color, obj, action_index),
            )
        )
    return scenes


class DatasetFormatError(ValueError):
    pass


def save_dataset(scenes: Sequence[Scene], path: str | Path) -> None:
    with open(path, "w") as handle:
        for scene in scenes:
            record = {"id": scene.id, "features": list(scene.features), "refs": scene.refs}
            handle.write(json.dumps(record) + "\n")


def load_dataset(path: str | Path) -> list[Scene]:
    """Read a JSONL dataset; malformed lines report their line number."""
    scenes = []
    with open(path) as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scene = Scene(
                    id=record["id"],
                    features=np.asarray(record["features"], dtype=float),
                    refs=list(record["refs"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}: malformed scene on line {line_number}: {exc}") from exc
            scenes.append(scene)
    return scenes


def to_instances(scenes: Sequence[Scene], vocab: Vocab) -> list[TrainInstance]:
    """Tokenize scene references into training instances."""
    return [
        TrainInstance(
            input_id=scene.id,
            features=scene.features,
            refs=[vocab.encode(ref) for ref in scene.refs],
        )
        for scene in scenes
    ]


def _worker_count() -> int:
    value = os.environ.get(THREADS_ENV)
    if value is not None:
        count = int(value)
        if count < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {value}")
        return count
    return os.cpu_count() or 1


def evaluate_model(
    params: ModelParams,
    vocab: Vocab,
    scenes: Sequence[Scene],
    strategy: str,
    count: int = 5,
    seed: int = 0,
    max_len: int = 12,
) -> EvalReport:
    """Score a model over a dataset under one decoding protocol.

    ``rs`` samples ``count`` captions per input; ``bs`` takes the top
    ``count`` beam-search hypotheses (beam width = count), duplicating the
    best one if the beam completes fewer - the number of affected inputs is
    reported as ``padded_beams``.  Per input, the mean semantic score of the
    decoded set and its diversity report are computed, then averaged over
    inputs.  Document frequencies come from the evaluated dataset's own
    reference sets.
    """
    if strategy not in ("rs", "bs"):
        raise ValueError(f"strategy must be 'rs' or 'bs', got {strategy!r}")
    if not scenes:
        raise ValueError("evaluation dataset is empty")
    ref_sets = [[vocab.encode(ref) for ref in scene.refs] for scene in scenes]
    df = build_doc_freq(ref_sets)

    def score_scene(item):
        scene, refs = item
        padded = 0
        if strategy == "rs":
            rng = np.random.default_rng((seed, zlib.crc32(scene.id.encode())))
            captions = [sample_caption(scene.features, params, rng, max_len).caption for _ in range(count)]
        else:
            ranked = beam_search(scene.features, params, width=count, max_len=max_len)
            captions = [caption for caption, _ in ranked]
            if len(captions) < count:
                padded = 1
                captions += [captions[0]] * (count - len(captions))
        deltas = [semantic_delta(caption, refs, df) if caption else 0.0 for caption in captions]
        report = diversity_report(captions)
        return float(np.mean(deltas)), report.div1, report.div2, report.mbleu4, padded

    workers = min(_worker_count(), len(scenes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score_scene, zip(scenes, ref_sets)))
    else:
        rows = [score_scene(item) for item in zip(scenes, ref_sets)]

    ciders, div1s, div2s, mbleus, padded = zip(*rows)
    return EvalReport(
        strategy=strategy,
        mean_cider=float(np.mean(ciders)),
        div1=float(np.mean(div1s)),
        div2=float(np.mean(div2s)),
        mbleu4=float(np.mean(mbleus)),
        num_inputs=len(scenes),
        padded_beams=int(sum(padded)),
    )
