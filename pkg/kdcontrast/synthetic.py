"""Synthetic grounded dataset where teacher similarity is the STS gold score.

Concepts are drawn on a low-dimensional sphere embedded in the teacher
space, so pairwise concept similarities cover the whole [-1, 1] range.
Every concept gets a few captions (noisy text features) and one image
(a noisy visual feature); unrelated text-only sentences fill D. Dev pairs
are caption pairs scored by ``(cos(t_a, t_b) + 1) * 2.5``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from .models import DatasetManifest, Modality, StsPair
from .numerics import unit_rows
from .teacher_store import FeatureTable, write_features
from .trainer import write_manifest

logger = logging.getLogger(__name__)


@dataclass
class GroundedFixture:
    text_table: FeatureTable
    visual_table: FeatureTable
    manifest: DatasetManifest
    dev_pairs: List[StsPair]


def _noisy(rng: np.random.Generator, base: np.ndarray, noise: float) -> np.ndarray:
    dim = base.shape[-1]
    return base + noise / np.sqrt(dim) * rng.normal(size=base.shape)


def build_grounded_fixture(
    seed: int = 0,
    concepts: int = 64,
    captions_per_concept: int = 4,
    text_only: int = 512,
    dim: int = 32,
    concept_rank: int = 3,
    noise: float = 0.1,
    dev_pairs: int = 200,
) -> GroundedFixture:
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, concept_rank)))
    _, directions = unit_rows(rng.normal(size=(concepts, concept_rank)), side="concepts")
    centers = directions @ basis.T

    caption_ids, caption_rows, pairs = [], [], []
    image_ids = [f"img{c:03d}" for c in range(concepts)]
    for c in range(concepts):
        for k in range(captions_per_concept):
            sid = f"cap{c:03d}_{k}"
            caption_ids.append(sid)
            caption_rows.append(_noisy(rng, centers[c], noise))
            pairs.append((sid, image_ids[c]))
    _, text = unit_rows(np.array(caption_rows), side="captions")
    _, visual = unit_rows(_noisy(rng, centers, noise), side="images")

    text_only_ids = [f"wiki{k:04d}" for k in range(text_only)]
    manifest = DatasetManifest(text_only_ids=text_only_ids, multimodal_pairs=pairs)

    dev = []
    seen = set()
    while len(dev) < min(dev_pairs, len(caption_ids) * (len(caption_ids) - 1) // 2):
        a, b = sorted(int(x) for x in rng.choice(len(caption_ids), size=2, replace=False))
        if (a, b) in seen:
            continue
        seen.add((a, b))
        gold = float(np.clip((text[a] @ text[b] + 1.0) * 2.5, 0.0, 5.0))
        dev.append(StsPair(caption_ids[a], caption_ids[b], gold))

    logger.debug(
        "synthetic_fixture | captions=%d | images=%d | text_only=%d | dev_pairs=%d",
        len(caption_ids), concepts, text_only, len(dev),
    )
    return GroundedFixture(
        text_table=FeatureTable(Modality.TEXT, tuple(caption_ids), text, normalized=True),
        visual_table=FeatureTable(Modality.VISUAL, tuple(image_ids), visual, normalized=True),
        manifest=manifest,
        dev_pairs=dev,
    )


def write_fixture(fixture: GroundedFixture, directory: Union[str, Path]) -> Path:
    """Write text.emb, visual.emb, manifest.json and dev.tsv into ``directory``"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_features(fixture.text_table, directory / "text.emb")
    write_features(fixture.visual_table, directory / "visual.emb")
    write_manifest(fixture.manifest, directory / "manifest.json")
    lines = [f"{p.sentence_a_id}\t{p.sentence_b_id}\t{p.gold_score!r}" for p in fixture.dev_pairs]
    (directory / "dev.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory
