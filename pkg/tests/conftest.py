"""Fixtures for kdcontrast"""

import numpy as np
import pytest

from kdcontrast.models import DatasetManifest, Modality, StsPair
from kdcontrast.synthetic import build_grounded_fixture
from kdcontrast.teacher_store import FeatureTable, write_features
from kdcontrast.trainer import write_manifest


@pytest.fixture
def rng():
    """Seeded generator so results never depend on test order"""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_tables():
    """Four captions and four images; caption k describes image k"""
    gen = np.random.default_rng(7)
    text = gen.normal(size=(4, 6))
    visual = text + 0.3 * gen.normal(size=(4, 6))
    text_table = FeatureTable(Modality.TEXT, ("s0", "s1", "s2", "s3"), text).normalize()
    visual_table = FeatureTable(Modality.VISUAL, ("i0", "i1", "i2", "i3"), visual).normalize()
    return text_table, visual_table


@pytest.fixture
def tiny_manifest():
    return DatasetManifest(
        text_only_ids=["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"],
        multimodal_pairs=[("s0", "i0"), ("s1", "i1"), ("s2", "i2"), ("s3", "i3")],
    )


@pytest.fixture
def tiny_dev():
    return [
        StsPair("s0", "s1", 1.0),
        StsPair("s1", "s2", 3.5),
        StsPair("s2", "s3", 4.5),
        StsPair("s0", "s3", 2.0),
    ]


@pytest.fixture
def tiny_files(tmp_path, tiny_tables, tiny_manifest, tiny_dev):
    """The tiny dataset written to disk as the CLI expects it"""
    text_table, visual_table = tiny_tables
    paths = {
        "text": write_features(text_table, tmp_path / "text.emb"),
        "visual": write_features(visual_table, tmp_path / "visual.emb"),
        "manifest": write_manifest(tiny_manifest, tmp_path / "manifest.json"),
        "sts": tmp_path / "dev.tsv",
    }
    lines = [f"{p.sentence_a_id}\t{p.sentence_b_id}\t{p.gold_score}" for p in tiny_dev]
    paths["sts"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


@pytest.fixture(scope="session")
def grounded_fixture():
    return build_grounded_fixture(seed=0)
