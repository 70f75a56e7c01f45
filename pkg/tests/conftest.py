import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pava.dataset import ClipRecord, DatasetManifest, SynthConfig, synth_dataset


def make_manifest(class_sizes: dict[str, int], variant: str = "original") -> DatasetManifest:
    """In-memory manifest with fake paths, for code paths that never read clips."""
    records = []
    for label, n in class_sizes.items():
        for i in range(n):
            records.append(
                ClipRecord(
                    clip_id=f"{label}_{i:04d}",
                    path=f"/nonexistent/{label}_{i:04d}.npy",
                    label=label,
                    subject_id=f"s{i % 3}",
                    variant=variant,
                )
            )
    return DatasetManifest(records)


def random_frames(rng: np.random.Generator, t: int, h: int, w: int) -> np.ndarray:
    return rng.random((t, h, w, 3))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Shared small synthetic dataset: 3 classes x 4 clips, 12 frames, 48x48."""
    root = tmp_path_factory.mktemp("tinyds")
    config = SynthConfig(
        classes=3, clips_per_class=4, frames=12, resolution=(48, 48), seed=11, subjects=3
    )
    manifest = synth_dataset(config, root)
    return config, manifest


# Populated by the criterion decorator in test_acceptance.py; printed as a
# dedicated PASS/FAIL section at the end of the run.
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, summary = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status} - {summary}")
