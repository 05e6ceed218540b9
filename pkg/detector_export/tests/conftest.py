from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def dataset_manifest() -> Path:
    return FIXTURES / "dataset10" / "manifest.txt"


@pytest.fixture(scope="session")
def frames_dir() -> Path:
    return FIXTURES / "frames"


@pytest.fixture(scope="session")
def weights_path() -> Path:
    return FIXTURES / "detector.pt"


@pytest.fixture(scope="session")
def golden_detections() -> Path:
    return FIXTURES / "golden_detections.txt"
