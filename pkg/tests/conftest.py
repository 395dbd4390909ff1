import shutil
import sys
import tempfile
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.commands.synth import template_from_truth  # noqa: E402
from src.config import build_config  # noqa: E402
from src.signal_io import synth_ppg  # noqa: E402


@pytest.fixture
def temp_dir():
    """Create a temporary output directory"""
    path = tempfile.mkdtemp()
    yield Path(path)
    shutil.rmtree(path)


@pytest.fixture(scope="session")
def synth_record():
    """Clean 20 s synthetic record at 72 bpm with its ground truth"""
    return synth_ppg(hr_profile_bpm=72.0, fs=300.0, duration_s=20.0, seed=0)


@pytest.fixture(scope="session")
def prime_template(synth_record):
    """Prime template cut from the first complete synthetic cycle"""
    _, truth = synth_record
    return template_from_truth(truth)


@pytest.fixture
def run_config(temp_dir):
    """Default configuration writing into the temporary directory"""
    return build_config({"output_dir": str(temp_dir)})
