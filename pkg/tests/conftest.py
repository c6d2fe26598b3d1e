"""
Copyright 2026 The popmarket Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

from pathlib import Path

import numpy as np
import pytest

from popmarket.config import AnalysisSettings, ExperimentConfig, InferenceSettings
from popmarket.rng import generator_from_seed


@pytest.fixture
def rng() -> np.random.Generator:
    return generator_from_seed(20260101)


@pytest.fixture
def smoke_config(tmp_path: Path) -> ExperimentConfig:
    return ExperimentConfig(
        chains=2,
        generations=3,
        output_dir=str(tmp_path / "out"),
        analysis=AnalysisSettings(n_resamples=200, n_bootstrap=20, or_samples=1000),
        inference=InferenceSettings(n_starts=2, n_bootstrap=0),
    )


@pytest.fixture
def small_config(tmp_path: Path) -> ExperimentConfig:
    return ExperimentConfig(
        chains=6,
        generations=16,
        output_dir=str(tmp_path / "out"),
        analysis=AnalysisSettings(n_resamples=500, max_lag=4, n_bootstrap=50, late_from=12, or_samples=2000),
        inference=InferenceSettings(n_starts=2, n_bootstrap=0, max_iter=100),
    )
