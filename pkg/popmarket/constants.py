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

GRID_SIZE = 16
PIXEL_COUNT = GRID_SIZE * GRID_SIZE
MIN_EDIT_PIXELS = 1
MAX_EDIT_PIXELS = 24

DEFAULT_CHAINS = 128
DEFAULT_GENERATIONS = 60
DEFAULT_WINDOW = 12
DEFAULT_OUTPUT_DIR = "popmarket-out"

CRITERIA = ("appeal", "edit", "orig", "recog")
REFERENCE_GINI_PI = 0.69
REFERENCE_GINI_NPI = 0.61

ENV_VAR_PREFIX = "POPMARKET_"
ENV_VAR_NESTING = "__"
CI_ENV_VAR = "CI"

CHAINS_CSV = "chains.csv"
CHOICES_CSV = "choices.csv"
EDITS_CSV = "edits.csv"
METRICS_CSV = "metrics.csv"
PVALUES_CSV = "pvalues.csv"
FITNESS_CSV = "fitness.csv"
FIT_WEIGHTS_CSV = "fit_weights.csv"
FIT_SUMMARY_YML = "fit_summary.yml"
MANIFEST_YML = "manifest.yml"
NEWICK_DIR = "trees"
SVG_DIR = "plots"
