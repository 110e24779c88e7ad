"""Shared drivers for command-line tests."""

import json
from pathlib import Path

from flame.io_cli import main

SCENARIOS = {
    "scenarios": [
        {"label": "A", "episode_durations": [], "covariate_profile": [1.0, 0.0]},
        {"label": "B", "episode_durations": [1.0] * 30, "covariate_profile": [1.0, 0.0]},
        {"label": "C", "episode_durations": [30.0], "covariate_profile": [1.0, 0.0]},
    ],
    "contrasts": [["B", "C"]],
}

PIPELINE_OUTPUTS = ("subjects.csv", "episodes.csv", "config.json", "draws.npz", "raf.csv",
                    "diagnostics.json", "contrast.json")


def run_pipeline(out, seed=7, I=200, n_jobs=1, sampler_flags=()):
    """simulate -> fit -> summarize -> contrast in ``out``; returns the exit codes."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = str(out / "config.json")
    (out / "scenarios.json").write_text(json.dumps(SCENARIOS))
    codes = [main(["simulate", "--shape", "linear", "--event-rate", "30", "--I", str(I),
                   "--seed", str(seed), "--out-dir", str(out)])]
    codes.append(main(["fit", "--subjects", str(out / "subjects.csv"),
                       "--episodes", str(out / "episodes.csv"), "--config", cfg,
                       "--seed", str(seed), "--n-jobs", str(n_jobs), "--out-dir", str(out),
                       *sampler_flags]))
    codes.append(main(["summarize", "--draws", str(out / "draws.npz"), "--config", cfg,
                       "--out-dir", str(out)]))
    codes.append(main(["contrast", "--draws", str(out / "draws.npz"), "--config", cfg,
                       "--scenarios", str(out / "scenarios.json"), "--out-dir", str(out)]))
    return codes
