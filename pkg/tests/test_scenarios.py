"""End-to-end smoke runs of every cataloged scenario with light budgets."""

from pathlib import Path

import pytest
import yaml

from degenflow.config import ScenarioConfig, validate_config
from degenflow.scenarios import ANCHORS, SCENARIOS, run_scenario

LIGHT_KNOBS = {
    "kinetic_bismut": {"n_paths": 4000, "n_steps": 64},
    "gradient_scaling": {"budget": 40000},
    "gramian_sweep": {},
    "picard_lambda_sweep": {"base_points": 64},
    "galerkin_wave": {"n_reference": 9, "lam": 64.0},
    "uniqueness_rough": {"steps": [128, 256]},
    "representation_residual": {"rough_gridpoints": 257, "rough_timenodes": 33,
                                "n_paths": 4},
    "bihari_envelope": {"n_paths": 100, "n_steps": 128},
}

EXPECTED_FILES = {
    "kinetic_bismut": "gradients.csv",
    "gradient_scaling": "scaling.csv",
    "gramian_sweep": "gramian.csv",
    "picard_lambda_sweep": "lambda_sweep.csv",
    "galerkin_wave": "galerkin.csv",
    "uniqueness_rough": "uniqueness.csv",
    "representation_residual": "residuals.csv",
    "bihari_envelope": "envelope.csv",
}


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenario_runs_and_cites_anchors(name, tmp_path):
    raw = {"experiment": {"scenario": name, "seed": 7, **LIGHT_KNOBS[name]},
           "output": {"dir": str(tmp_path)}}
    assert validate_config(raw) == []
    cfg = ScenarioConfig(raw=raw)
    lines = run_scenario(cfg, tmp_path)
    assert lines, "scenario produced no summary lines"
    for line in lines:
        assert line.startswith("["), f"summary line without anchor: {line}"
        anchor = line[1:line.index("]")]
        assert anchor in ANCHORS
    assert (tmp_path / EXPECTED_FILES[name]).exists()
    if name == "kinetic_bismut":
        assert (tmp_path / "paths.dgfb").exists()
    if name == "representation_residual":
        assert (tmp_path / "rough_field.dgfb").exists()
        assert (tmp_path / "rough_trajectory.dgfb").exists()


def test_catalog_has_exactly_eight_scenarios():
    assert len(SCENARIOS) == 8
    for info in SCENARIOS.values():
        assert info.anchor in ANCHORS
        assert info.description
