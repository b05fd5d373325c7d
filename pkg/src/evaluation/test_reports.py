"""
Test suite for trial reports and their JSON/CSV artifacts
"""

import json

import pytest
from pydantic import ValidationError

from evaluation.reports import (
    TrialReport,
    aggregate,
    config_fingerprint,
    read_reports_json,
    summarize,
    write_error_profile,
    write_reports_csv,
    write_reports_json,
)
from model.gritlp import ModelConfig
from training.optim import TrainConfig


def _report(trial, rmse, flags="graph+attention+lr_skip+localized", **overrides):
    fields = dict(
        variant_flags=flags,
        n_blocks=8,
        alpha0=0.25,
        trial=trial,
        seed=trial,
        rmse=rmse,
        boundary_rmse={1: rmse + 0.5, 2: rmse + 0.25, 5: rmse + 0.1, 10: rmse},
        alpha_values=[0.3] * 8,
    )
    fields.update(overrides)
    return TrialReport(**fields)


class TestSummarize:
    def test_single_trial_has_zero_std(self):
        summary = summarize([2.5])
        assert (summary.mean, summary.std, summary.count) == (2.5, 0.0, 1)

    def test_identical_values_have_zero_std(self):
        assert summarize([1.75] * 5).std == 0.0

    def test_population_std(self):
        summary = summarize([1.0, 3.0])
        assert summary.mean == 2.0
        assert summary.std == 1.0


class TestTrialReport:
    def test_negative_rmse_is_rejected(self):
        with pytest.raises(ValidationError):
            _report(1, -0.1)

    def test_alpha_outside_unit_interval_is_rejected(self):
        with pytest.raises(ValidationError):
            _report(1, 1.0, alpha_values=[0.5, 1.2])

    def test_fingerprint_is_stable_and_sensitive(self):
        first = config_fingerprint(ModelConfig(), TrainConfig())
        assert first == config_fingerprint(ModelConfig(), TrainConfig())
        assert first != config_fingerprint(ModelConfig(alpha0=0.5), TrainConfig())
        assert len(first) == 16


class TestAggregate:
    def test_groups_by_variant_in_first_seen_order(self):
        reports = [_report(1, 2.0), _report(2, 4.0), _report(1, 3.0, flags="graph+localized", n_blocks=0, alpha_values=[])]
        rows = aggregate(reports)
        assert [row["variant_flags"] for row in rows] == ["graph+attention+lr_skip+localized", "graph+localized"]
        assert rows[0]["rmse"] == {"mean": 3.0, "std": 1.0, "count": 2}
        assert rows[1]["trials"] == 1
        assert rows[1]["rmse"]["std"] == 0.0


class TestArtifacts:
    def test_json_round_trip(self, tmp_path):
        reports = [_report(1, 2.0), _report(2, 2.5)]
        path = tmp_path / "reports.json"
        write_reports_json(reports, path, extra={"command": "ablate"})
        assert read_reports_json(path) == reports
        payload = json.loads(path.read_text())
        assert payload["format_version"] == 1
        assert payload["command"] == "ablate"
        assert len(payload["summary"]) == 1

    def test_csv_header_and_rows(self, tmp_path):
        path = tmp_path / "reports.csv"
        write_reports_csv([_report(1, 2.0), _report(2, 4.0)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "variant_flags,n_blocks,alpha0,trial,rmse,brmse_p1,brmse_p2,brmse_p5,brmse_p10"
        assert lines[1].startswith("graph+attention+lr_skip+localized,8,0.25,1,2.0,2.5")
        mean_row = lines[3].split(",")
        assert mean_row[:7] == ["graph+attention+lr_skip+localized", "8", "0.25", "mean", "3.0", "3.5", "3.25"]
        assert float(mean_row[7]) == pytest.approx(3.1)
        assert lines[4].startswith("graph+attention+lr_skip+localized,8,0.25,std,1.0")
        assert len(lines) == 5

    def test_error_profile_csv(self, tmp_path):
        path = tmp_path / "profile.csv"
        write_error_profile([0.5, 0.25, 1.0], path)
        assert path.read_text().splitlines() == ["column,mae", "0,0.5", "1,0.25", "2,1.0"]
