"""
Pytest-style tests for the exporter.py module.

This test suite verifies the functionality of the Exporter class, including
routing to the correct format, path resolution against the output directory,
and data integrity for each export type (JSON, JSON lines, CSV).
"""

import csv
import json

import pandas as pd
import pytest

from salign.exporter import Exporter


@pytest.fixture
def sample_records():
    """Two evaluation report lines."""
    return [
        {'task': 'st', 'metric': 'bleu', 'value': 12.5, 'n_sentences': 4, 'beam': 2, 'checkpoint': 'a.pt'},
        {'task': 'asr', 'metric': 'wer', 'value': 0.75, 'n_sentences': 4, 'beam': None, 'checkpoint': 'a.pt'},
    ]


class TestExporter:
    """Test suite for the Exporter class."""

    def test_export_json_round_trips(self, tmp_path):
        """A mapping is written as one document with sorted keys."""
        exporter = Exporter(tmp_path)
        path = exporter.export({'b': 1, 'a': [1, 2]}, "run_info")

        assert path == tmp_path / "run_info.json"
        text = path.read_text(encoding='utf-8')
        assert json.loads(text) == {'a': [1, 2], 'b': 1}
        assert text.index('"a"') < text.index('"b"')

    def test_export_jsonl_one_record_per_line(self, tmp_path, sample_records):
        exporter = Exporter(tmp_path)
        path = exporter.export(sample_records, "report", format='jsonl')

        lines = path.read_text(encoding='utf-8').splitlines()
        assert [json.loads(line) for line in lines] == sample_records

    def test_export_jsonl_from_dataframe(self, tmp_path, sample_records):
        exporter = Exporter(tmp_path)
        path = exporter.export(pd.DataFrame(sample_records), "report", format='jsonl')
        assert len(path.read_text(encoding='utf-8').splitlines()) == 2

    def test_jsonl_append_extends_file(self, tmp_path, sample_records):
        """Appending adds lines after the existing ones; a plain write replaces them."""
        exporter = Exporter(tmp_path)
        path = tmp_path / "log.jsonl"
        exporter.to_jsonl(sample_records[:1], path)
        exporter.to_jsonl(sample_records[1:], path, append=True)
        assert [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()] == sample_records

        exporter.to_jsonl(sample_records[1:], path)
        assert len(path.read_text(encoding='utf-8').splitlines()) == 1

    def test_export_csv_with_columns(self, tmp_path, sample_records):
        """CSV output follows the requested column order and fills missing columns."""
        exporter = Exporter(tmp_path)
        path = exporter.export(sample_records, "table", format='csv', columns=['metric', 'value', 'seed'])

        with open(path, 'r', encoding='utf-8') as f:
            reader = csv.DictReader(f)
            rows = list(reader)
        assert reader.fieldnames == ['metric', 'value', 'seed']
        assert rows[0] == {'metric': 'bleu', 'value': '12.5', 'seed': ''}

    def test_export_csv_with_generator(self, tmp_path, sample_records):
        exporter = Exporter(tmp_path)
        path = exporter.export((r for r in sample_records), "gen", format='csv')
        assert len(pd.read_csv(path)) == 2

    def test_export_empty_csv_warns(self, tmp_path, caplog):
        exporter = Exporter(tmp_path)
        exporter.export([], "empty", format='csv', columns=['a', 'b'])
        assert "No rows to export" in caplog.text
        assert (tmp_path / "empty.csv").read_text(encoding='utf-8').strip() == "a,b"

    def test_format_is_case_insensitive(self, tmp_path):
        path = Exporter(tmp_path).export({'x': 1}, "x", format='JSON')
        assert path.suffix == '.json'

    def test_unsupported_format_raises_error(self, tmp_path):
        """Tests that an unsupported format raises a ValueError."""
        with pytest.raises(ValueError, match="Unsupported export format"):
            Exporter(tmp_path).export({'x': 1}, "x", format='xlsx')

    def test_path_for_relative_and_absolute(self, tmp_path):
        exporter = Exporter(tmp_path / "out")
        assert exporter.path_for("eval/report", "json") == tmp_path / "out" / "eval" / "report.json"
        assert exporter.path_for(tmp_path / "abs.csv", "csv") == tmp_path / "abs.csv"

    def test_nested_directories_are_created(self, tmp_path):
        path = Exporter(tmp_path).export({'x': 1}, "deep/nested/file")
        assert path.exists()

    def test_default_output_dir(self, temp_config_dirs, monkeypatch):
        """Without an explicit directory the configured default is used."""
        monkeypatch.setattr("salign.exporter.DEFAULT_OUTPUT_DIR", str(temp_config_dirs / "output"))
        assert Exporter().output_dir == temp_config_dirs / "output"
