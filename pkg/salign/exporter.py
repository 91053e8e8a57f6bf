"""
Artifact export module for the S-Align Lab.

This module provides the Exporter class, which writes run artifacts (resolved
configs, run descriptions, metric reports, result tables) into a run's output
directory as JSON, JSON lines or CSV. Every command writes through it, so file
naming and encoding are the same everywhere.
"""

import json
import logging
import types
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import pandas as pd

import sys
sys.path.append(str(Path(__file__).parent.parent))
from config import DEFAULT_OUTPUT_DIR

Records = Union[List[Dict[str, Any]], Iterator, pd.DataFrame]


class Exporter:
    """
    Handles writing artifacts to disk.

    The `export` method routes to the format-specific writer and resolves
    relative filenames against the exporter's output directory.
    """

    FORMATS = ('json', 'jsonl', 'csv')

    def __init__(self, output_dir: Optional[Union[str, Path]] = None):
        self.logger = logging.getLogger("Exporter")
        self.output_dir = Path(output_dir or DEFAULT_OUTPUT_DIR)

    def path_for(self, filename: Union[str, Path], extension: str) -> Path:
        """Absolute path of `filename` with the given extension."""
        path = Path(filename)
        if not path.is_absolute():
            path = self.output_dir / path
        if path.suffix != f'.{extension}':
            path = path.with_suffix(f'.{extension}')
        return path

    def export(self, data: Any, filename: Union[str, Path], format: str = 'json',
               columns: Optional[Sequence[str]] = None) -> Path:
        """
        Writes `data` to `filename` in the chosen format.

        Args:
            data: A mapping (json), or a list/iterator of records or a DataFrame.
            filename: Output name; relative names land in the output directory.
            format: One of 'json', 'jsonl', 'csv'.
            columns: Fixed column order for CSV output.

        Returns:
            The written path.
        """
        format = format.lower()
        if format not in self.FORMATS:
            raise ValueError(f"Unsupported export format: {format}")
        if isinstance(data, types.GeneratorType):
            data = list(data)

        path = self.path_for(filename, format)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.logger.debug(f"Exporting {format.upper()} to {path}")

        if format == 'json':
            self.to_json(data, path)
        elif format == 'jsonl':
            self.to_jsonl(data, path)
        else:
            self.to_csv(data, path, columns)
        return path

    def to_json(self, data: Any, path: Union[str, Path]) -> None:
        """Writes one JSON document with sorted keys."""
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write('\n')
        self.logger.info(f"Wrote {path}")

    def to_jsonl(self, records: Records, path: Union[str, Path], append: bool = False) -> None:
        """Writes one JSON object per line; with `append`, adds to the end of an existing file."""
        if isinstance(records, pd.DataFrame):
            records = records.to_dict(orient='records')
        records = list(records)
        with open(path, 'a' if append else 'w', encoding='utf-8') as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + '\n')
        if append:
            self.logger.debug(f"Appended {len(records)} records to {path}")
        else:
            self.logger.info(f"Wrote {path}")

    def to_csv(self, records: Records, path: Union[str, Path], columns: Optional[Sequence[str]] = None) -> None:
        """Writes a table; missing columns are filled with empty values."""
        frame = records if isinstance(records, pd.DataFrame) else pd.DataFrame(list(records))
        if columns is not None:
            for col in columns:
                if col not in frame.columns:
                    frame[col] = None
            frame = frame[list(columns)]
        if frame.empty:
            self.logger.warning(f"No rows to export to {path}")
        frame.to_csv(path, index=False, encoding='utf-8')
        self.logger.info(f"Wrote {len(frame)} rows to {path}")
