#  Copyright (c) 2021 KTH Royal Institute of Technology
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
from __future__ import annotations

import abc
import datetime
import math
from os import PathLike
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import tables

from .model import BlockState
from .schedulers import RunRecord

__all__ = ['RecordWriter', 'record_columns', 'record_row']

#: fixed 17-significant-digit float formatting for the CSV output
FLOAT_FORMAT = '%.17g'


def record_columns(m: int) -> List[str]:
    """
    Column names of the record table for m blocks; block numbers in column
    names are 1-based.
    """
    blocks = range(1, m + 1)
    return (['k', 'objective', 'w2sq_total']
            + [f'w2sq_block_{j}' for j in blocks]
            + [f'fv_var_block_{j}' for j in blocks]
            + [f'foc_block_{j}' for j in blocks]
            + ['wall_ms'])


def record_row(record: RunRecord, m: int, wall_time: bool = True) \
        -> Dict[str, float]:
    w2sq_blocks = record.w2sq_blocks \
        if record.w2sq_blocks is not None else (math.nan,) * m
    values = ([record.k, record.objective, record.w2sq_total]
              + list(w2sq_blocks) + list(record.fv_var) + list(record.foc)
              + [record.wall_ms if wall_time else 0.0])
    return dict(zip(record_columns(m), values))


class RecordWriter(abc.ABC):
    """
    Sink for the per-iteration records of a run.

    This class is an interface; use RecordWriter.create() to obtain a writer
    for an output directory.
    """

    @abc.abstractmethod
    def record(self, record: RunRecord) -> None:
        """
        Queue one iteration record.

        Parameters
        ----------
        record
            The record; its k must exceed that of the previous one.
        """
        pass

    def write_state(self, state: BlockState) -> None:
        """
        Store a (final) block state. Writers without array storage ignore
        it.
        """
        pass

    @abc.abstractmethod
    def flush(self) -> None:
        """
        Write queued records to disk.
        """
        pass

    @abc.abstractmethod
    def close(self) -> None:
        """
        Flushes and closes the writer.
        """
        pass

    def __enter__(self) -> RecordWriter:
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    @staticmethod
    def create(directory: PathLike,
               m: int,
               hdf5: bool = False,
               wall_time: bool = True) -> RecordWriter:
        """
        Creates the record writers for an output directory.

        Parameters
        ----------
        directory
            Output directory, created if missing.
        m
            Number of blocks.
        hdf5
            Also write records.h5 next to records.csv. The HDF5 file must
            not exist yet, otherwise a FileExistsError is raised.
        wall_time
            Record wall-clock times; when False wall_ms is written as 0 so
            reruns produce identical files.

        Returns
        -------
        writer
            A RecordWriter instance.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv = _CsvRecordWriter(directory / 'records.csv', m, wall_time)
        if not hdf5:
            return csv
        try:
            h5 = _Hdf5RecordWriter(directory / 'records.h5', m, wall_time)
        except Exception:
            csv.close()
            raise
        return _FanOutWriter([csv, h5])


class _CsvRecordWriter(RecordWriter):
    def __init__(self, path: Path, m: int, wall_time: bool):
        super(_CsvRecordWriter, self).__init__()
        self._path = path
        self._m = m
        self._wall_time = wall_time
        self._pending: List[Dict[str, float]] = []
        self._header_written = False
        self._last_k: Optional[int] = None

        # the CSV describes a single run and is regenerated every time
        if path.exists():
            path.unlink()

    def record(self, record: RunRecord) -> None:
        if self._last_k is not None and record.k <= self._last_k:
            raise ValueError(f'Record k={record.k} does not follow '
                             f'k={self._last_k}.')
        self._last_k = record.k
        self._pending.append(record_row(record, self._m, self._wall_time))

    def flush(self) -> None:
        if not self._pending and self._header_written:
            return
        frame = pd.DataFrame(self._pending, columns=record_columns(self._m))
        frame['k'] = frame['k'].astype(np.int64)
        frame.to_csv(self._path, mode='a', index=False,
                     header=not self._header_written,
                     float_format=FLOAT_FORMAT, na_rep='nan',
                     lineterminator='\n')
        self._header_written = True
        self._pending.clear()

    def close(self) -> None:
        self.flush()


class _Hdf5RecordWriter(RecordWriter):
    def __init__(self, path: Path, m: int, wall_time: bool):
        super(_Hdf5RecordWriter, self).__init__()
        if path.exists():
            # file exists, don't delete but raise an error
            raise FileExistsError(path)

        self._m = m
        self._wall_time = wall_time
        self._file = tables.open_file(str(path), mode='w',
                                      title='WPCG Run Records')
        description = {name: tables.Float64Col(pos=i)
                       for i, name in enumerate(record_columns(m))}
        description['k'] = tables.Int64Col(pos=0)
        self._table = self._file.create_table(self._file.root, 'records',
                                              description=description)
        self._file.root._v_attrs.created = \
            datetime.datetime.now().isoformat()
        self._file.root._v_attrs.finished = 'unfinished'

    def record(self, record: RunRecord) -> None:
        row = self._table.row
        for name, value in record_row(record, self._m,
                                      self._wall_time).items():
            row[name] = value
        row.append()

    def write_state(self, state: BlockState) -> None:
        group = self._file.create_group(self._file.root, f'state_{state.k}',
                                        title=f'Blocks at iteration '
                                              f'{state.k}')
        for j, block in enumerate(state.blocks):
            self._file.create_array(group, f'block_{j + 1}', block.points)

    def flush(self) -> None:
        self._table.flush()

    def close(self) -> None:
        self.flush()
        self._file.root._v_attrs.finished = \
            datetime.datetime.now().isoformat()
        self._file.close()


class _FanOutWriter(RecordWriter):
    def __init__(self, writers: Sequence[RecordWriter]):
        super(_FanOutWriter, self).__init__()
        self._writers = tuple(writers)

    def record(self, record: RunRecord) -> None:
        for w in self._writers:
            w.record(record)

    def write_state(self, state: BlockState) -> None:
        for w in self._writers:
            w.write_state(state)

    def flush(self) -> None:
        for w in self._writers:
            w.flush()

    def close(self) -> None:
        for w in self._writers:
            w.close()
