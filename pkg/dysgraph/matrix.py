import json
import logging
import os

import numpy as np
from astropy.table import MaskedColumn, Table

from .settings import DIAGNOSIS_CODES, HPSQC_COLUMNS, META_COLUMNS
from .utils import to_builtin, write_json, write_table

__all__ = ("FeatureMatrix",)

META_DTYPES = {
    "subject_id": str,
    "sex": str,
    "class_year": int,
    "diagnosis": str,
    "hpsqc_legibility": int,
    "hpsqc_performance_time": int,
    "hpsqc_well_being": int,
    "hpsqc_total": int,
}


def _meta_column(name, values):
    dtype = META_DTYPES[name]
    mask = [v is None for v in values]
    fill = "" if dtype is str else 0
    data = np.array([fill if v is None else dtype(v) for v in values], dtype=dtype)
    return MaskedColumn(data, name=name, mask=mask)


def _float_column(name, values):
    values = np.asarray(values, dtype=float)
    mask = np.isnan(values)
    return MaskedColumn(
        np.where(mask, 0.0, values), name=name, mask=mask, fill_value=np.nan
    )


def _flatten_meta(meta):
    """Map a session metadata dict to the matrix meta columns."""
    row = {name: meta.get(name) for name in META_COLUMNS}
    hpsqc = meta.get("hpsqc")
    if hpsqc is not None:
        if not isinstance(hpsqc, dict):
            hpsqc = hpsqc.to_dict()
        for col, key in HPSQC_COLUMNS.items():
            row[col] = hpsqc.get(key)
    return row


class FeatureMatrix:
    """Feature values of a set of sessions, with per-row metadata.

    The data is kept in an astropy `~astropy.table.Table`: metadata columns
    (`dysgraph.settings.META_COLUMNS`) come first, followed by the feature
    columns. Masked cells are missing values.

    Parameters
    ----------
    table : `~astropy.table.Table`
        The table.
    feature_names : list of str, optional
        Feature columns, in order. Default to all non-metadata columns.

    """

    def __init__(self, table, feature_names=None):
        self.logger = logging.getLogger(__name__)
        if feature_names is None:
            feature_names = [c for c in table.colnames if c not in META_COLUMNS]
        missing = [c for c in META_COLUMNS if c not in table.colnames]
        for name in missing:
            table[name] = _meta_column(name, [None] * len(table))
        self.table = table[list(META_COLUMNS) + list(feature_names)]
        self.feature_names = list(feature_names)

    def __repr__(self):
        return (
            f"<FeatureMatrix({self.n_rows} rows, {len(self.feature_names)} features)>"
        )

    def __len__(self):
        return self.n_rows

    @classmethod
    def from_rows(cls, metas, rows, feature_names=None):
        """Build a matrix from per-session metadata and feature values.

        Parameters
        ----------
        metas : list of dict
            Session metadata (see `dysgraph.signals.Session.meta`).
        rows : list of dict or list of sequence
            Feature values per session. Dicts are indexed by feature name.
        feature_names : list of str, optional
            Feature order, default to the keys of the first row.

        """
        if feature_names is None:
            feature_names = list(rows[0]) if rows else []
        values = np.array(
            [
                [row[name] for name in feature_names] if isinstance(row, dict) else row
                for row in rows
            ],
            dtype=float,
        ).reshape(len(rows), len(feature_names))
        return cls.from_arrays(values, feature_names, metas)

    @classmethod
    def from_arrays(cls, values, feature_names, metas=None):
        """Build a matrix from a 2D array (NaN for missing values)."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(feature_names):
            raise ValueError("values should have one column per feature")
        if len(set(feature_names)) != len(feature_names):
            raise ValueError("feature names must be unique")
        if metas is None:
            metas = [{"subject_id": f"row{i:04d}"} for i in range(values.shape[0])]
        flat = [_flatten_meta(m) for m in metas]
        cols = [_meta_column(name, [r[name] for r in flat]) for name in META_COLUMNS]
        cols += [
            _float_column(name, values[:, j]) for j, name in enumerate(feature_names)
        ]
        return cls(Table(cols, masked=True), feature_names=feature_names)

    @property
    def n_rows(self):
        return len(self.table)

    @property
    def subject_ids(self):
        return [str(v) for v in self.table["subject_id"]]

    @property
    def values(self):
        """Feature values as a float array, NaN for missing values."""
        if not self.feature_names:
            return np.zeros((self.n_rows, 0))
        return np.column_stack([self.column(name) for name in self.feature_names])

    @property
    def mask(self):
        return np.isnan(self.values)

    def column(self, name):
        """Return a column as a float array, NaN for missing values."""
        col = self.table[name]
        return np.ma.asarray(col, dtype=float).filled(np.nan)

    def meta_column(self, name):
        """Return a metadata column as a list, None for missing values."""
        col = self.table[name]
        mask = np.ma.getmaskarray(col)
        data = np.ma.getdata(col).tolist()
        return [None if m else v for v, m in zip(data, mask)]

    def resolve_target(self, name):
        """Return the column name of a target (``total`` → ``hpsqc_total``)."""
        if name in self.table.colnames:
            return name
        if f"hpsqc_{name}" in self.table.colnames:
            return f"hpsqc_{name}"
        raise KeyError(f"missing target column {name}")

    def target(self, name):
        """Return a target as a float array, NaN for missing values.

        The diagnosis is coded 0 for intact and 1 for dysgraphic children.
        """
        name = self.resolve_target(name)
        if name == "diagnosis":
            return np.array(
                [
                    np.nan if v is None else DIAGNOSIS_CODES[v]
                    for v in self.meta_column(name)
                ],
                dtype=float,
            )
        return self.column(name)

    def subset(self, rows):
        """Return a matrix with a subset of rows (indices or boolean mask)."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        rows = rows.astype(int)
        return self.__class__(self.table[rows], feature_names=self.feature_names)

    def with_values(self, values, feature_names=None):
        """Return a matrix with the same metadata and new feature values."""
        feature_names = feature_names or self.feature_names
        out = self.from_arrays(values, feature_names)
        for name in META_COLUMNS:
            out.table[name] = self.table[name]
        return out

    def groups(self, column):
        """Split the matrix by the levels of a metadata column.

        Returns a dict level → `FeatureMatrix`, levels sorted, missing levels
        excluded.
        """
        levels = self.meta_column(column)
        out = {}
        for level in sorted({v for v in levels if v is not None}):
            out[level] = self.subset([v == level for v in levels])
        return out

    def sorted(self, key="subject_id"):
        keys = np.asarray(self.meta_column(key), dtype=object)
        order = np.argsort(keys, kind="stable")
        return self.subset(order)

    def to_dict(self):
        rows = []
        values = self.values
        for i in range(self.n_rows):
            row = {name: self.meta_column(name)[i] for name in META_COLUMNS}
            row["values"] = values[i]
            rows.append(row)
        return {"features": self.feature_names, "rows": rows}

    def to_json(self):
        return json.dumps(to_builtin(self.to_dict()), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        metas = []
        for row in d["rows"]:
            meta = {name: row.get(name) for name in META_COLUMNS}
            metas.append(meta)
        values = [
            [np.nan if v is None else v for v in row["values"]] for row in d["rows"]
        ]
        values = np.array(values, dtype=float).reshape(len(metas), len(d["features"]))
        return cls.from_arrays(values, d["features"], metas)

    def write(self, filename, config=None):
        """Write the matrix as CSV (ECSV with commas) or JSON, by extension."""
        if filename.endswith(".json"):
            write_json(filename, to_builtin(self.to_dict()), config=config)
        else:
            write_table(self.table, filename, config=config)
        self.logger.debug("matrix saved to %s", filename)
        return filename

    @classmethod
    def read(cls, filename):
        """Read a matrix written by `FeatureMatrix.write`."""
        if not os.path.isfile(filename):
            raise FileNotFoundError(f"feature matrix {filename} not found")
        if filename.endswith(".json"):
            with open(filename) as f:
                return cls.from_dict(json.load(f))
        table = Table.read(filename, format="ascii.ecsv")
        return cls(Table(table, masked=True))
