import json
import logging
import math
import numbers
import os
from os.path import expanduser

import dataset
import numpy as np
import yaml
from sqlalchemy import pool

from .settings import DEFAULT_SETTINGS, PATH_KEYS
from .version import version as __version__


def deep_update(conf, other):
    """Recursively update a dict with the values of another dict.

    >>> deep_update({'a': 1, 'b': {'c': 2, 'd': 3}}, {'b': {'c': 5}})
    {'a': 1, 'b': {'c': 5, 'd': 3}}

    """
    for key, value in other.items():
        if isinstance(value, dict) and isinstance(conf.get(key), dict):
            deep_update(conf[key], value)
        else:
            conf[key] = value
    return conf


def substitute_keys(obj, keys):
    """Replace ``{key}`` patterns in all strings of a nested structure.

    Strings that cannot be formatted with the given keys are left unchanged.

    >>> substitute_keys({'a': '{workdir}/raw', 'b': ['{x}', 1]}, {'workdir': '.'})
    {'a': './raw', 'b': ['{x}', 1]}

    """
    if isinstance(obj, dict):
        return {k: substitute_keys(v, keys) for k, v in obj.items()}
    elif isinstance(obj, list):
        return [substitute_keys(v, keys) for v in obj]
    elif isinstance(obj, str):
        try:
            return obj.format(**keys)
        except (KeyError, IndexError, ValueError):
            return obj
    return obj


def load_yaml_config(filename=None, defaults=DEFAULT_SETTINGS):
    """Load a YAML config file, with string substitution.

    The file content is merged over the default settings. Top-level scalar
    values can be used in the other values with the ``{key}`` syntax.

    """
    conf = yaml.safe_load(defaults) if defaults else {}

    if filename is not None:
        with open(filename, "r") as f:
            user_conf = yaml.safe_load(f.read()) or {}
        deep_update(conf, user_conf)

    def expand_user_in_conf(confdict):
        """Expand ~ in paths."""
        for key in PATH_KEYS:
            if isinstance(confdict.get(key), str):
                confdict[key] = expanduser(confdict[key])
        return confdict

    # We need to do 2 passes, as top-level keys can reference each other
    for _ in range(2):
        conf = expand_user_in_conf(conf)
        keys = {
            k: v
            for k, v in conf.items()
            if isinstance(v, (str, numbers.Number)) and not isinstance(v, bool)
        }
        conf = substitute_keys(conf, keys)

    return conf


# Indexed columns of the tables created by load_db
DB_TABLES = {
    "runs": ("recipe_name", "status"),
    "sessions": ("path", "subject_id", "status"),
}


def load_db(filename=None, db_env=None, tables=DB_TABLES, **kwargs):
    """Open the database of the runs and sessions with dataset.

    The database is a sqlite file, or the url given by the ``db_env``
    environment variable. The ``tables`` are created if needed, with an index
    on each of their listed columns. Set ``SQLDEBUG`` to echo the SQL
    statements.

    """
    kwargs.setdefault("engine_kwargs", {})

    if filename is not None:
        os.makedirs(os.path.dirname(os.path.abspath(filename)), exist_ok=True)
        # dataset uses a StaticPool for sqlite, which keeps the file open
        kwargs["engine_kwargs"].setdefault("poolclass", pool.NullPool)
        url = f"sqlite:///{filename}"
    elif db_env is not None:
        url = os.environ.get(db_env)
        if not url:
            raise ValueError(f"the {db_env} environment variable is not set")
    else:
        raise ValueError(
            "database url should be provided either with filename or with db_env"
        )

    logger = logging.getLogger(__name__)
    if os.getenv("SQLDEBUG") is not None:
        logger.info("Activate debug mode")
        kwargs["engine_kwargs"]["echo"] = True

    logger.debug("Connecting to %s", url)
    db = dataset.connect(url, **kwargs)
    for name, columns in tables.items():
        table = db.create_table(name)
        for column in columns:
            # indexes need the column to exist
            table.create_column(column, db.types.string)
            table.create_index([column], name=f"ix_{name}_{column}")
    return db


def upsert_many(db, tablename, rows, keys):
    """Use dataset.Table.upsert for a list of rows.

    >>> import dataset
    >>> db = dataset.connect('sqlite:///:memory:')
    >>> table = db['sometable']
    >>> table.insert(dict(path='S0001.svc', n_samples=37))
    1
    >>> upsert_many(db, 'sometable', [dict(path='S0001.svc', n_samples=42)],
    ...             ['path'])
    >>> table.find_one()['n_samples']
    42

    """
    with db as tx:
        table = tx[tablename]
        for row in rows:
            table.upsert(row, keys=keys)


def all_subclasses(cls):
    return set(cls.__subclasses__()).union(
        [s for c in cls.__subclasses__() for s in all_subclasses(c)]
    )


def ensure_list(value):
    """Make sure that value is a list and convert to list if needed.

    >>> ensure_list('diagnosis')
    ['diagnosis']
    >>> ensure_list(('a', 'b'))
    ['a', 'b']

    """
    if value is None:
        return []
    if isinstance(value, (numbers.Number, str)):
        return [value]
    elif isinstance(value, np.ndarray):
        return value.tolist()
    else:
        return list(value)


def to_builtin(obj):
    """Convert numpy scalars and arrays to JSON-compatible Python objects.

    Non-finite floats become None.

    >>> to_builtin({'a': np.float64(1.5), 'b': np.array([1, 2]), 'c': np.nan})
    {'a': 1.5, 'b': [1, 2], 'c': None}

    """
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    elif isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    elif isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    elif isinstance(obj, numbers.Integral):
        return int(obj)
    elif isinstance(obj, numbers.Real):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def write_json(filename, payload, config=None):
    """Write a JSON artifact with the package version and run configuration.

    Keys are sorted so that identical inputs give identical bytes.
    """
    doc = {"dysgraph_version": __version__, **payload}
    if config is not None:
        doc["config"] = config
    with open(filename, "w") as f:
        json.dump(to_builtin(doc), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return filename


def write_table(table, filename, config=None):
    """Write an astropy table as comma-separated ECSV.

    The data section is plain CSV with an empty cell for masked values, and
    the header keeps the package version and run configuration.
    """
    table = table.copy(copy_data=False)
    table.meta["dysgraph_version"] = __version__
    if config is not None:
        table.meta["config"] = to_builtin(config)
    table.write(filename, format="ascii.ecsv", delimiter=",", overwrite=True)
    return filename


def format_number(value):
    """Format a number for text output, without decimal part if integral.

    >>> format_number(12.0), format_number(-3), format_number(0.25)
    ('12', '-3', '0.25')

    """
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)
