"""Run artifacts as key-value stores over an output directory.

Layout: ``plan.json``, ``reports/{name}.json``, ``traces/{name}.csv``. Keys are bare names;
the extension and directory are added by the store. JSON documents carry a ``kind`` and
are validated against the matching schema of ``schemas.json`` before being written.
"""

import csv
import io
import json
import os
from functools import cached_property, lru_cache, partial
from pathlib import Path
from typing import Iterable, Optional

import jsonschema
from dol import TextFiles, filt_iter, wrap_kvs
from dol.filesys import mk_dirs_if_missing

SCHEMAS_PATH = Path(__file__).parent / 'schemas.json'


@lru_cache(maxsize=1)
def schemas() -> dict:
    return json.loads(SCHEMAS_PATH.read_text())


def validate_artifact(obj: dict, kind: Optional[str] = None) -> dict:
    """Validate ``obj`` against the schema of ``kind`` (default ``obj['kind']``) and return it"""
    kind = kind or obj.get('kind')
    try:
        schema = schemas()[kind]
    except KeyError:
        raise jsonschema.ValidationError(f'no schema for artifact kind {kind!r}')
    jsonschema.validate(obj, schema)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + '\n'


def _with_suffix(k, suffix):
    return f'{k}{suffix}'


def _without_suffix(_id, suffix):
    return _id[: -len(suffix)]


def _text_store(rootdir, suffix):
    rootdir = os.fspath(rootdir)
    os.makedirs(rootdir, exist_ok=True)
    store = mk_dirs_if_missing(TextFiles(rootdir))
    # only the files directly under rootdir
    return filt_iter(store, filt=lambda k: k.endswith(suffix) and os.sep not in k)


def json_store(rootdir, *, validate: bool = True):
    """``store[name] = doc`` writes ``{rootdir}/{name}.json``"""
    data_of_obj = (lambda obj: dumps_json(validate_artifact(obj))) if validate else dumps_json
    return wrap_kvs(
        _text_store(rootdir, '.json'),
        id_of_key=partial(_with_suffix, suffix='.json'),
        key_of_id=partial(_without_suffix, suffix='.json'),
        obj_of_data=json.loads,
        data_of_obj=data_of_obj,
    )


def rows_to_csv(rows: Iterable[dict], fieldnames: Optional[Iterable[str]] = None) -> str:
    """Render rows with a fixed header; floats keep their shortest round-trip repr.

    >>> print(rows_to_csv([{'a': 1, 'b': 0.1}], ['a', 'b']), end='')
    a,b
    1,0.1
    """
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator='\n')
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def csv_to_rows(text: str):
    return list(csv.DictReader(io.StringIO(text)))


def csv_store(rootdir, fieldnames: Optional[Iterable[str]] = None):
    """``store[name] = rows`` writes ``{rootdir}/{name}.csv``; reads give rows of strings"""
    return wrap_kvs(
        _text_store(rootdir, '.csv'),
        id_of_key=partial(_with_suffix, suffix='.csv'),
        key_of_id=partial(_without_suffix, suffix='.csv'),
        obj_of_data=csv_to_rows,
        data_of_obj=partial(rows_to_csv, fieldnames=fieldnames),
    )


class RunArtifacts:
    """The stores of one output directory"""

    def __init__(self, rootdir):
        self.rootdir = os.fspath(rootdir)

    @cached_property
    def root(self):
        return json_store(self.rootdir)

    @cached_property
    def reports(self):
        return json_store(os.path.join(self.rootdir, 'reports'))

    @cached_property
    def traces(self):
        return csv_store(os.path.join(self.rootdir, 'traces'))

    def write_plan(self, doc: dict):
        self.root['plan'] = doc

    def read_plan(self) -> dict:
        return self.root['plan']
