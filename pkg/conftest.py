import os
import pathlib

root_dir = pathlib.Path(__file__).parent.resolve()
reference_dir = pathlib.PurePath(root_dir, 'examples')
int_tests_dir = pathlib.PurePath(root_dir, 'makla', 'tests', 'int_tests')


def pytest_ignore_collect(collection_path, config):
    if str(reference_dir) in str(collection_path):
        return True
    if os.environ.get('MAKLA_INT_TESTS'):
        return None
    return str(int_tests_dir) in str(collection_path) or None
