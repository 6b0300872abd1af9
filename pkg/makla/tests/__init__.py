"""Tests of makla. Heavier statistical runs live in int_tests (set MAKLA_INT_TESTS to run them)"""

TEST_SEED = 20240531
