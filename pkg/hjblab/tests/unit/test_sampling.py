"""
Unit tests for hjblab.sampling module.

Streams must depend only on (seed, stream, chunk), never on the worker count.
"""
import numpy as np
import pytest

from hjblab import sampling
from hjblab.errors import InvalidInputError


class TestChunkSizes:
    """Tests for chunk_sizes."""

    def test_exact_split(self):
        assert sampling.chunk_sizes(12, 4) == [4, 4, 4]

    def test_remainder_in_last_chunk(self):
        assert sampling.chunk_sizes(10, 4) == [4, 4, 2]

    def test_empty(self):
        assert sampling.chunk_sizes(0, 4) == []


class TestStreams:
    """Tests for deterministic normal streams."""

    def test_same_key_same_numbers(self):
        a = sampling.standard_normals(7, 1, 0, 100, 3)
        b = sampling.standard_normals(7, 1, 0, 100, 3)
        np.testing.assert_array_equal(a, b)

    def test_streams_and_chunks_differ(self):
        base = sampling.standard_normals(7, 1, 0, 50, 2)
        assert not np.array_equal(base, sampling.standard_normals(7, 2, 0, 50, 2))
        assert not np.array_equal(base, sampling.standard_normals(7, 1, 1, 50, 2))
        assert not np.array_equal(base, sampling.standard_normals(8, 1, 0, 50, 2))

    def test_antithetic_pairs(self):
        """Rows come in (g, -g) pairs."""
        g = sampling.standard_normals(1, 0, 0, 10, 3, antithetic=True)
        np.testing.assert_array_equal(g[0::2], -g[1::2])

    def test_antithetic_needs_even_size(self):
        with pytest.raises(InvalidInputError):
            sampling.standard_normals(1, 0, 0, 7, 3, antithetic=True)

    def test_negative_seed_rejected(self):
        with pytest.raises(InvalidInputError):
            sampling.generator(-1, 0, 0)


class TestWorkerInvariance:
    """Thread count never changes results."""

    def test_map_chunks_independent_of_workers(self, monkeypatch):
        monkeypatch.setattr("hjblab.config.CHUNK_SIZE", 64)
        func = lambda g: g.sum(axis=1)

        monkeypatch.setattr("hjblab.config.WORKERS", 1)
        serial = np.concatenate(sampling.map_chunks(func, 11, 3, 1000, 4))
        monkeypatch.setattr("hjblab.config.WORKERS", 8)
        parallel = np.concatenate(sampling.map_chunks(func, 11, 3, 1000, 4))

        np.testing.assert_array_equal(serial, parallel)
        assert serial.size == 1000

    def test_map_chunks_matches_normal_matrix(self, monkeypatch):
        monkeypatch.setattr("hjblab.config.CHUNK_SIZE", 32)
        rows = np.concatenate(sampling.map_chunks(lambda g: g, 5, 0, 100, 2))
        np.testing.assert_array_equal(rows, sampling.normal_matrix(5, 0, 100, 2))

    def test_map_rows_preserves_order(self, monkeypatch):
        monkeypatch.setattr("hjblab.config.CHUNK_SIZE", 16)
        monkeypatch.setattr("hjblab.config.WORKERS", 4)
        rows = np.arange(200.0).reshape(100, 2)
        np.testing.assert_array_equal(sampling.map_rows(lambda r: r[:, 0], rows), rows[:, 0])
