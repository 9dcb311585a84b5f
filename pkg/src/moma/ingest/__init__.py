"""Model files, queries and benchmark generators."""

from .benchmarks import Benchmark, BenchmarkParams, generate_benchmark
from .modelfile import parse_model, serialize_model
from .query import parse_query

__all__ = ["Benchmark", "BenchmarkParams", "generate_benchmark", "parse_model", "parse_query", "serialize_model"]
