"""Metadata continuum: pipelined transfer, prefetching predictors and layered caches."""
