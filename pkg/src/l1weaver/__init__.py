"""Exact inverse-limit graph systems, slice diffusion and cut-metric embeddings."""
