"""Shared loader for the demos: MovieLens when CFLAB_RATINGS is set, toy data otherwise."""
import os

from cflab.dataset import build_index_maps, load_ratings, synthetic_ratings


def ratings_and_maps():
    path = os.environ.get("CFLAB_RATINGS")
    if path:
        ratings = load_ratings(path)
        print(f"loaded {len(ratings)} ratings from {path}")
    else:
        ratings = synthetic_ratings(m=200, n=400, p=6, density=0.08, seed=0)
        print(f"CFLAB_RATINGS not set, using {len(ratings)} synthetic ratings")
    return ratings, build_index_maps(ratings)
