"""Diffeomorphic alignment of dynamical systems.

Point sets are numpy arrays with one point per row. Configs, reports and distributions are
plain dicts with the same schema as the JSON files used by the command-line tool.
"""

import json

from . import _dform
from ._dform import (
    ConfigError,
    Diffeomorphism,
    DimensionError,
    Error,
    System,
    affine_transformed,
    bla,
    composite_and_mix,
    concordance,
    fixed_points,
    hopf,
    jacobian_similarity,
    linear,
    linear_with_signature,
    low_rank_rnn,
    monostable_rnn,
    preset_ids,
    random_general,
    random_linear,
    random_orthogonal,
    reconstruct_feature,
    rnn,
    signature,
    snic,
    synth_mindy,
    vdp,
)


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def align(f, g, config=None, px=None, py=None):
    """Train a map sending f onto g. Returns (report dict, Diffeomorphism)."""
    report, phi = _dform.align(f, g, _dump(config), _dump(px), _dump(py))
    return json.loads(report), phi


def alignment_scores(f, g, phi, xs, ys):
    return json.loads(_dform.alignment_scores(f, g, phi, xs, ys))


def preset_parameters(preset, scale="desk"):
    return json.loads(_dform.preset_parameters(preset, scale))


def run_experiment(preset, scale="desk", seed=0, out_dir="", overrides=None, verbose=False):
    """Run a preset; returns the summary dict (metrics under "metrics")."""
    return json.loads(
        _dform.run_experiment(preset, scale, seed, out_dir, _dump(overrides), verbose)
    )


def system_from_dict(d):
    return System.from_json(json.dumps(d))


def system_to_dict(s):
    return json.loads(s.to_json())
