"""Tests for missing-data designs."""

import numpy as np
import pytest

from bitmat.lib.errors import DimensionError, IdentifiabilityError, InvalidArgumentError
from bitmat.modules.connectivity.modules import check_connectivity
from bitmat.modules.simulation.design import (
    BLOCK_MASK,
    design_from_dict,
    make_bernoulli_design,
    make_block_design,
    make_explicit_design,
    make_full_design,
    make_linking_design,
)


def test_block_mask_layout():
    assert BLOCK_MASK.shape == (5, 4)
    assert BLOCK_MASK.sum() == 10
    # column clusters are the cluster vectors
    assert BLOCK_MASK[:, 0].astype(int).tolist() == [1, 0, 0, 1, 0]
    assert BLOCK_MASK[:, 3].astype(int).tolist() == [0, 0, 1, 0, 1]


def test_block_design_statistics():
    design = make_block_design(10, 8)
    stats = design.stats()
    assert (stats.j_star_min, stats.j_star_max) == (4, 4)
    assert (stats.n_star_min, stats.n_star_max) == (4, 6)
    assert stats.missing_fraction == pytest.approx(0.5)
    data = design.to_matrix()
    assert data.n_obs == 40
    assert check_connectivity(data).connected
    assert design.as_dict()["block_mask"] == BLOCK_MASK.astype(int).tolist()


def test_block_design_needs_divisible_dimensions():
    with pytest.raises(DimensionError):
        make_block_design(12, 8)
    with pytest.raises(DimensionError):
        make_block_design(10, 6)


def test_full_design():
    rows, cols = make_full_design(3, 2).support()
    assert rows.tolist() == [0, 0, 1, 1, 2, 2]
    assert cols.tolist() == [0, 1, 0, 1, 0, 1]


def test_bernoulli_design_is_seeded():
    a = make_bernoulli_design(30, 20, 0.6, seed=4).support()
    b = make_bernoulli_design(30, 20, 0.6, seed=4).support()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert 0.45 < a[0].size / 600.0 < 0.75
    with pytest.raises(InvalidArgumentError):
        make_bernoulli_design(3, 3, 0.0)


def test_unobserved_rows_are_rejected():
    design = make_explicit_design(3, 2, [0, 1], [0, 1])
    with pytest.raises(IdentifiabilityError):
        design.support()


def test_linking_design():
    design = make_linking_design(3, 4, 2)
    assert (design.n_rows, design.n_cols) == (6, 6)
    data = design.to_matrix()
    assert data.n_obs == 24
    # anchors are columns 2 and 3, answered by both groups
    assert data.col_counts.tolist() == [3, 3, 6, 6, 3, 3]
    assert check_connectivity(data).connected

    split = make_linking_design(3, 4, 0).to_matrix()
    assert check_connectivity(split).n_components == 2
    with pytest.raises(InvalidArgumentError):
        make_linking_design(3, 4, 5)


def test_design_from_dict():
    assert design_from_dict({"kind": "block"}, 10, 8).kind == "block"
    assert design_from_dict({"kind": "full", "n_rows": 2, "n_cols": 2}).n_rows == 2
    linking = design_from_dict({"kind": "linking", "n_per_form": 2, "items_per_form": 3, "n_anchor": 1})
    assert (linking.n_rows, linking.n_cols) == (4, 5)
    with pytest.raises(InvalidArgumentError):
        design_from_dict({"kind": "spiral"}, 4, 4)
