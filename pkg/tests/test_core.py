import numpy as np
import pytest
from hypothesis import given, strategies as st

from climb.core import (Catalog, DimensionError, Explanation, Instance, Method, apply_mask, apply_masks, derive_seed,
                        to_interpretable)


def test_to_interpretable_is_all_ones():
    assert to_interpretable(Instance("u", (3, 7, 9))).tolist() == [1, 1, 1]
    assert to_interpretable(Instance("u", (0,))).tolist() == [1]


@pytest.mark.parametrize("items", [(), (3, 3), (5, 2), (-1, 2)])
def test_instance_rejects_bad_item_lists(items):
    with pytest.raises(ValueError):
        Instance("u", items)


@pytest.mark.parametrize("bits, expected", [
    ([1, 0], [0, 1, 0, 0, 0]),
    ([1, 1], [0, 1, 0, 1, 0]),
    ([0, 0], [0, 0, 0, 0, 0]),
])
def test_apply_mask(bits, expected):
    inst = Instance("u", (1, 3))
    assert apply_mask(inst, np.array(bits), 5).tolist() == expected


def test_apply_mask_length_mismatch():
    with pytest.raises(DimensionError):
        apply_mask(Instance("u", (1, 3)), np.array([1, 0, 1]), 5)


def test_catalog_invariants():
    with pytest.raises(ValueError):
        Catalog(1, ("a",))
    with pytest.raises(ValueError):
        Catalog(2, ("a", "a"))
    assert Catalog.range(3).item_labels == ("0", "1", "2")


@st.composite
def instances(draw):
    d = draw(st.integers(2, 60))
    items = draw(st.lists(st.integers(0, d - 1), min_size=1, max_size=d, unique=True))
    return d, Instance("u", tuple(sorted(items)))


@given(instances())
def test_full_mask_reconstructs_instance(case):
    d, inst = case
    x = apply_mask(inst, to_interpretable(inst), d)
    assert np.flatnonzero(x).tolist() == list(inst.active_items)


@given(instances(), st.data())
def test_ones_in_output_match_mask(case, data):
    d, inst = case
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=inst.d_prime, max_size=inst.d_prime)))
    assert apply_mask(inst, bits, d).sum() == bits.sum()
    assert np.array_equal(apply_masks(inst, bits[None, :], d)[0], apply_mask(inst, bits, d))


def test_derive_seed():
    assert derive_seed(42, "lime", 0) != derive_seed(42, "lime", 1)
    assert derive_seed(42, "lime", 0) == derive_seed(42, "lime", 0)
    assert derive_seed(42, "lime", 0) != derive_seed(42, "shap", 0)
    seeds = {derive_seed(7, "s", i) for i in range(10_000)}
    assert len(seeds) == 10_000
    assert all(0 <= s < 2 ** 64 for s in seeds)


def test_explanation_enforces_completeness_for_constrained_methods():
    ok = Explanation(Method.CLIMB, [0.2, 0.3], 0.1, 0.6, 0.1, (4, 9))
    assert abs(ok.completeness_residual) < 1e-12
    with pytest.raises(ValueError, match="completeness"):
        Explanation(Method.SHAP, [0.2, 0.3], 0.1, 0.7, 0.1, (4, 9))
    with pytest.raises(ValueError, match="intercept"):
        Explanation(Method.SHAP, [0.2, 0.3], 0.2, 0.7, 0.1, (4, 9))
    # LIME is unconstrained
    Explanation(Method.LIME, [0.2, 0.3], 0.0, 0.7, 0.1, (4, 9))


def test_explanation_rejects_non_finite_and_bad_lengths():
    with pytest.raises(ValueError):
        Explanation("lime", [np.nan], 0.0, 1.0, 0.0, (1,))
    with pytest.raises(DimensionError):
        Explanation("lime", [1.0, 2.0], 0.0, 1.0, 0.0, (1,))


def test_explanation_ranking_ties_break_by_item_index():
    e = Explanation("lime", [0.5, 0.9, 0.5, 0.1], 0.0, 1.0, 0.0, (8, 3, 2, 5))
    assert e.top_items(4) == [3, 2, 8, 5]
    d = e.to_dict(Catalog.range(10))
    assert [it["index"] for it in d["items"]] == [3, 2, 8, 5]
    assert d["method"] == "LIME"
