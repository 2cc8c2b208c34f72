import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jordanroot import attach_model as am
from jordanroot.attach_model import AttachmentFunction, DomainError


CANONICAL = [am.uniform(), am.affine(0.0), am.affine(1.0), am.sublinear(0.5),
             am.sublinear(0.9), am.constant(5.0)]


def test_evaluate_examples():
    assert am.evaluate(am.uniform(), 5) == 1.0
    assert am.evaluate(am.affine(1.0), 3) == 4.0
    assert am.evaluate(am.sublinear(0.5), 4) == 2.0
    assert am.constant(5.0)(7) == 5.0


@pytest.mark.parametrize("i", [0, -3])
def test_evaluate_rejects_nonpositive_degree(i):
    with pytest.raises(DomainError):
        am.evaluate(am.uniform(), i)


def test_probe_grid_shape():
    g = am.probe_grid()
    assert g[0] == 1 and np.all(np.diff(g) > 0)
    assert set(range(1, 65)) <= set(g.tolist())
    assert g[-1] == round(1.5**35)


@pytest.mark.parametrize("f", CANONICAL, ids=lambda f: f.label)
def test_canonical_kinds_validate(f):
    rep = am.validate(f)
    assert rep.ok, rep.failures()
    assert rep["limsup_below_malthusian"].status == "deferred"


def test_zero_in_table_fails_positivity_at_2():
    f = am.custom_table([0.5, 0.0, 1.0], f_star=0.5, linear_bound=(1, 1), limsup_bound=0)
    rep = am.validate(f)
    assert not rep.ok
    assert rep["positivity"].status == "fail" and rep["positivity"].witness == 2


def test_quadratic_table_breaks_linear_bound_at_2():
    f = am.custom_table([float(i * i) for i in range(1, 101)], "reject", f_star=1,
                        linear_bound=(1, 0), limsup_bound=1)
    rep = am.validate(f)
    assert rep["linear_bound"].status == "fail" and rep["linear_bound"].witness == 2
    assert rep["extension_total"].status == "warn"


def test_infimum_violation_reports_witness():
    f = am.custom_table([2.0, 2.0, 1.0], f_star=2.0, linear_bound=(0, 2), limsup_bound=0)
    assert am.validate(f)["infimum"].witness == 3


def test_limsup_above_linear_constant_fails():
    f = AttachmentFunction("affine", {"beta": 0.0}, f_star=1, linear_bound=(1, 0),
                           limsup_bound=2.0)
    assert am.validate(f)["limsup_bound"].status == "fail"


def test_understated_limsup_detected():
    # f(k) = k declared with limsup 0
    f = AttachmentFunction("affine", {"beta": 0.0}, f_star=1, linear_bound=(1, 0),
                           limsup_bound=0.0)
    assert am.validate(f)["limsup_bound"].status == "fail"


def test_reject_extension_raises_beyond_table():
    f = am.custom_table([1.0, 2.0], "reject", f_star=1, linear_bound=(1, 0), limsup_bound=0)
    assert f(2) == 2.0
    with pytest.raises(DomainError):
        f(3)


def test_hold_last_value_extension():
    f = am.custom_table([1.0, 3.0], f_star=1, linear_bound=(0, 3), limsup_bound=0)
    assert f(100) == 3.0


def test_bad_extension_rule():
    with pytest.raises(ValueError):
        am.custom_table([1.0], "wrap", f_star=1, linear_bound=(0, 1), limsup_bound=0)


def test_parameter_domains():
    for bad in (lambda: am.sublinear(1.0), lambda: am.affine(-0.5), lambda: am.constant(0)):
        with pytest.raises(ValueError):
            bad()


@pytest.mark.parametrize("f", CANONICAL + [
    am.custom_table([1, 2, 5], f_star=1, linear_bound=(2, 1), limsup_bound=0)],
    ids=lambda f: f.label)
def test_json_round_trip(f):
    g = AttachmentFunction.from_json(f.to_json())
    assert g == f
    assert json.loads(f.to_json())["kind"] == f.kind


def test_json_field_names():
    d = json.loads(am.affine(1.0).to_json())
    assert {"kind", "params", "f_star", "linear_bound", "limsup_bound"} <= set(d)


def test_from_dict_canonical_without_metadata():
    assert AttachmentFunction.from_dict({"kind": "affine", "params": {"beta": 1}}) == am.affine(1)
    with pytest.raises(ValueError):
        AttachmentFunction.from_dict({"kind": "uniform", "colour": "red"})
    with pytest.raises(ValueError):
        AttachmentFunction.from_dict({"kind": "custom-table",
                                      "params": {"values": [1], "extension": "reject"}})


@given(c=st.floats(0.1, 20), i=st.integers(1, 10**6))
def test_scaled_multiplies_values(c, i):
    for f in (am.uniform(), am.affine(1.0), am.sublinear(0.5)):
        g = f.scaled(c)
        assert g(i) == pytest.approx(c * f(i), rel=1e-12)
        assert am.validate(g).ok


@given(i=st.integers(1, 10**7))
def test_probe_consistency_everywhere(i):
    for f in CANONICAL:
        C, b = f.linear_bound
        v = f(i)
        assert f.f_star <= v <= (C * i + b) * (1 + 1e-12)


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=30))
def test_table_metadata_from_values_validates(vals):
    f = am.custom_table(vals, f_star=min(vals), linear_bound=(0, max(vals)), limsup_bound=0,
                        sup_bound=max(vals))
    assert am.validate(f).ok
    assert np.array_equal(f.values(np.arange(1, len(vals) + 1)), np.array(vals) * 1.0)


def test_evaluate_is_pure():
    f = am.sublinear(0.7)
    assert [f(13) for _ in range(5)] == [f(13)] * 5


def test_kernel_args_agree_with_values():
    from jordanroot import kernels
    for f in CANONICAL + [am.custom_table([1, 4, 2], f_star=1, linear_bound=(2, 0),
                                          limsup_bound=0).scaled(3)]:
        args = f.kernel_args()
        for i in (1, 2, 3, 17, 1000):
            assert kernels.fval(*args, i) == pytest.approx(f(i), rel=1e-15)


def test_labels_distinct_and_filename_safe():
    labels = [f.label for f in CANONICAL] + [am.uniform().scaled(2).label]
    assert len(set(labels)) == len(labels)
    assert all("/" not in x and " " not in x for x in labels)
