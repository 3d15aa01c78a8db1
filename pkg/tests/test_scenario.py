import json

import pytest
from hypothesis import given, strategies as st

from sbpls.potentials import Bump, PotentialSpec
from sbpls.scenario import (
    ScenarioError,
    ScenarioFile,
    bundled,
    bundled_names,
    dump,
    load,
    loads,
    validate,
)

NAMES = ["flat", "nondegenerate", "quartic", "kbump", "mixed", "ring"]


def test_bundled_set():
    assert set(NAMES) <= set(bundled_names())


@pytest.mark.parametrize("name", NAMES)
def test_bundled_validate_and_roundtrip(name, tmp_path):
    sc = bundled(name)
    assert validate(sc).ok
    path = tmp_path / f"{name}.json"
    dump(sc, path)
    again = load(path)
    assert again == sc
    assert dump(again) == path.read_text()


def test_load_by_name():
    assert load("quartic").n == 4


def test_gamma_and_regime():
    assert bundled("nondegenerate").gamma == 2
    assert bundled("quartic").gamma == 4
    assert bundled("kbump").gamma == 7
    mixed = bundled("mixed")
    assert mixed.gamma == 4 and mixed.expansion_regime == "degenerate-n"
    assert bundled("kbump").expansion_regime == "degenerate-m"
    assert bundled("flat").expansion_regime is None


@given(sweep=st.lists(st.floats(0.01, 0.5), min_size=1, max_size=8, unique=True))
def test_sweep_sorted_descending(sweep):
    sc = bundled("flat").with_overrides(eps_sweep=sweep)
    assert list(sc.eps_sweep) == sorted(sweep, reverse=True)
    assert loads(dump(sc)) == sc


def _with(sc, **kw):
    d = sc.canonical()
    d.update(kw)
    return loads(json.dumps(d))


def test_unbounded_potential_rejected():
    sc = bundled("nondegenerate")
    V = PotentialSpec(1.0, (Bump(1.0, sigma=None, q=(2, 0, 0)),))
    bad = _with(sc, V=V.to_dict())
    rep = validate(bad, raise_on_failure=False)
    assert not rep.ok
    assert any("bounded" in f for f in rep.failures)
    with pytest.raises(ScenarioError):
        validate(bad)


def test_negative_potential_rejected():
    sc = bundled("flat")
    bad = _with(sc, V=PotentialSpec(1.0, (Bump(-2.0, sigma=1.0),)).to_dict(), regime="nondegenerate")
    rep = validate(bad, raise_on_failure=False)
    assert any("inf V" in f for f in rep.failures)


def test_wrong_vanishing_order_rejected():
    bad = _with(bundled("quartic"), n=6)
    rep = validate(bad, raise_on_failure=False)
    assert any("vanishing order of V" in f for f in rep.failures)


def test_odd_order_rejected():
    V = PotentialSpec(1.0, (Bump(0.1, sigma=3.0, q=(3, 0, 0)),))
    bad = _with(bundled("quartic"), V=V.to_dict(), n=3)
    assert not validate(bad, raise_on_failure=False).ok


def test_mixed_derivatives_rejected():
    V = PotentialSpec(1.0, (Bump(0.1, sigma=3.0, q=(4, 0, 0)), Bump(0.1, sigma=3.0, q=(2, 2, 0))))
    bad = _with(bundled("quartic"), V=V.to_dict())
    rep = validate(bad, raise_on_failure=False)
    assert any("mixed" in f for f in rep.failures)


def test_competing_orders_must_differ():
    bad = _with(bundled("mixed"), n=7)
    rep = validate(bad, raise_on_failure=False)
    assert any("2m + 3" in f for f in rep.failures)


def test_unnormalised_rejected():
    bad = _with(bundled("nondegenerate"), x0=[0.5, 0.0, 0.0])
    assert not validate(bad, raise_on_failure=False).ok


def test_ring_requires_flat_circle():
    d = bundled("ring").canonical()
    d["ring"]["radius"] = 1.2
    rep = validate(loads(json.dumps(d)), raise_on_failure=False)
    assert any("circle" in f for f in rep.failures)


def test_malformed_and_unknown():
    with pytest.raises(ScenarioError):
        loads('{"p": 2}')
    with pytest.raises(ScenarioError):
        ScenarioFile("x", 2.0, PotentialSpec.constant(1.0), PotentialSpec.constant(0.0), "bogus")
