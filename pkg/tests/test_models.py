import numpy as np
import pytest

from closedpop.models import ModelSpecError, bind, ordered_probs, parse_model_spec


@pytest.mark.parametrize(
    "text, family, R, time, behaviour, hetero",
    [
        ("M0", "single", None, False, False, None),
        ("Mt", "single", None, True, False, None),
        ("Mb", "single", None, False, True, None),
        ("Mh2", "single", None, False, False, "finite"),
        ("Mh3", "single", None, False, False, "finite"),
        ("Mhbe", "single", None, False, False, "beta"),
        ("Mhb-be", "single", None, False, False, "pointbeta"),
        ("Mh^2", "multi", 2, False, False, None),
        ("Mt^2", "multi", 2, True, False, None),
        ("Mth^2", "multi", 2, True, False, None),
        ("M0^3", "multi", 3, False, False, None),
    ],
)
def test_grammar(text, family, R, time, behaviour, hetero):
    spec = parse_model_spec(text)
    assert (spec.family, spec.R, spec.time, spec.behaviour, spec.hetero) == (family, R, time, behaviour, hetero)
    assert spec.name == text


def test_multistate_state_dependence():
    assert parse_model_spec("Mh^2").heterogeneity
    assert parse_model_spec("Mth^2").constraints.additive
    assert not parse_model_spec("Mt^2").heterogeneity


@pytest.mark.parametrize("text", ["Mx", "Mh2^2", "Mhbe^2", "Mhb-be^3", "M0^0", "Mh^-1", "Mh", "Mtt", "M", "h2", "Mtb"])
def test_grammar_errors(text):
    with pytest.raises(ModelSpecError):
        parse_model_spec(text)


def test_bind_checks_state_count():
    with pytest.raises(ModelSpecError):
        bind("Mh^3", 6, 2, 10)


@pytest.mark.parametrize(
    "text, T, R, k",
    [
        ("M0^2", 6, 2, 1 + 2 + 1),
        ("Mh^2", 6, 2, 2 + 2 + 1),
        ("Mt^2", 6, 2, 6 + 2 + 1),
        ("Mth^2", 6, 2, 6 + 1 + 2 + 1),
        ("Mh^3", 6, 3, 3 + 6 + 2),
        ("Mbh^2", 6, 2, 2 + 1 + 2 + 1),
        ("M0", 6, 1, 1),
        ("Mt", 6, 1, 6),
        ("Mb", 6, 1, 2),
        ("Mh2", 6, 1, 3),
        ("Mh3", 6, 1, 5),
        ("Mhbe", 6, 1, 2),
        ("Mhb-be", 6, 1, 4),
    ],
)
def test_core_parameter_counts(text, T, R, k):
    assert bind(text, T, R, 50).n_core == k


def test_mh2_quantities_match_table_rows():
    labels = [q.label for q in bind("Mh^2", 6, 2, 50).quantities]
    assert labels == ["p(1)", "p(2)", "psi(1,2)", "psi(2,1)", "alpha(1)"]


def test_ordered_probs_increase():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = ordered_probs(rng.normal(scale=1, size=4))
        assert np.all(np.diff(p) >= 0) and np.all((p > 0) & (p < 1))


def test_mixture_boundary_flags():
    model = bind("Mh3", 6, 1, 50)
    # second and third components almost coincide, third weight vanishing
    theta = np.array([-1.0, 0.5, np.log(1e-6), 0.0, -15.0])
    flags = model.boundary_coords(theta)
    assert flags[2] and flags[3:].all()
    assert not bind("Mh2", 6, 1, 50).boundary_coords(np.array([-1.0, 0.5, 0.2])).any()


def test_occasion_specific_transitions_suffix():
    spec = parse_model_spec("Mh^2[psi_t]")
    assert spec.psi_time and spec.name == "Mh^2[psi_t]"
    assert bind(spec, 6, 2, 50).n_core == 2 + 5 * 2 + 1
    with pytest.raises(ModelSpecError):
        parse_model_spec("Mh2[psi_t]")
