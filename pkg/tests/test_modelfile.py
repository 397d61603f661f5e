import numpy as np
import pytest

from conftest import MODELS_DIR, SIR_B
from hand_models import HAND_RATES
from statetrans.errors import (
    EvalError,
    MissingParameterError,
    ParseError,
    UnknownIdentifierError,
    ValidationError,
)
from statetrans.modelfile import bundled_model_path, bundled_models, load_model, parse_model_file

BASE = """\
[compartments]
S I R

[parameters]
beta = 0.5
gamma = 0.2

[transitions]
S -> I : beta * I / sumstate
I -> R : gamma

[initial_state]
9 1 0

[integrator]
kind = discrete
num_steps = 5
"""


def test_bundled_sir():
    mf = load_model(bundled_model_path("sir"))
    spec = mf.build()
    assert spec.num_compartments == 3 and spec.num_transitions == 2
    assert np.array_equal(spec.incidence, SIR_B)
    assert spec.compartments == ("S", "I", "R")
    assert spec.integrator == "discrete" and spec.num_steps == 100
    assert {p.stem for p in bundled_models()} == {"sir", "metapop_sir", "seir_network"}
    with pytest.raises(FileNotFoundError):
        bundled_model_path("nope")


def test_minimal_file_and_overrides():
    mf = parse_model_file(BASE)
    spec = mf.build({"beta": 1.0}, integrator="continuous", num_steps=3)
    assert spec.integrator == "continuous" and spec.num_steps == 3
    assert spec.rates[0](0.0, np.array([[9, 1, 0]]))[0] == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        mf.build({"delta": 1.0})


def test_undeclared_compartment():
    text = BASE.replace("I -> R : gamma", "I -> E : gamma")
    with pytest.raises(UnknownIdentifierError) as info:
        parse_model_file(text)
    assert info.value.name == "E"
    assert (info.value.line, info.value.column) == (10, 6)


def test_unknown_identifier_position_in_file():
    text = BASE.replace("S -> I : beta * I / sumstate", "S -> I : beta * J / sumstate")
    with pytest.raises(UnknownIdentifierError) as info:
        parse_model_file(text)
    assert info.value.name == "J" and (info.value.line, info.value.column) == (9, 17)


def test_parse_error_position_in_file():
    with pytest.raises(ParseError) as info:
        parse_model_file(BASE.replace("I -> R : gamma", "I -> R : gamma *"))
    assert (info.value.line, info.value.column) == (10, 17)


@pytest.mark.parametrize("old, new", [
    ("gamma = 0.2", "gamma = 0.2\nbeta = 1"),            # duplicate parameter
    ("gamma = 0.2", "gamma = 0.2\nS = 1"),               # collides with compartment
    ("gamma = 0.2", "gamma = 0.2\nt = 1"),               # reserved
    ("S I R", "S I R S"),                                 # duplicate compartment
    ("9 1 0", "9 1"),                                     # wrong row length
    ("kind = discrete", "kind = markov"),                 # bad integrator
    ("num_steps = 5", ""),                                # missing num_steps
    ("I -> R : gamma", "I -> I : gamma"),                 # self loop
])
def test_validation_errors(old, new):
    with pytest.raises(ValidationError):
        parse_model_file(BASE.replace(old, new))


@pytest.mark.parametrize("old, new", [
    ("[integrator]", "[integrater]"),
    ("[compartments]", "S I R\n[compartments]"),
    ("num_steps = 5", "num_steps = five"),
    ("num_steps = 5", "num_steps = 5\nspeed = 2"),
])
def test_parse_errors(old, new):
    with pytest.raises(ParseError):
        parse_model_file(BASE.replace(old, new))


def test_missing_parameter_value():
    mf = parse_model_file(BASE.replace("beta = 0.5", "beta"))
    with pytest.raises(MissingParameterError) as info:
        mf.build()
    assert info.value.name == "beta"
    assert mf.build({"beta": 0.1}).num_steps == 5


def test_arrays_literal_csv_and_shapes(tmp_path):
    (tmp_path / "contacts.csv").write_text("0,2\n2,0\n")
    (tmp_path / "init.csv").write_text("9,1,0\n5,0,0\n")
    text = """
[compartments]
S I R
[parameters]
beta = 0.5
gamma = 0.2
[arrays]
C = csv(contacts.csv)
w = [1.0,
     0.5]
[transitions]
S -> I : beta * (I + matvec(C, I)) * w / sumstate
I -> R : gamma
[initial_state]
csv(init.csv)
[integrator]
kind = discrete
num_steps = 2
"""
    path = tmp_path / "m.model"
    path.write_text(text)
    mf = load_model(path)
    assert mf.arrays["C"].tolist() == [[0, 2], [2, 0]]
    spec = mf.build()
    assert spec.num_strata == 2
    rate = spec.rates[0](0.0, spec.initial_state)
    assert np.allclose(rate, [0.5 * 1 / 10, 0.5 * 2 * 0.5 / 5])
    path.write_text(text.replace("w = [1.0,\n     0.5]", "w = [1.0, 0.5, 2.0]"))
    with pytest.raises(ValidationError):
        load_model(path)
    path.write_text(text.replace("csv(contacts.csv)", "csv(missing.csv)"))
    with pytest.raises(ValidationError):
        load_model(path)


def test_initial_state_expressions():
    mf = load_model(bundled_model_path("seir_network"))
    spec = mf.build({"I0": 7})
    pop = mf.arrays["pop"]
    assert spec.initial_state[0].tolist() == [pop[0] - 7, 0, 7, 0]
    assert np.array_equal(spec.initial_state[1:, 0], pop[1:])
    assert spec.initial_state.sum() == pop.sum()
    bad = BASE.replace("9 1 0", "S = 9\nI = sumstate")
    with pytest.raises(UnknownIdentifierError):
        parse_model_file(bad)


def test_matrix_valued_rate_rejected():
    text = BASE.replace("[transitions]", "[arrays]\nC = [[1]]\n\n[transitions]").replace(
        "I -> R : gamma", "I -> R : C")
    with pytest.raises(EvalError):
        parse_model_file(text)


def test_fit_and_observation_sections():
    mf = load_model(bundled_model_path("seir_network"))
    assert mf.fit["estimate"] == ("beta", "phi", "I0")
    assert mf.fit["log_transform"] == ("beta", "phi", "I0")
    assert mf.observation["kind"] == "poisson_increments" and mf.observation["compartment"] == "R"
    with pytest.raises(UnknownIdentifierError):
        parse_model_file(BASE + "\n[fit]\nestimate = beta delta\n")


@pytest.mark.parametrize("path", bundled_models(), ids=lambda p: p.stem)
def test_bundled_rates_match_hand_code(path):
    mf = load_model(path)
    gen = np.random.default_rng(2)
    params = mf.parameter_values()
    hand = HAND_RATES[path.stem](params, mf.arrays)
    spec = mf.build()
    M, X = spec.initial_state.shape
    for _ in range(20):
        x = gen.integers(1, 1000, size=(M, X)).astype(float)
        for dsl_rate, ref in zip(spec.rates, hand):
            np.testing.assert_allclose(dsl_rate(0.0, x), ref(0.0, x), rtol=1e-12, atol=0)


def test_models_dir_has_data():
    assert (MODELS_DIR / "seir_network_cases.csv").exists()
