"""Builders for the bundled benchmark systems shared across the tests."""

import numpy as np

import slreach as sr

ROTATION = np.array([[0.0, 1.0], [-1.0, 0.0]])


def make_rotation():
    return sr.linear_field(ROTATION)


def make_vdp(mu: float = 1.0):
    return sr.vanderpol_field(mu)


def make_neural_spec():
    # weights frozen once; every test and config fixture reuses them
    rng = np.random.default_rng(20240817)
    w1 = rng.standard_normal((8, 2)) / np.sqrt(2.0)
    b1 = 0.1 * rng.standard_normal(8)
    w2 = rng.standard_normal((2, 8)) / np.sqrt(8.0)
    b2 = 0.1 * rng.standard_normal(2)
    return sr.NeuralFieldSpec(widths=(2, 8, 2), activation="tanh",
                              weights=[w1, w2], biases=[b1, b2])


def make_neural():
    return sr.neural_field(make_neural_spec())


def bundled_systems():
    """(name, field, x0, delta0, horizon) for each shipped system."""
    return [
        ("rotation", make_rotation(), np.array([1.0, 0.0]), 0.1, np.pi),
        ("vanderpol", make_vdp(), np.array([2.0, 0.0]), 0.05, 2.0),
        ("neural", make_neural(), np.array([0.5, -0.3]), 0.05, 2.0),
    ]
