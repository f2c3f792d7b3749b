"""Vector field families: values, jacobians, serialization, registry."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import slreach as sr
from helpers import ROTATION, make_neural, make_neural_spec, make_vdp


class TestLinearField:
    def test_value_is_matrix_action(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 3))
        field = sr.linear_field(a)
        x = rng.standard_normal(3)
        assert_allclose(field(x), a @ x, rtol=1e-14)

    def test_jacobian_is_constant(self):
        field = sr.linear_field(ROTATION)
        assert_allclose(field.jacobian(np.array([5.0, -2.0])), ROTATION)

    def test_nonsquare_rejected(self):
        with pytest.raises(sr.FieldConfigError):
            sr.linear_field(np.ones((2, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(sr.FieldConfigError):
            sr.linear_field(np.array([[0.0, np.inf], [0.0, 0.0]]))


class TestVanDerPolField:
    def test_value_formula(self):
        field = make_vdp(1.7)
        x = np.array([0.8, -0.6])
        expected = np.array([-0.6, 1.7 * (1 - 0.64) * (-0.6) - 0.8])
        assert_allclose(field(x), expected, rtol=1e-14)

    def test_jacobian_matches_finite_differences(self):
        field = make_vdp(1.3)
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(-2.5, 2.5, 2)
            fd = sr.fd_jacobian(lambda s: field(s), x)
            assert_allclose(field.jacobian(x), fd, atol=1e-8)


class TestNeuralField:
    def test_forward_matches_manual(self):
        spec = make_neural_spec()
        field = sr.neural_field(spec)
        x = np.array([0.4, -0.2])
        w1, w2 = spec.weights
        b1, b2 = spec.biases
        manual = w2 @ np.tanh(w1 @ x + b1) + b2
        assert_allclose(field(x), manual, rtol=1e-13)

    def test_sigmoid_activation(self):
        rng = np.random.default_rng(2)
        w1 = rng.standard_normal((4, 2))
        b1 = rng.standard_normal(4)
        w2 = rng.standard_normal((2, 4))
        b2 = rng.standard_normal(2)
        spec = sr.NeuralFieldSpec(widths=(2, 4, 2), activation="sigmoid",
                                  weights=[w1, w2], biases=[b1, b2])
        field = sr.neural_field(spec)
        x = np.array([0.3, 0.9])
        manual = w2 @ (1.0 / (1.0 + np.exp(-(w1 @ x + b1)))) + b2
        assert_allclose(field(x), manual, rtol=1e-13)

    def test_jacobian_matches_finite_differences(self):
        field = make_neural()
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-1.0, 1.0, 2)
            fd = sr.fd_jacobian(lambda s: field(s), x)
            assert_allclose(field.jacobian(x), fd, atol=1e-8)

    def test_initial_state_input(self):
        # a network reading (x, x0) shifts its output with x0
        rng = np.random.default_rng(4)
        w1 = rng.standard_normal((6, 4))
        b1 = rng.standard_normal(6)
        w2 = rng.standard_normal((2, 6))
        b2 = rng.standard_normal(2)
        spec = sr.NeuralFieldSpec(widths=(4, 6, 2), activation="tanh",
                                  weights=[w1, w2], biases=[b1, b2])
        field = sr.neural_field(spec, depends_on_initial=True)
        x = np.array([0.1, 0.2])
        x0 = np.array([-0.3, 0.4])
        manual = w2 @ np.tanh(w1 @ np.concatenate([x, x0]) + b1) + b2
        assert_allclose(field(x, x0), manual, rtol=1e-13)
        other = field(x, np.array([0.5, 0.5]))
        assert not np.allclose(field(x, x0), other)

    def test_flatten_round_trip(self):
        spec = make_neural_spec()
        flat = spec.flatten()
        back = sr.NeuralFieldSpec.from_flat((2, 8, 2), "tanh", flat)
        for w, w2 in zip(spec.weights, back.weights):
            assert_allclose(w, w2)
        for b, b2 in zip(spec.biases, back.biases):
            assert_allclose(b, b2)

    def test_file_round_trip(self, tmp_path):
        spec = make_neural_spec()
        npy = tmp_path / "net.npy"
        np.save(npy, spec.flatten())
        loaded = sr.NeuralFieldSpec.load(npy, (2, 8, 2), "tanh")
        assert_allclose(loaded.flatten(), spec.flatten())
        txt = tmp_path / "net.txt"
        np.savetxt(txt, spec.flatten())
        loaded = sr.NeuralFieldSpec.load(txt, (2, 8, 2), "tanh")
        assert_allclose(loaded.flatten(), spec.flatten())

    def test_wrong_flat_length_rejected(self):
        with pytest.raises(sr.FieldConfigError):
            sr.NeuralFieldSpec.from_flat((2, 4, 2), "tanh", np.zeros(5))

    def test_bad_activation_rejected(self):
        with pytest.raises(sr.FieldConfigError):
            sr.NeuralFieldSpec(widths=(2, 2), activation="relu",
                               weights=[np.zeros((2, 2))],
                               biases=[np.zeros(2)])

    def test_input_width_must_match_state(self):
        rng = np.random.default_rng(5)
        spec = sr.NeuralFieldSpec(
            widths=(3, 4, 2), activation="tanh",
            weights=[rng.standard_normal((4, 3)),
                     rng.standard_normal((2, 4))],
            biases=[rng.standard_normal(4), rng.standard_normal(2)])
        with pytest.raises(sr.FieldConfigError):
            sr.neural_field(spec)


class TestIntervalExtensions:
    def _check_inclusion(self, field, box_center, width, rng, count=200):
        lo = box_center - width
        hi = box_center + width
        rlo, rhi = field.interval_rhs(lo, hi)
        jlo, jhi = field.interval_jacobian(lo, hi)
        for _ in range(count):
            x = lo + (hi - lo) * rng.random(lo.size)
            v = field(x)
            j = field.jacobian(x)
            assert np.all(rlo <= v) and np.all(v <= rhi)
            assert np.all(jlo <= j) and np.all(j <= jhi)

    def test_linear_interval_inclusion(self):
        rng = np.random.default_rng(6)
        field = sr.linear_field(rng.standard_normal((3, 3)))
        self._check_inclusion(field, rng.standard_normal(3), 0.4, rng)

    def test_vanderpol_interval_inclusion(self):
        rng = np.random.default_rng(7)
        for mu in (1.0, -0.7):
            field = sr.vanderpol_field(mu)
            self._check_inclusion(field, np.array([1.5, -0.5]), 0.6, rng)

    def test_neural_interval_inclusion(self):
        rng = np.random.default_rng(8)
        self._check_inclusion(make_neural(), np.array([0.4, -0.2]), 0.5, rng)

    def test_sigmoid_interval_inclusion(self):
        rng = np.random.default_rng(9)
        w1 = rng.standard_normal((5, 2))
        b1 = rng.standard_normal(5)
        w2 = rng.standard_normal((2, 5))
        b2 = rng.standard_normal(2)
        spec = sr.NeuralFieldSpec(widths=(2, 5, 2), activation="sigmoid",
                                  weights=[w1, w2], biases=[b1, b2])
        self._check_inclusion(sr.neural_field(spec),
                              np.array([0.0, 0.0]), 0.8, rng)

    def test_user_field_has_no_interval_extension(self):
        field = sr.user_field(2, lambda x, x0, t: -x)
        with pytest.raises(sr.UnsupportedFieldError):
            field.interval_rhs(np.zeros(2), np.ones(2))


class TestUserField:
    def test_wraps_callables(self):
        field = sr.user_field(
            2, lambda x, x0, t: np.array([x[1], -np.sin(x[0])]),
            jac=lambda x, x0, t: np.array([[0.0, 1.0],
                                           [-np.cos(x[0]), 0.0]]))
        x = np.array([0.3, 0.1])
        assert_allclose(field(x), [0.1, -np.sin(0.3)])
        assert_allclose(field.jacobian(x)[1, 0], -np.cos(0.3))
        assert not field.supports_kernel

    def test_dimension_must_be_at_least_two(self):
        with pytest.raises(sr.FieldConfigError):
            sr.user_field(1, lambda x, x0, t: -x)


class TestRegistry:
    def test_bundled_families_listed(self):
        fams = sr.registered_families()
        for name in ("linear", "vanderpol", "neural"):
            assert name in fams

    def test_register_and_build(self):
        from slreach.fields import _REGISTRY

        def build(dim, params, **kw):
            scale = float(params[0])
            return sr.user_field(
                dim, lambda x, x0, t: -scale * x, name="decay",
                jac=lambda x, x0, t: -scale * np.eye(dim))

        sr.register_field_family("decay-test", build)
        try:
            assert "decay-test" in sr.registered_families()
            field = sr.build_field("decay-test", 2, [2.0])
            assert_allclose(field(np.array([1.0, -1.0])), [-2.0, 2.0])
        finally:
            _REGISTRY.pop("decay-test", None)

    def test_cannot_shadow_bundled(self):
        with pytest.raises(sr.FieldConfigError):
            sr.register_field_family("linear", lambda dim, params, **kw: None)

    def test_build_field_dispatch(self):
        field = sr.build_field("vanderpol", 2, [1.0])
        assert field.kind == "vanderpol"
        with pytest.raises(sr.FieldConfigError):
            sr.build_field("nope", 2, [])
