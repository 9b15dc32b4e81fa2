import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from wbkan.errors import ConfigError, DataError, UnsnappedError
from wbkan.library import BASIS_NAMES, equivalent, get_basis
from wbkan.network import EdgeActivation, KanNetwork, forward, init_network
from wbkan.spline import SplineGrid, basis_batch
from wbkan.symbolic import (
    TIE_RTOL,
    build_expression,
    emit_formula,
    evaluate,
    fit_affine,
    node_inputs,
    refine,
    render,
    snap_edge,
    snap_network,
    snap_samples,
)

# every basis with no singular points; constant has no shape to recover
SMOOTH = [n for n in BASIS_NAMES if n != "constant" and not get_basis(n).is_singular]
ORACLE_PARAMS = {
    "identity": (1.5, 0.3, 2.0, -0.5), "square": (1.5, 0.3, 2.0, -0.5),
    "cube": (1.5, 0.3, 2.0, -0.5), "exp": (1.5, 0.3, 2.0, -0.5),
    "sin": (3.0, 1.0, 2.0, -0.5), "cos": (3.0, 1.0, 2.0, -0.5),
    "arctan": (3.0, 0.5, 2.0, -0.5), "tanh": (2.0, 0.5, 2.0, -0.5),
    "sigmoid": (4.0, 0.5, 2.0, -0.5), "gaussian": (1.5, 0.3, 2.0, -0.5),
    "abs": (1.5, 0.3, 2.0, -0.5),
}
SYMPY_LOCALS = {"arctan": sp.atan, "sigmoid": lambda u: 1 / (1 + sp.exp(-u)), "abs": sp.Abs}


def oracle_samples(name, seed=0, n=400, noise=1e-3):
    rng = np.random.default_rng(seed)
    a, b, c, d = ORACLE_PARAMS[name]
    x = rng.uniform(-1, 1, n)
    return x, c * get_basis(name)(a * x + b) + d + rng.normal(0, noise, n)


def spline_fit_edge(f, grid=SplineGrid()):
    """Spline edge (w_b = 0) least-squares fitted to ``f`` on the grid domain."""
    x = np.linspace(grid.domain_lo, grid.domain_hi, 400)
    B, _ = basis_batch(x, grid)
    coeffs = np.linalg.lstsq(B, f(x), rcond=None)[0]
    return EdgeActivation.spline(grid, coeffs, w_b=0.0, w_s=1.0)


def reference_dab_network(scale=1.0):
    net = KanNetwork([1, 1, 1], input_names=["D"], output_names=["V_out"])
    net.layers[0].set_edge(0, 0, EdgeActivation.symbolic(
        "square", 1.0 * scale, -0.5 * scale, 8.7 * scale, -1.21 * scale))
    net.layers[1].set_edge(0, 0, EdgeActivation.symbolic(
        "arctan", 1.0 * scale, 0.0, 9.04 * scale, 15.96 * scale))
    return net


def dab_data(n, seed=0, lo=0.3, hi=0.7):
    D = np.random.default_rng(seed).uniform(lo, hi, n)
    return D[:, None], 2.0 / (D * (1 - D))


class TestFitAffine:
    def test_sine_recovery(self):
        x = np.linspace(-1, 1, 200)
        y = 2 * np.sin(3 * x + 1) - 0.5
        fit = fit_affine("sin", x, y)
        assert fit.r2 > 0.999
        a, b, c, d = fit.affine
        # equivalent up to sin's period and sign symmetries: same function everywhere
        assert abs(a) == pytest.approx(3.0, rel=1e-6)
        wide = np.linspace(-20, 20, 1001)
        np.testing.assert_allclose(c * np.sin(a * wide + b) + d, 2 * np.sin(3 * wide + 1) - 0.5,
                                   atol=1e-5)

    def test_identity_exact(self):
        x = np.linspace(-2, 3, 50)
        fit = fit_affine("identity", x, x)
        a, b, c, d = fit.affine
        assert c * a == pytest.approx(1.0, abs=1e-10)
        assert c * b + d == pytest.approx(0.0, abs=1e-10)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_constant_data_is_degenerate(self):
        fit = fit_affine("sin", np.linspace(0, 1, 20), np.full(20, 5.0))
        assert fit.degenerate and fit.basis == "constant"
        assert (fit.c, fit.d) == (0.0, 5.0)

    def test_input_checks(self):
        with pytest.raises(DataError):
            fit_affine("sin", np.arange(5.0), np.arange(5.0))
        with pytest.raises(DataError):
            fit_affine("sin", np.arange(12.0), np.arange(11.0))

    def test_r2_never_above_one(self, rng):
        x = rng.uniform(-1, 1, 50)
        y = rng.normal(size=50)
        for name in BASIS_NAMES:
            assert fit_affine(name, x, y).r2 <= 1.0 + 1e-12


class TestSnapping:
    @pytest.mark.parametrize("name", SMOOTH)
    def test_oracle(self, name):
        x, y = oracle_samples(name)
        _, entry = snap_samples(x, y)
        assert equivalent(name, entry.basis), entry.candidates[:3]
        assert entry.r2 > 0.99

    def test_square_edge(self):
        edge = spline_fit_edge(lambda x: x ** 2)
        new, entry = snap_edge(edge, np.linspace(-1, 1, 300))
        assert new.basis_id == "square" and entry.status == "SNAPPED"

    def test_override(self):
        edge = spline_fit_edge(lambda x: np.arctan(2 * x))
        new, entry = snap_edge(edge, np.linspace(-1, 1, 300), override="sigmoid")
        assert new.basis_id == "sigmoid"
        assert entry.mode == "override"

    def test_unsnapped_below_floor(self):
        rng = np.random.default_rng(2)
        edge = EdgeActivation.spline(SplineGrid(G=20, k=3), rng.normal(size=23), w_b=0.0)
        new, entry = snap_edge(edge, np.linspace(-1, 1, 400))
        assert entry.status == "UNSNAPPED"
        assert new is edge

    def test_dead_edge_is_degenerate(self):
        edge = EdgeActivation.spline(SplineGrid(), np.full(8, 0.25), w_b=0.0)
        new, entry = snap_edge(edge, np.linspace(-1, 1, 50))
        assert entry.status == "DEGENERATE"
        np.testing.assert_allclose(new.affine[2:], (0.0, 0.25), atol=1e-12)

    def test_rejects_non_spline(self):
        with pytest.raises(ConfigError):
            snap_edge(EdgeActivation.zero(), np.zeros(20))

    @pytest.mark.parametrize("seed", range(6))
    def test_choice_is_maximal_within_tie_band(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, 200)
        y = np.sin(2 * x) + 0.3 * x ** 2 + rng.normal(0, 0.05, 200)
        _, entry = snap_samples(x, y)
        best = max(r2 for _, r2 in entry.candidates)
        assert 1 - entry.r2 <= (1 - best) * (1 + TIE_RTOL) + 1e-15
        # no earlier library basis sits inside the band
        band = [n for n, r2 in entry.candidates if 1 - r2 <= (1 - best) * (1 + TIE_RTOL) + 1e-15]
        assert min(band, key=BASIS_NAMES.index) == entry.basis

    def test_network_snap_and_overrides(self):
        X = np.linspace(0, 4, 200)[:, None]
        net = init_network([1, 1, 1], seed=0)
        net.set_normalizers([0], [4])
        net.layers[0].set_edge(0, 0, spline_fit_edge(lambda x: x ** 2))
        net.layers[1].set_edge(0, 0, spline_fit_edge(lambda x: np.sin(2 * x)))
        snapped, rep = snap_network(net, X, overrides={(1, 0, 0): "cos"})
        assert [e.basis for e in rep.entries] == ["square", "cos"]
        assert [e.mode for e in rep.entries] == ["auto", "override"]
        assert rep.entries[1].layer == 1 and tuple(rep.entries[1].edge) == (0, 0)
        assert snapped.spline_edges() == [] and net.spline_edges() != []
        with pytest.raises(ConfigError):
            snap_network(net, X, overrides={(3, 0, 0): "sin"})

    def test_later_layers_see_snapped_inputs(self):
        X = np.linspace(-1, 1, 200)[:, None]
        net = init_network([1, 1, 1], seed=0)
        net.layers[0].set_edge(0, 0, spline_fit_edge(lambda x: 0.5 * x ** 2))
        snapped, _ = snap_network(net, X)
        after = node_inputs(snapped, X)[1]
        assert after.shape == (200, 1)
        np.testing.assert_allclose(after[:, 0], 0.5 * X[:, 0] ** 2, atol=2e-3)


class TestRefine:
    def test_requires_symbolic(self):
        net = init_network([1, 2, 1])
        with pytest.raises(UnsnappedError) as exc:
            refine(net, np.zeros((20, 1)), np.zeros(20))
        assert "0/0/0" in str(exc.value)

    def test_fixed_point(self):
        X = np.linspace(-1, 1, 100)[:, None]
        net = KanNetwork([1, 1])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic("sin", 2.0, 0.5, 1.5, -0.2))
        y = forward(net, X)[:, 0]
        rep = refine(net, X, y, max_steps=300)
        assert rep.initial_loss == 0.0
        assert abs(rep.final_loss - rep.initial_loss) <= 1e-12

    def test_perturbed_reference_recovers(self):
        X, y = dab_data(4000, seed=1)
        net = reference_dab_network(scale=1.05)
        rep = refine(net, X, y, max_steps=3000)
        Xt, yt = dab_data(1000, seed=2)
        rmse = np.sqrt(np.mean((forward(net, Xt)[:, 0] - yt) ** 2))
        assert rep.final_loss <= rep.initial_loss
        assert rmse < 0.05

    def test_monotone_over_random_starts(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-1, 1, (200, 2))
        y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2
        for _ in range(20):
            net = KanNetwork([2, 2, 1])
            for layer in net.layers:
                for j in range(layer.n_out):
                    for i in range(layer.n_in):
                        basis = str(rng.choice(["sin", "square", "arctan", "identity"]))
                        layer.set_edge(i, j, EdgeActivation.symbolic(
                            basis, *rng.uniform(0.5, 1.5, 2), *rng.normal(size=2)))
            rep = refine(net, X, y, max_steps=150, window=20)
            assert rep.final_loss <= rep.initial_loss
            assert all(b >= a for a, b in zip(rep.losses[1:], rep.losses))


def random_symbolic(seed, shape=(2, 3, 1)):
    rng = np.random.default_rng(seed)
    net = KanNetwork(list(shape), input_names=[f"v{i}" for i in range(shape[0])])
    net.set_normalizers(-2 * np.ones(shape[0]), 3 * np.ones(shape[0]), -1.0, 5.0)
    for layer in net.layers:
        for j in range(layer.n_out):
            for i in range(layer.n_in):
                basis = str(rng.choice(SMOOTH + ["constant"]))
                if basis == "exp":
                    basis = "tanh"  # keep compositions well scaled
                if rng.random() < 0.15:
                    layer.set_edge(i, j, EdgeActivation.zero())
                    continue
                layer.set_edge(i, j, EdgeActivation.symbolic(
                    basis, rng.uniform(0.3, 1.5) * rng.choice([-1, 1]), rng.normal(scale=0.5),
                    rng.normal(), rng.normal(scale=0.5)))
    return net


class TestExpressions:
    def test_y_equals_x(self):
        net = KanNetwork([1, 1], input_names=["x"])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic("identity", 1, 0, 1, 0))
        text, _ = emit_formula(net)
        assert text == "y = x"

    def test_reference_shape(self):
        text, _ = emit_formula(reference_dab_network())
        assert text == "V_out = 9.04*arctan(8.70*(D - 0.50)**2 - 1.21) + 15.96"

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_fidelity(self, seed):
        net = random_symbolic(seed)
        X = np.random.default_rng(seed).uniform(-2, 3, (200, 2))
        expr = build_expression(net)
        np.testing.assert_allclose(evaluate(expr, X), forward(net, X)[:, 0], rtol=1e-9,
                                   atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_sympy_round_trip(self, seed):
        net = random_symbolic(seed)
        _, expr = emit_formula(net)
        text = render(expr, precision=None)
        syms = sp.symbols("v0 v1")
        parsed = sp.sympify(text, locals=dict(SYMPY_LOCALS, v0=syms[0], v1=syms[1]))
        f = sp.lambdify(syms, parsed, "numpy")
        X = np.random.default_rng(seed).uniform(-2, 3, (1000, 2))
        got = np.broadcast_to(f(X[:, 0], X[:, 1]), (1000,))
        np.testing.assert_allclose(got, forward(net, X)[:, 0], rtol=1e-9, atol=1e-9)

    def test_unsnapped_lists_edges(self):
        net = init_network([2, 2, 1])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic("sin"))
        with pytest.raises(UnsnappedError) as exc:
            emit_formula(net)
        assert exc.value.edges == net.spline_edges()
        assert "0/1/0" in str(exc.value)

    @pytest.mark.parametrize("basis, a, expected", [
        ("square", -0.05, "y = -10351.44*(x - 0.50)**2"),
        ("square", -0.5, "y = -(x - 0.50)**2"),
        ("cube", -0.5, "y = 0.50*(x - 0.50)**3"),
        ("reciprocal", -0.5, "y = 8.00/(x - 0.50)"),
        ("abs", -0.5, "y = -2.00*abs(x - 0.50)"),
    ])
    def test_homogeneous_bases_print_unit_scale(self, basis, a, expected):
        # c*g(a*x + b): the scale of a moves into the outer coefficient
        c = -4140576.0 if a == -0.05 else -4.0
        net = KanNetwork([1, 1], input_names=["x"])
        net.layers[0].set_edge(0, 0, EdgeActivation.symbolic(basis, a, -0.5 * a, c, 0.0))
        text, expr = emit_formula(net)
        assert text == expected
        X = np.array([[0.1], [0.3], [0.9]])
        x = sp.Symbol("x")
        parsed = sp.sympify(render(expr, None).replace("abs", "Abs"), locals={"x": x})
        got = sp.lambdify(x, parsed, "numpy")(X[:, 0])
        np.testing.assert_allclose(got, forward(net, X)[:, 0], rtol=1e-12)

    def test_rendering_precision(self):
        net = reference_dab_network()
        text, _ = emit_formula(net, precision=4)
        assert "9.0400*arctan" in text
        net.layers[1].set_edge(0, 0, EdgeActivation.symbolic("arctan", 1.0, 0.0, 0.001, 0.0))
        text, _ = emit_formula(net)
        assert "0.001*arctan" in text
