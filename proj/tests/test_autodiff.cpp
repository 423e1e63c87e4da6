#include <doctest.h>

#include <cmath>
#include <functional>

#include "osrlab/autodiff.hpp"
#include "osrlab/model.hpp"
#include "osrlab/rng.hpp"

using namespace osrlab;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
    double num = 0.0, den = 0.0;
    REQUIRE(got.numel() == want.numel());
    for (std::size_t i = 0; i < got.numel(); ++i) {
        num += (got.data[i] - want.data[i]) * (got.data[i] - want.data[i]);
        den += want.data[i] * want.data[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// small random tanh MLP used repeatedly as the nontrivial test function
struct TinyNet {
    Tensor w1, b1, w2, b2;
    static TinyNet make(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng) {
        TinyNet n;
        n.w1 = random_tensor({d_in, d_hidden}, rng, -0.8, 0.8);
        n.b1 = random_tensor({d_hidden}, rng, -0.2, 0.2);
        n.w2 = random_tensor({d_hidden, d_out}, rng, -0.8, 0.8);
        n.b2 = random_tensor({d_out}, rng, -0.2, 0.2);
        return n;
    }
    Tensor eval(const Tensor& x) const {
        Tensor h = Tensor::zeros({w1.cols()});
        for (std::size_t j = 0; j < w1.cols(); ++j) {
            double s = b1.data[j];
            for (std::size_t i = 0; i < w1.rows(); ++i) s += x.data[i] * w1.at(i, j);
            h.data[j] = std::tanh(s);
        }
        Tensor out = Tensor::zeros({w2.cols()});
        for (std::size_t j = 0; j < w2.cols(); ++j) {
            double s = b2.data[j];
            for (std::size_t i = 0; i < w2.rows(); ++i) s += h.data[i] * w2.at(i, j);
            out.data[j] = s;
        }
        return out;
    }
    Var build(Tape& tape, Var x) const {
        Var h = tape.tanh_(tape.add_rowvec(tape.matmul(x, tape.constant(w1)), tape.constant(b1)));
        return tape.add_rowvec(tape.matmul(h, tape.constant(w2)), tape.constant(b2));
    }
};

}  // namespace

TEST_CASE("grad: analytic examples") {
    // f(w) = w . w at w = (1, 2) -> grad (2, 4)
    Parameter w(Tensor::row({1.0, 2.0}));
    Tape tape;
    Var wv = tape.param(w);
    Var out = tape.sum(tape.mul(wv, wv));
    Parameter* params[] = {&w};
    auto grads = param_gradients(tape, out, params);
    CHECK(grads[0].data[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(grads[0].data[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("grad: constant function has zero gradient") {
    Parameter w(Tensor::row({1.0, 2.0}));
    Tape tape;
    (void)tape.param(w);
    Var c = tape.constant(Tensor::scalar(3.5));
    Var out = tape.sum(c);
    Parameter* params[] = {&w};
    auto grads = param_gradients(tape, out, params);
    CHECK(grads[0].data[0] == 0.0);
    CHECK(grads[0].data[1] == 0.0);
}

TEST_CASE("grad: parameter not on the tape gets a zero gradient") {
    Parameter on(Tensor::row({1.0}));
    Parameter off(Tensor::row({5.0}));
    Tape tape;
    Var v = tape.param(on);
    Var out = tape.sum(tape.mul(v, v));
    Parameter* params[] = {&on, &off};
    auto grads = param_gradients(tape, out, params);
    CHECK(grads[0].data[0] == doctest::Approx(2.0));
    CHECK(grads[1].data[0] == 0.0);
}

TEST_CASE("grad: non-scalar output is rejected") {
    Tape tape;
    Var x = tape.input(Tensor::row({1.0, 2.0}));
    Var y = tape.scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("grad: two-layer tanh MLP matches the finite-difference oracle") {
    Rng rng(42);
    Parameter w1(random_tensor({4, 8}, rng, -0.7, 0.7));
    Parameter b1(random_tensor({8}, rng, -0.2, 0.2));
    Parameter w2(random_tensor({8, 1}, rng, -0.7, 0.7));
    const Tensor x = random_tensor({4}, rng);

    auto loss_value = [&](const Tensor& w1v, const Tensor& b1v, const Tensor& w2v) {
        TinyNet n{w1v, b1v, w2v, Tensor::zeros({1})};
        Tensor out = n.eval(x);
        return out.data[0] * out.data[0];
    };

    Tape tape;
    Var xv = tape.constant(x);
    Var h = tape.tanh_(tape.add_rowvec(tape.matmul(xv, tape.param(w1)), tape.param(b1)));
    Var o = tape.matmul(h, tape.param(w2));
    Var loss = tape.sum(tape.mul(o, o));
    Parameter* params[] = {&w1, &b1, &w2};
    auto grads = param_gradients(tape, loss, params);

    const double h_fd = 1e-5;
    auto check_fd = [&](Parameter& p, const Tensor& grad, auto&& eval) {
        Tensor fd = Tensor::zeros(p.value.shape);
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double orig = p.value.data[i];
            p.value.data[i] = orig + h_fd;
            const double up = eval();
            p.value.data[i] = orig - h_fd;
            const double dn = eval();
            p.value.data[i] = orig;
            fd.data[i] = (up - dn) / (2.0 * h_fd);
        }
        CHECK(rel_err(grad, fd) < 1e-6);
    };
    check_fd(w1, grads[0], [&] { return loss_value(w1.value, b1.value, w2.value); });
    check_fd(b1, grads[1], [&] { return loss_value(w1.value, b1.value, w2.value); });
    check_fd(w2, grads[2], [&] { return loss_value(w1.value, b1.value, w2.value); });
}

TEST_CASE("jacobian: linear map equals its matrix") {
    const Tensor a = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
    auto build = [&](Tape& tape, Var x) {
        // f(x) = A x, with x as a row vector: x A^T via matmul_nt
        return tape.matmul_nt(x, tape.constant(a));
    };
    Tensor jac = jacobian(build, Tensor::row({0.3, -0.7}));
    CHECK(jac.at(0, 0) == doctest::Approx(1.0));
    CHECK(jac.at(0, 1) == doctest::Approx(2.0));
    CHECK(jac.at(1, 0) == doctest::Approx(3.0));
    CHECK(jac.at(1, 1) == doctest::Approx(4.0));
    CHECK(frobenius_norm(jac) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-12));
}

TEST_CASE("jacobian: identity map in d=3 has Frobenius norm sqrt(3)") {
    auto build = [](Tape& tape, Var x) { return tape.scale(x, 1.0); };
    Tensor jac = jacobian(build, Tensor::row({0.1, 0.2, 0.3}));
    CHECK(frobenius_norm(jac) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("jacobian: shape mismatch is an error") {
    const Tensor a = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
    auto build = [&](Tape& tape, Var x) { return tape.matmul_nt(x, tape.constant(a)); };
    CHECK_THROWS_AS(jacobian(build, Tensor::row({1.0, 2.0, 3.0})), std::invalid_argument);
}

TEST_CASE("fd_jacobian: analytic examples") {
    auto square = [](const Tensor& x) { return Tensor::row({x.data[0] * x.data[0]}); };
    Tensor j = fd_jacobian(square, Tensor::row({1.0}), 1e-4);
    CHECK(std::abs(j.data[0] - 2.0) < 1e-6);

    auto constant = [](const Tensor&) { return Tensor::row({7.0, -3.0}); };
    Tensor jc = fd_jacobian(constant, Tensor::row({0.4, 0.1, -0.2}), 1e-4);
    for (double v : jc.data) CHECK(std::abs(v) < 1e-12);

    CHECK_THROWS_AS(fd_jacobian(square, Tensor::row({1.0}), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fd_jacobian(square, Tensor::row({1.0}), -1e-3), std::invalid_argument);
}

TEST_CASE("jacobian vs fd_jacobian on a random 8-16-8 tanh net") {
    Rng rng(7);
    TinyNet net = TinyNet::make(8, 16, 8, rng);
    const Tensor x = random_tensor({8}, rng);
    Tensor ad = jacobian([&](Tape& t, Var v) { return net.build(t, v); }, x);
    Tensor fd = fd_jacobian([&](const Tensor& v) { return net.eval(v); }, x, 1e-5);
    CHECK(rel_err(ad, fd) < 1e-6);
}

TEST_CASE("primitive gradients match central differences over 100 seeds") {
    // each primitive checked through a scalar head: sum(op(x) * c)
    struct Prim {
        const char* name;
        std::function<Var(Tape&, Var)> build;
        std::function<double(double)> fwd;
        double lo, hi;
    };
    const std::vector<Prim> prims = {
        {"tanh", [](Tape& t, Var x) { return t.tanh_(x); }, [](double v) { return std::tanh(v); },
         -2.0, 2.0},
        {"sigmoid", [](Tape& t, Var x) { return t.sigmoid_(x); },
         [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, -3.0, 3.0},
        {"log", [](Tape& t, Var x) { return t.log_(x); }, [](double v) { return std::log(v); }, 0.2,
         3.0},
        {"acos", [](Tape& t, Var x) { return t.acos_clamped(x); },
         [](double v) { return std::acos(v); }, -0.9, 0.9},
        {"log_sigmoid", [](Tape& t, Var x) { return t.log_sigmoid(x); },
         [](double v) { return -std::log1p(std::exp(-v)); }, -3.0, 3.0},
        {"cos", [](Tape& t, Var x) { return t.cos_(x); }, [](double v) { return std::cos(v); }, -3.0,
         3.0},
    };
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        for (const Prim& prim : prims) {
            const Tensor x = random_tensor({5}, rng, prim.lo, prim.hi);
            const Tensor c = random_tensor({5}, rng, -1.0, 1.0);
            Tape tape;
            Var xv = tape.input(x);
            Var out = tape.sum(tape.mul(prim.build(tape, xv), tape.constant(c)));
            tape.backward(out);
            Tensor ad = tape.grad(xv);

            Tensor fd = Tensor::zeros({5});
            const double h = 1e-6;
            for (std::size_t i = 0; i < 5; ++i) {
                double up = 0.0, dn = 0.0;
                for (std::size_t j = 0; j < 5; ++j) {
                    const double xp = j == i ? x.data[j] + h : x.data[j];
                    const double xm = j == i ? x.data[j] - h : x.data[j];
                    up += prim.fwd(xp) * c.data[j];
                    dn += prim.fwd(xm) * c.data[j];
                }
                fd.data[i] = (up - dn) / (2.0 * h);
            }
            INFO(prim.name << " seed " << seed);
            CHECK(rel_err(ad, fd) < 1e-6);
        }
    }
}

TEST_CASE("binary and reduction primitives match central differences") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        // add, mul, matmul, l2norm through a scalar head
        const Tensor a = random_tensor({3, 4}, rng, 0.2, 1.2);  // keep l2norm away from 0
        const Tensor b = random_tensor({3, 4}, rng, -1.0, 1.0);
        const Tensor m = random_tensor({4, 2}, rng, -1.0, 1.0);

        auto value = [&](const Tensor& av) {
            // sum(((a + b) * b) @ m) + ||a||
            Tensor s = Tensor::zeros({3, 2});
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                    for (std::size_t p = 0; p < 4; ++p)
                        s.at(i, j) += (av.at(i, p) + b.at(i, p)) * b.at(i, p) * m.at(p, j);
            double total = 0.0;
            for (double v : s.data) total += v;
            return total + l2_norm(av);
        };

        Tape tape;
        Var av = tape.input(a);
        Var expr = tape.matmul(tape.mul(tape.add(av, tape.constant(b)), tape.constant(b)),
                               tape.constant(m));
        Var out = tape.add(tape.sum(expr), tape.l2norm(av));
        tape.backward(out);
        Tensor ad = tape.grad(av);

        Tensor fd = Tensor::zeros({3, 4});
        const double h = 1e-6;
        Tensor ax = a;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            ax.data[i] = a.data[i] + h;
            const double up = value(ax);
            ax.data[i] = a.data[i] - h;
            const double dn = value(ax);
            ax.data[i] = a.data[i];
            fd.data[i] = (up - dn) / (2.0 * h);
        }
        CHECK(rel_err(ad, fd) < 1e-6);
    }
}

TEST_CASE("jacobian of a composition is the product of jacobians") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        TinyNet f = TinyNet::make(4, 6, 5, rng);
        TinyNet g = TinyNet::make(5, 7, 3, rng);
        const Tensor x = random_tensor({4}, rng);
        const Tensor fx = f.eval(x);

        Tensor jg_jf = jacobian(
            [&](Tape& t, Var v) { return g.build(t, f.build(t, v)); },
            x);
        Tensor jf = jacobian([&](Tape& t, Var v) { return f.build(t, v); }, x);
        Tensor jg = jacobian([&](Tape& t, Var v) { return g.build(t, v); }, fx);

        Tensor prod = Tensor::zeros({3, 4});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                for (std::size_t p = 0; p < 5; ++p) prod.at(i, j) += jg.at(i, p) * jf.at(p, j);
        CHECK(rel_err(jg_jf, prod) < 1e-10);
    }
}

TEST_CASE("determinism: same tape and inputs give bit-identical gradients") {
    Rng rng(5);
    TinyNet net = TinyNet::make(6, 10, 4, rng);
    const Tensor x = random_tensor({6}, rng);
    auto run = [&]() {
        Tape tape;
        Var xv = tape.input(x);
        Var out = tape.l2norm(net.build(tape, xv));
        tape.backward(out);
        return tape.grad(xv);
    };
    Tensor g1 = run();
    Tensor g2 = run();
    for (std::size_t i = 0; i < g1.numel(); ++i) CHECK(g1.data[i] == g2.data[i]);
}

TEST_CASE("tape replay reproduces forward values bit-identically") {
    Rng rng(9);
    TinyNet net = TinyNet::make(5, 9, 3, rng);
    Tape tape;
    Var xv = tape.input(random_tensor({5}, rng));
    Var out = tape.l2norm(tape.normalize_rows(net.build(tape, xv), 1e-12));
    (void)out;
    CHECK(tape.replay_matches());
}

TEST_CASE("normalize_rows backward matches finite differences near and away from eps") {
    Rng rng(21);
    const Tensor v = random_tensor({1, 6}, rng, -1.0, 1.0);
    const Tensor c = random_tensor({1, 6}, rng, -1.0, 1.0);
    Tape tape;
    Var vv = tape.input(v);
    Var out = tape.sum(tape.mul(tape.normalize_rows(vv, 1e-12), tape.constant(c)));
    tape.backward(out);
    const Tensor& ad = tape.grad(vv);

    Tensor fd = Tensor::zeros({1, 6});
    const double h = 1e-7;
    Tensor vx = v;
    auto value = [&](const Tensor& t) {
        const double n = std::max(l2_norm(t), 1e-12);
        double s = 0.0;
        for (std::size_t i = 0; i < t.numel(); ++i) s += t.data[i] / n * c.data[i];
        return s;
    };
    for (std::size_t i = 0; i < v.numel(); ++i) {
        vx.data[i] = v.data[i] + h;
        const double up = value(vx);
        vx.data[i] = v.data[i] - h;
        const double dn = value(vx);
        vx.data[i] = v.data[i];
        fd.data[i] = (up - dn) / (2.0 * h);
    }
    CHECK(rel_err(ad, fd) < 1e-5);
}
