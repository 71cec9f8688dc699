#include <doctest.h>

#include <functional>

#include "genpt/nn_ops.hpp"
#include "genpt/rng.hpp"

using namespace genpt;
using ag::Tape;
using ag::Var;

namespace {

Tensord randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensord t(std::move(shape));
    for (double& x : t.v) x = rng.gaussian() * scale;
    return t;
}

// Central-difference check of d(scalar f)/d(inputs) for every input entry.
void gradcheck(const std::vector<Tensord>& inputs,
               const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
               double tol = 1e-6, double h = 1e-5) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<double> out = f(tape, vars);
    REQUIRE(out.val().numel() == 1);
    tape.backward(out);
    std::vector<Tensord> analytic;
    for (auto& v : vars) analytic.push_back(tape.grad(v));

    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t k = 0; k < inputs[i].numel(); ++k) {
            auto eval = [&](double delta) {
                Tape<double> t2;
                std::vector<Var<double>> vs;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    Tensord in = inputs[j];
                    if (j == i) in.v[size_t(k)] += delta;
                    vs.push_back(t2.leaf(in, false));
                }
                return f(t2, vs).val().v[0];
            };
            const double fd = (eval(h) - eval(-h)) / (2 * h);
            const double an = analytic[i].v[size_t(k)];
            const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            INFO("input ", i, " entry ", k, " fd=", fd, " an=", an);
            CHECK(err < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise and shape ops match finite differences") {
    Rng rng(7);
    auto a = randn({3, 4}, rng);
    auto b = randn({3, 4}, rng);

    gradcheck({a, b}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], v[1])));
    });
    gradcheck({a}, [](Tape<double>& t, auto& v) {
        return ag::sum_all(ag::scale(ag::add_scalar(v[0], 0.3), -1.7));
    });
    gradcheck({a}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::slice_axis(v[0], 1, 1, 2));
    });
    gradcheck({a, b}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::concat(0, v[0], v[1]));
    });
    gradcheck({randn({2, 3, 4}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mul(ag::transpose01(v[0]), ag::transpose01(v[0])));
    });
    gradcheck({a}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::reshape(v[0], {4, 3}));
    });
    gradcheck({a}, [](Tape<double>& t, auto& v) { return ag::mean_all(ag::sigmoid(v[0])); });
    gradcheck({a}, [](Tape<double>& t, auto& v) { return ag::mean_all(ag::gelu(v[0])); });
    gradcheck({a}, [](Tape<double>& t, auto& v) { return ag::mean_all(ag::abs_val(v[0])); },
              1e-6, 1e-6);
    gradcheck({a}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::clamp_max(v[0], 0.2));
    });
    gradcheck({randn({3, 4, 2}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::affine2(v[0], 1.5, -0.25, -2.0, 0.75));
    });
    gradcheck({randn({2, 3}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mul(ag::broadcast0(v[0], 4), ag::broadcast0(v[0], 4)));
    });
    gradcheck({randn({3, 5}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mean_lastdim(ag::mul(v[0], v[0])));
    });
}

TEST_CASE("matmul gradients") {
    Rng rng(9);
    gradcheck({randn({3, 4}, rng), randn({4, 5}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::matmul(v[0], v[1]));
    });
    gradcheck({randn({2, 3, 4}, rng), randn({4, 2}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mul(ag::matmul(v[0], v[1]), ag::matmul(v[0], v[1])));
    });
}

TEST_CASE("bce with logits") {
    Rng rng(11);
    Tensord targets({3, 2});
    for (double& x : targets.v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
    gradcheck({randn({3, 2}, rng)}, [&](Tape<double>& t, auto& v) {
        return ag::bce_with_logits_mean(v[0], targets);
    });
    // logit 0 -> loss ln 2 for either target value
    Tape<double> tape;
    Tensord z({1, 1});
    Tensord t1({1, 1});
    t1.v[0] = 1.0;
    auto l = ag::bce_with_logits_mean(tape.leaf(z, false), t1);
    CHECK(l.val().v[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("rms norm with and without gain") {
    Rng rng(13);
    gradcheck({randn({4, 6}, rng)}, [](Tape<double>& t, auto& v) {
        Var<double> none;
        return ag::mean_all(ag::mul(ag::rms_norm(v[0], none), ag::rms_norm(v[0], none)));
    });
    gradcheck({randn({4, 6}, rng), randn({6}, rng, 0.5)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::rms_norm(v[0], v[1]));
    });
}

TEST_CASE("attention gradients") {
    Rng rng(17);
    gradcheck({randn({2, 3, 4}, rng), randn({2, 3, 4}, rng), randn({2, 3, 4}, rng)},
              [](Tape<double>& t, auto& v) {
                  return ag::mean_all(ag::attention(v[0], v[1], v[2], 2));
              },
              1e-5);
}

TEST_CASE("conv2d, pooling, instance norm gradients") {
    Rng rng(19);
    gradcheck({randn({2, 3, 6, 8}, rng), randn({2, 3, 3, 3}, rng, 0.5), randn({2}, rng, 0.2)},
              [](Tape<double>& t, auto& v) {
                  return ag::mean_all(ag::conv2d(v[0], v[1], v[2], 1, 1));
              },
              1e-5);
    gradcheck({randn({1, 2, 8, 8}, rng), randn({3, 2, 7, 7}, rng, 0.3), randn({3}, rng, 0.2)},
              [](Tape<double>& t, auto& v) {
                  return ag::mean_all(ag::conv2d(v[0], v[1], v[2], 2, 3));
              },
              1e-5);
    gradcheck({randn({2, 3, 4, 6}, rng)}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::mul(ag::avg_pool2(v[0]), ag::avg_pool2(v[0])));
    });
    gradcheck({randn({2, 3, 4, 4}, rng), randn({3}, rng, 0.3), randn({3}, rng, 0.3)},
              [](Tape<double>& t, auto& v) {
                  auto w = ag::add_scalar(v[1], 1.0);
                  return ag::mean_all(ag::instance_norm(v[0], w, v[2]));
              },
              1e-5);
}

TEST_CASE("bilinear neighbourhood sampling: values and gradients") {
    Rng rng(23);
    auto fmap = randn({2, 3, 6, 7}, rng);
    Tensord centers({2, 2, 2});
    centers.v = {2.3, 3.1, 0.4, 1.7, 5.9, 2.2, 3.0, 4.5};  // includes near-edge points

    gradcheck({fmap, centers}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::neighborhood_sample(v[0], v[1], 1));
    }, 1e-5);

    // integer point at a cell: the center tap equals the stored feature
    Tape<double> tape;
    auto fv = tape.leaf(fmap, false);
    Tensord c({2, 1, 2});
    c.v = {3.0, 2.0, 4.0, 1.0};
    auto out = ag::neighborhood_sample(fv, tape.leaf(c, false), 1);  // [2,1,3,9]
    CHECK(out.val().at(0, 0, 1, 4) == doctest::Approx(fmap.at(0, 1, 2, 3)).epsilon(1e-12));
    CHECK(out.val().at(1, 0, 2, 4) == doctest::Approx(fmap.at(1, 2, 1, 4)).epsilon(1e-12));

    // midpoint of two cells: the arithmetic mean
    Tensord cm({1, 1, 2});
    cm.v = {3.5, 2.0};
    Tensord one_frame({1, 3, 6, 7});
    std::copy_n(fmap.data(), one_frame.numel(), one_frame.data());
    auto out2 = ag::neighborhood_sample(tape.leaf(one_frame, false), tape.leaf(cm, false), 1);
    CHECK(out2.val().at(0, 0, 0, 4) ==
          doctest::Approx(0.5 * (one_frame.at(0, 0, 2, 3) + one_frame.at(0, 0, 2, 4)))
              .epsilon(1e-12));
}

TEST_CASE("neighborhood_sample_frames gradients with repeated frames") {
    Rng rng(29);
    auto fmap = randn({3, 2, 5, 6}, rng);
    Tensord pts({3, 2});
    pts.v = {1.2, 2.3, 4.1, 0.7, 2.5, 3.5};
    std::vector<int> frames = {2, 0, 2};
    gradcheck({fmap, pts}, [&](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::neighborhood_sample_frames(v[0], v[1], frames, 1));
    }, 1e-5);
}

TEST_CASE("corr gram matches a double-loop oracle and differentiates") {
    Rng rng(31);
    auto fq = randn({2, 2, 3, 4}, rng);
    auto ft = randn({2, 2, 3, 4}, rng);

    Tape<double> tape;
    auto out = ag::corr_gram(tape.leaf(fq, false), tape.leaf(ft, false));
    for (int f = 0; f < 2; ++f)
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    double want = 0;
                    for (int c = 0; c < 3; ++c) want += fq.at(f, n, c, i) * ft.at(f, n, c, j);
                    CHECK(out.val().at(f, n, i * 4 + j) == doctest::Approx(want).epsilon(1e-10));
                }

    gradcheck({fq, ft}, [](Tape<double>& t, auto& v) {
        return ag::mean_all(ag::corr_gram(v[0], v[1]));
    });
}

TEST_CASE("stopgrad blocks the path") {
    Rng rng(37);
    auto a = randn({2, 2}, rng);
    Tape<double> tape;
    auto v = tape.leaf(a, true);
    auto out = ag::mean_all(ag::mul(ag::stopgrad(v), v));
    tape.backward(out);
    for (int64_t k = 0; k < a.numel(); ++k)
        CHECK(tape.grad(v).v[size_t(k)] == doctest::Approx(a.v[size_t(k)] / 4.0).epsilon(1e-12));
}

TEST_CASE("shared subexpressions accumulate gradients") {
    Rng rng(41);
    auto a = randn({3}, rng);
    Tape<double> tape;
    auto v = tape.leaf(a, true);
    auto out = ag::sum_all(ag::add(v, v));
    tape.backward(out);
    for (int64_t k = 0; k < 3; ++k) CHECK(tape.grad(v).v[size_t(k)] == doctest::Approx(2.0));
}
