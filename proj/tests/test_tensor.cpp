#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "unitedqa/checkpoint.hpp"
#include "unitedqa/optim.hpp"
#include "unitedqa/rng.hpp"
#include "unitedqa/tensor.hpp"

using namespace unitedqa;

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = true) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

// Central-difference oracle independent of grad_check: perturbs one entry of
// one leaf and re-evaluates the closure.
double fd_entry(const std::function<Tensor()>& f, Tensor leaf, std::size_t i, double h = 1e-5) {
    auto& v = leaf.values_mut();
    const double orig = v[i];
    v[i] = orig + h;
    const double lp = f().item();
    v[i] = orig - h;
    const double lm = f().item();
    v[i] = orig;
    return (lp - lm) / (2.0 * h);
}

}  // namespace

TEST(Softmax, UniformPair) {
    Tensor x = Tensor::leaf({2}, {0.0, 0.0});
    Tensor y = softmax(x, 0);
    EXPECT_DOUBLE_EQ(y.at(0), 0.5);
    EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, LogWeights) {
    Tensor x = Tensor::leaf({2}, {std::log(1.0), std::log(3.0)});
    Tensor y = softmax(x, 0);
    EXPECT_NEAR(y.at(0), 0.25, 1e-12);
    EXPECT_NEAR(y.at(1), 0.75, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> v(6);
        for (auto& x : v) x = rng.uniform(-5, 5);
        const double c = rng.uniform(-10, 10);
        std::vector<double> shifted(v);
        for (auto& x : shifted) x += c;
        Tensor a = softmax(Tensor::leaf({6}, v), 0);
        Tensor b = softmax(Tensor::leaf({6}, shifted), 0);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
    }
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
    Rng rng(11);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t rows = 1 + rng.index(4), cols = 1 + rng.index(8);
        Tensor x = random_leaf(rng, {rows, cols}, -50.0, 50.0, false);
        Tensor y = softmax(x, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += y.at(r, c);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, AxisOutOfRange) {
    Tensor x = Tensor::zeros({2, 2});
    EXPECT_THROW(softmax(x, 2), std::invalid_argument);
}

TEST(Backward, Square) {
    Tensor x = Tensor::leaf({1}, {3.0}, true);
    Tensor loss = mul(x, x);
    backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, ElementwiseProductSum) {
    Tensor x = Tensor::leaf({3}, {1.0, -2.0, 0.5}, true);
    Tensor y = Tensor::leaf({3}, {4.0, 5.0, -6.0}, true);
    Tensor loss = reduce_sum(mul(x, y));
    backward(loss);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(x.grad()[i], y.at(i));
        EXPECT_DOUBLE_EQ(y.grad()[i], x.at(i));
    }
}

TEST(Backward, MatmulMatchesCentralDifferences) {
    Rng rng(23);
    Tensor a = random_leaf(rng, {3, 4});
    Tensor b = random_leaf(rng, {4, 2});
    auto f = [&] { return reduce_sum(matmul(a, b)); };
    Tensor loss = f();
    backward(loss);
    const auto ga = a.grad();
    const auto gb = b.grad();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = fd_entry(f, a, i);
        EXPECT_LE(std::abs(ga[i] - n) / std::max({1.0, std::abs(ga[i]), std::abs(n)}), 1e-6);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double n = fd_entry(f, b, i);
        EXPECT_LE(std::abs(gb[i] - n) / std::max({1.0, std::abs(gb[i]), std::abs(n)}), 1e-6);
    }
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(add(x, x)), std::invalid_argument);
}

TEST(Backward, LossNotInGraphRejected) {
    Tensor x = Tensor::leaf({1}, {1.0}, true);
    Tensor in_graph = mul(x, x);
    Graph g = Graph::from(in_graph);
    Tensor other = mul(x, add(x, x));
    EXPECT_THROW(g.backward(other), std::invalid_argument);
}

TEST(Backward, RepeatedCallResetsGradients) {
    Tensor x = Tensor::leaf({1}, {3.0}, true);
    Tensor loss = mul(x, x);
    Graph g = Graph::from(loss);
    g.backward(loss);
    const double once = x.grad()[0];
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], once);
}

TEST(Graph, TopologicalOrderAndMembership) {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0}, true);
    Tensor y = exp(x);
    Tensor z = reduce_sum(mul(y, x));
    Graph g = Graph::from(z);
    EXPECT_TRUE(g.contains(z));
    EXPECT_TRUE(g.contains(x));
    std::unordered_map<const detail::Node*, std::size_t> position;
    for (std::size_t i = 0; i < g.nodes().size(); ++i) position[g.nodes()[i].get()] = i;
    for (std::size_t i = 0; i < g.nodes().size(); ++i)
        for (const auto& in : g.nodes()[i]->inputs) EXPECT_LT(position.at(in.get()), i);
}

TEST(Graph, ReplayReproducesBitIdenticalValues) {
    Rng rng(5);
    Tensor a = random_leaf(rng, {4, 3});
    Tensor b = random_leaf(rng, {3, 5});
    Tensor h = relu(matmul(a, b));
    Tensor s = softmax(h, 1);
    Tensor loss = reduce_sum(mul(s, s));
    Graph g = Graph::from(loss);
    EXPECT_TRUE(g.replay_matches());
}

TEST(Forward, DeterministicRebuild) {
    auto build = [] {
        Rng rng(99);
        Tensor a = random_leaf(rng, {5, 5});
        Tensor b = random_leaf(rng, {5, 5});
        return reduce_sum(softmax(matmul(a, exp(b)), 1));
    };
    Tensor r1 = build();
    Tensor r2 = build();
    EXPECT_EQ(std::memcmp(r1.values().data(), r2.values().data(), sizeof(double)), 0);
}

TEST(GradCheck, ExpAtOne) {
    Tensor x = Tensor::leaf({1}, {1.0}, true);
    const double err = grad_check([&] { return exp(x); }, {x});
    EXPECT_LE(err, 1e-6);
}

TEST(GradCheck, ConstantFunctionIsExactZero) {
    Tensor x = Tensor::leaf({3}, {1.0, 2.0, 3.0}, true);
    const double err = grad_check([&] { return Tensor::scalar(4.0); }, {x});
    EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, SoftmaxDotFixedTarget) {
    Tensor x = Tensor::leaf({4}, {0.3, -0.2, 0.9, 0.1}, true);
    Tensor t = Tensor::constant({4}, {0.1, 0.4, 0.2, 0.3});
    const double err = grad_check([&] { return reduce_sum(mul(softmax(x, 0), t)); }, {x});
    EXPECT_LE(err, 1e-6);
}

TEST(GradCheck, RejectsNonScalar) {
    Tensor x = Tensor::leaf({2}, {1.0, 2.0}, true);
    EXPECT_THROW(grad_check([&] { return add(x, x); }, {x}), std::invalid_argument);
    EXPECT_THROW(grad_check([&] { return mul(x, x); }, {x}, 0.0), std::invalid_argument);
}

// One grad_check per primitive on random small tensors (dims <= 8).
TEST(GradCheck, EveryPrimitive) {
    Rng rng(1234);
    const double tol = 1e-5;

    for (int rep = 0; rep < 3; ++rep) {
        Tensor a = random_leaf(rng, {3, 4});
        Tensor b = random_leaf(rng, {3, 4});
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(add(a, b), sub(a, b))); }, {a, b}), tol);

        Tensor m1 = random_leaf(rng, {4, 5});
        Tensor m2 = random_leaf(rng, {5, 3});
        Tensor m3 = random_leaf(rng, {4, 3});
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(matmul(m1, m2), m3)); }, {m1, m2, m3}),
                  tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(matmul_nt(m3, m2)); }, {m3, m2}), tol);

        Tensor pos = random_leaf(rng, {6}, 0.5, 3.0);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(log(pos), sqrt(pos))); }, {pos}), tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(exp(scale(pos, 0.5))); }, {pos}), tol);

        Tensor r = random_leaf(rng, {7});  // keep entries away from the relu kink
        for (auto& v : r.values_mut())
            if (std::abs(v) < 0.05) v = 0.2;
        EXPECT_LE(grad_check([&] { return reduce_sum(relu(r)); }, {r}), tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(tanh(r), r)); }, {r}), tol);

        Tensor sm = random_leaf(rng, {4, 6});
        Tensor tgt = random_leaf(rng, {4, 6}, 0.0, 1.0, false);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(softmax(sm, 1), tgt)); }, {sm}), tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(log_softmax(sm, 1), tgt)); }, {sm}), tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(softmax(sm, 0), tgt)); }, {sm}), tol);

        Tensor emb = random_leaf(rng, {6, 3});
        std::vector<std::size_t> ids{1, 3, 3, 0};
        Tensor w = random_leaf(rng, {4, 3}, -1.0, 1.0, false);
        EXPECT_LE(grad_check([&] { return reduce_sum(mul(gather(emb, ids), w)); }, {emb}), tol);

        Tensor pk = random_leaf(rng, {3, 5});
        EXPECT_LE(grad_check([&] { return reduce_sum(pick(pk, {4, 0, 2})); }, {pk}), tol);

        Tensor c1 = random_leaf(rng, {2, 3});
        Tensor c2 = random_leaf(rng, {4, 3});
        EXPECT_LE(
            grad_check([&] { return reduce_sum(exp(scale(concat({c1, c2}), 0.3))); }, {c1, c2}),
            tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(slice(c2, 1, 3)); }, {c2}), tol);

        Tensor rowv = random_leaf(rng, {3});
        EXPECT_LE(grad_check([&] { return reduce_sum(exp(add_rows(c1, rowv))); }, {c1, rowv}),
                  tol);

        Tensor sv = random_leaf(rng, {1});
        EXPECT_LE(grad_check([&] { return reduce_sum(exp(sub_scalar(rowv, sv))); }, {rowv, sv}),
                  tol);

        // reduce_max: keep the maximum unique so the subgradient is the derivative
        Tensor mx = Tensor::leaf({5}, {0.1, 0.9, -0.4, 0.3, 0.2}, true);
        EXPECT_LE(grad_check([&] { return reduce_max(mul(mx, mx)); }, {mx}), tol);

        Tensor ln_x = random_leaf(rng, {4, 6});
        Tensor ln_g = random_leaf(rng, {6}, 0.5, 1.5);
        Tensor ln_b = random_leaf(rng, {6});
        EXPECT_LE(grad_check(
                      [&] {
                          return reduce_sum(
                              mul(layer_norm(ln_x, ln_g, ln_b), tgt));
                      },
                      {ln_x, ln_g, ln_b}),
                  tol);

        Tensor rs = random_leaf(rng, {2, 6});
        EXPECT_LE(grad_check([&] { return reduce_sum(exp(reshape(rs, {4, 3}))); }, {rs}), tol);

        EXPECT_LE(grad_check([&] { return logsumexp(rowv); }, {rowv}), tol);
        EXPECT_LE(grad_check([&] { return reduce_sum(add_const(neg(rowv), 2.0)); }, {rowv}), tol);
    }
}

TEST(Logsumexp, MatchesReference) {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> v(5);
        for (auto& x : v) x = rng.uniform(-40, 40);
        double m = *std::max_element(v.begin(), v.end());
        double ref = 0.0;
        for (double x : v) ref += std::exp(x - m);
        ref = m + std::log(ref);
        EXPECT_NEAR(logsumexp(Tensor::leaf({5}, v)).item(), ref, 1e-12);
    }
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    std::vector<Tensor> params{Tensor::leaf({3}, {1.0, -2.0, 0.25}, true)};
    auto before = params[0].values();
    OptimizerState st = OptimizerState::for_params(params, 0.1);
    adam_step(params, {{0.0, 0.0, 0.0}}, st);
    EXPECT_EQ(params[0].values(), before);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepBiasCorrectedMagnitude) {
    std::vector<Tensor> params{Tensor::leaf({1}, {0.7}, true)};
    OptimizerState st = OptimizerState::for_params(params, 0.1);
    adam_step(params, {{1.0}}, st);
    const double delta = params[0].values()[0] - 0.7;
    EXPECT_LE(std::abs(delta - (-0.1)), 1e-6);
}

TEST(Adam, EqualGradsEqualUpdates) {
    std::vector<Tensor> params{Tensor::leaf({2}, {0.3, 0.3}, true)};
    OptimizerState st = OptimizerState::for_params(params, 0.05);
    adam_step(params, {{0.8, 0.8}}, st);
    EXPECT_DOUBLE_EQ(params[0].values()[0], params[0].values()[1]);
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
    std::vector<Tensor> params{Tensor::leaf({3}, {1.5, -0.0, 2.25}, true)};
    auto before = params[0].values();
    OptimizerState st = OptimizerState::for_params(params, 0.0);
    adam_step(params, {{0.3, -0.9, 1.1}}, st);
    EXPECT_EQ(std::memcmp(params[0].values().data(), before.data(), 3 * sizeof(double)), 0);
}

TEST(Adam, ShapeMismatchRejected) {
    std::vector<Tensor> params{Tensor::leaf({2}, {0.0, 0.0}, true)};
    OptimizerState st = OptimizerState::for_params(params);
    std::vector<std::vector<double>> bad{{1.0}};
    EXPECT_THROW(adam_step(params, bad, st), std::invalid_argument);
}

TEST(LrSchedule, SpecPoints) {
    EXPECT_DOUBLE_EQ(lr_schedule(10, 100, 0.1, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(lr_schedule(100, 100, 0.1, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(lr_schedule(5, 100, 0.1, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(lr_schedule(55, 100, 0.1, 1.0), 0.5);
    EXPECT_THROW(lr_schedule(0, 0, 0.1, 1.0), std::invalid_argument);
}

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(42), d(43);
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) any_diff = any_diff || (c.next_u64() != d.next_u64());
    EXPECT_TRUE(any_diff);
    Rng e(7);
    Rng f1 = e.fork(1), f2 = e.fork(2);
    EXPECT_NE(f1.next_u64(), f2.next_u64());
}

TEST(Rng, NormalMomentsSane) {
    Rng rng(17);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.05);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Checkpoint, RoundTripsBitExactly) {
    Rng rng(31);
    NamedParams params;
    params.emplace_back("alpha", random_leaf(rng, {3, 4}));
    params.emplace_back("beta", random_leaf(rng, {7}));
    const std::string path = (std::filesystem::temp_directory_path() / "uq_ckpt_test.bin").string();
    save_checkpoint(path, params);
    NamedParams loaded = load_checkpoint(path);
    ASSERT_EQ(loaded.size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ(loaded[i].first, params[i].first);
        EXPECT_EQ(loaded[i].second.shape(), params[i].second.shape());
        EXPECT_EQ(std::memcmp(loaded[i].second.values().data(), params[i].second.values().data(),
                              params[i].second.size() * sizeof(double)),
                  0);
    }
    // byte determinism of the writer itself
    EXPECT_EQ(checkpoint_bytes(params), checkpoint_bytes(params));
    std::filesystem::remove(path);
}

TEST(Checkpoint, MismatchedRestoreRejected) {
    NamedParams target;
    target.emplace_back("w", Tensor::zeros({2, 2}, true));
    NamedParams other;
    other.emplace_back("w", Tensor::zeros({2, 3}, true));
    EXPECT_THROW(restore_params(target, other), InputError);
}

TEST(Tensor, InvariantsAndErrors) {
    EXPECT_THROW(Tensor::leaf({2, 2}, {1.0}), std::invalid_argument);
    Tensor a = Tensor::zeros({2, 3});
    EXPECT_EQ(a.size(), 6u);
    EXPECT_THROW(matmul(a, a), std::invalid_argument);
    Tensor prod = mul(a, a);
    EXPECT_THROW(prod.values_mut(), std::logic_error);
    EXPECT_THROW(gather(a, {5}), std::invalid_argument);
    EXPECT_THROW(slice(a, 1, 4), std::invalid_argument);
    EXPECT_DOUBLE_EQ(Tensor::scalar(1.5).item(), 1.5);
    EXPECT_THROW(a.item(), std::invalid_argument);
}
