#include "swav/autograd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace swav;
using namespace swav::ag;

namespace {

Mat randm(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Mat m(r, c);
    for (auto& v : m.values()) v = nd(rng);
    return m;
}

// Scalar probe u * out * w with fixed random u, w.
Var reduce(const Var& out, std::uint64_t seed) {
    const Var u = Var::constant(randm(1, out.rows(), seed));
    const Var w = Var::constant(randm(out.cols(), 1, seed + 1));
    return matmul(matmul(u, out), w);
}

using Builder = std::function<Var(const std::vector<Var>&)>;

// Central differences against backward() for every entry of every input.
void check_grad(const std::vector<Mat>& inputs, const Builder& f, double tol = 1e-6) {
    std::vector<Var> leaves;
    for (const auto& m : inputs) leaves.push_back(Var::leaf(m, true));
    const Var loss = f(leaves);
    ASSERT_EQ(loss.rows(), 1u);
    ASSERT_EQ(loss.cols(), 1u);
    backward(loss);
    const double h = 1e-6;
    for (std::size_t li = 0; li < inputs.size(); ++li) {
        for (std::size_t e = 0; e < inputs[li].size(); ++e) {
            auto eval = [&](double delta) {
                std::vector<Var> ls;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Mat m = inputs[j];
                    if (j == li) m.values()[e] += delta;
                    ls.push_back(Var::constant(m));
                }
                return f(ls).value()(0, 0);
            };
            const double num = (eval(h) - eval(-h)) / (2 * h);
            const double ana = leaves[li].grad().empty() ? 0.0 : leaves[li].grad().values()[e];
            EXPECT_NEAR(ana, num, tol * std::max(1.0, std::abs(num))) << "input " << li << " entry " << e;
        }
    }
}

}  // namespace

TEST(Autograd, Matmul) {
    check_grad({randm(3, 4, 1), randm(4, 2, 2)}, [](auto& v) { return reduce(matmul(v[0], v[1]), 9); });
}

TEST(Autograd, AddAddRowScaleAxpy) {
    check_grad({randm(3, 4, 1), randm(3, 4, 2), randm(1, 4, 3)}, [](auto& v) {
        return reduce(axpy(scale(add(v[0], v[1]), 0.7), add_row(v[0], v[2]), -1.3), 4);
    });
}

TEST(Autograd, Linear) {
    check_grad({randm(5, 3, 1), randm(3, 4, 2), randm(1, 4, 3)},
               [](auto& v) { return reduce(linear(v[0], v[1], v[2]), 5); });
}

TEST(Autograd, GatherMeanAndRows) {
    const std::vector<std::vector<int>> groups{{0, 2}, {1}, {2, 2, 3}};
    check_grad({randm(4, 3, 1)}, [&](auto& v) {
        return reduce(concat_rows({gather_mean(v[0], groups), gather_rows(v[0], {3, 0, 3})}), 6);
    });
}

TEST(Autograd, SelectRowAndConcat) {
    check_grad({randm(3, 4, 1), randm(2, 4, 2)},
               [](auto& v) { return reduce(select_row(concat_rows({v[0], v[1]}), 3), 7); });
}

TEST(Autograd, LayerNorm) {
    check_grad({randm(3, 6, 1), randm(1, 6, 2), randm(1, 6, 3)},
               [](auto& v) { return reduce(layer_norm(v[0], v[1], v[2], 1e-5), 8); }, 1e-5);
}

TEST(Autograd, Gelu) {
    check_grad({randm(4, 5, 1, 2.0)}, [](auto& v) { return reduce(gelu(v[0]), 9); });
}

TEST(Autograd, AttentionWithKeyMask) {
    const std::vector<char> mask{1, 1, 0, 1, 1};
    check_grad({randm(5, 4, 1), randm(5, 4, 2), randm(5, 4, 3)},
               [&](auto& v) { return reduce(attention(v[0], v[1], v[2], 2, mask), 10); }, 1e-5);
}

TEST(Autograd, MaskedKeysGetNoWeight) {
    const Mat q = randm(3, 4, 1), k = randm(3, 4, 2), v = randm(3, 4, 3);
    Mat k2 = k, v2 = v;
    for (std::size_t c = 0; c < 4; ++c) {
        k2(1, c) += 5.0;
        v2(1, c) -= 3.0;
    }
    const std::vector<char> mask{1, 0, 1};
    const auto a = attention(Var::constant(q), Var::constant(k), Var::constant(v), 2, mask).value();
    const auto b = attention(Var::constant(q), Var::constant(k2), Var::constant(v2), 2, mask).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12);
}

TEST(Autograd, CrossEntropy) {
    check_grad({randm(1, 2, 1)}, [](auto& v) { return cross_entropy(v[0], 1); });
    const auto l = cross_entropy(Var::constant(Mat(1, 2, 0.0)), 0);
    EXPECT_NEAR(l.value()(0, 0), std::log(2.0), 1e-15);
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
    Var a = Var::leaf(randm(2, 2, 1), true);
    const Var b = Var::constant(randm(2, 2, 2));
    backward(reduce(matmul(a, b), 3));
    const Mat g1 = a.grad();
    backward(reduce(matmul(a, b), 3));
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(a.grad().values()[i], 2 * g1.values()[i], 1e-12);
}
