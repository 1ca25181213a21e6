#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "driftdiag/checkpoint.hpp"
#include "driftdiag/nn.hpp"

using namespace driftdiag;

namespace {

// Relative error with a floor so near-zero gradients are compared on an
// absolute scale instead of blowing up the ratio.
double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

Mat<double> identity_matrix(std::size_t n, double scale = 1.0) {
    Mat<double> m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
}

MlpNetwork<double> single_layer(Mat<double> w, Activation act) {
    MlpNetwork<double> net;
    DenseLayer<double> l;
    l.bias.assign(w.rows, 0.0);
    l.weights = std::move(w);
    l.activation = act;
    net.layers.push_back(std::move(l));
    return net;
}

// Independent oracle: per-sample -log softmax probability, summed naively.
double direct_nll(const Mat<double>& logits, const std::vector<int>& targets) {
    double total = 0.0;
    for (std::size_t b = 0; b < logits.rows; ++b) {
        double denom = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) denom += std::exp(logits(b, c));
        const double p = std::exp(logits(b, static_cast<std::size_t>(targets[b]))) / denom;
        total += -std::log(p);
    }
    return total / static_cast<double>(logits.rows);
}

double ce_loss_of(const MlpNetwork<double>& net, const Mat<double>& x, const std::vector<int>& y) {
    auto out = forward_nograd(net, x);
    return softmax_cross_entropy(out, std::span<const int>(y)).loss;
}

// Central finite differences over every parameter of `net`.
NetGradients<double> numeric_ce_gradient(MlpNetwork<double> net, const Mat<double>& x,
                                         const std::vector<int>& y, double h = 1e-5) {
    auto grads = NetGradients<double>::zeros_like(net);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (std::size_t i = 0; i < net.layers[l].weights.data.size(); ++i) {
            double& p = net.layers[l].weights.data[i];
            const double orig = p;
            p = orig + h;
            const double up = ce_loss_of(net, x, y);
            p = orig - h;
            const double down = ce_loss_of(net, x, y);
            p = orig;
            grads.dweights[l].data[i] = (up - down) / (2.0 * h);
        }
        for (std::size_t i = 0; i < net.layers[l].bias.size(); ++i) {
            double& p = net.layers[l].bias[i];
            const double orig = p;
            p = orig + h;
            const double up = ce_loss_of(net, x, y);
            p = orig - h;
            const double down = ce_loss_of(net, x, y);
            p = orig;
            grads.dbias[l][i] = (up - down) / (2.0 * h);
        }
    }
    return grads;
}

}  // namespace

TEST_CASE("forward: identity single layer passes input through") {
    auto net = single_layer(identity_matrix(3), Activation::Identity);
    Mat<double> x(1, 3);
    x(0, 0) = 1.0;
    x(0, 1) = 2.0;
    x(0, 2) = 3.0;
    auto res = forward(net, x);
    CHECK(res.output(0, 0) == 1.0);
    CHECK(res.output(0, 1) == 2.0);
    CHECK(res.output(0, 2) == 3.0);
}

TEST_CASE("forward: ReLU clips negatives") {
    auto net = single_layer(identity_matrix(2), Activation::ReLU);
    Mat<double> x(1, 2);
    x(0, 0) = -1.0;
    x(0, 1) = 2.0;
    auto res = forward(net, x);
    CHECK(res.output(0, 0) == 0.0);
    CHECK(res.output(0, 1) == 2.0);
}

TEST_CASE("forward: two identity layers compose") {
    MlpNetwork<double> net = single_layer(identity_matrix(2), Activation::Identity);
    net.layers.push_back(single_layer(identity_matrix(2, 2.0), Activation::Identity).layers[0]);
    Mat<double> x(1, 2);
    x(0, 0) = 3.0;
    x(0, 1) = 4.0;
    auto res = forward(net, x);
    CHECK(res.output(0, 0) == 6.0);
    CHECK(res.output(0, 1) == 8.0);
}

TEST_CASE("forward: shape and numeric errors") {
    auto net = single_layer(identity_matrix(2), Activation::Identity);
    Mat<double> wrong(1, 3, 1.0);
    CHECK_THROWS_AS(forward(net, wrong), ShapeError);
    Mat<double> bad(1, 2, 1.0);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, bad), NumericError);
}

TEST_CASE("forward is pure") {
    Rng rng(7);
    auto net = make_mlp<double>({4, 8, 3}, rng);
    Mat<double> x(5, 4);
    Rng data_rng(9);
    for (auto& v : x.data) v = data_rng.gaussian();
    auto a = forward(net, x);
    auto b = forward(net, x);
    REQUIRE(a.output.data == b.output.data);
}

TEST_CASE("softmax_cross_entropy: uniform logits give ln C") {
    Mat<double> logits(1, 3, 0.0);
    std::vector<int> t{1};
    auto res = softmax_cross_entropy(logits, std::span<const int>(t));
    CHECK(res.loss == Catch::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy: saturated logits do not overflow") {
    Mat<double> logits(1, 2);
    logits(0, 0) = 1000.0;
    logits(0, 1) = 0.0;
    std::vector<int> t{0};
    auto res = softmax_cross_entropy(logits, std::span<const int>(t));
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss < 1e-10);
    CHECK(res.loss >= 0.0);
}

TEST_CASE("softmax_cross_entropy matches the direct formula oracle") {
    Mat<double> logits(2, 2);
    logits(0, 0) = 1.0;
    logits(0, 1) = 2.0;
    logits(1, 0) = 3.0;
    logits(1, 1) = 0.0;
    std::vector<int> t{1, 0};
    auto res = softmax_cross_entropy(logits, std::span<const int>(t));
    CHECK(res.loss == Catch::Approx(direct_nll(logits, t)).epsilon(1e-12));

    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        Mat<double> l(4, 6);
        for (auto& v : l.data) v = rng.uniform(-5.0, 5.0);
        std::vector<int> targets;
        for (int b = 0; b < 4; ++b) targets.push_back(static_cast<int>(rng.index(6)));
        auto r = softmax_cross_entropy(l, std::span<const int>(targets));
        CHECK(r.loss == Catch::Approx(direct_nll(l, targets)).margin(1e-10));
    }
}

TEST_CASE("softmax_cross_entropy: dlogits is (softmax - onehot)/B") {
    Mat<double> logits(2, 3);
    Rng rng(5);
    for (auto& v : logits.data) v = rng.uniform(-2.0, 2.0);
    std::vector<int> t{2, 0};
    auto res = softmax_cross_entropy(logits, std::span<const int>(t));
    auto probs = softmax_rows(logits);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 3; ++c) {
            double expect = probs(b, c) - (static_cast<int>(c) == t[b] ? 1.0 : 0.0);
            expect /= 2.0;
            CHECK(res.dlogits(b, c) == Catch::Approx(expect).margin(1e-14));
        }
    }
}

TEST_CASE("softmax_cross_entropy rejects out-of-range targets") {
    Mat<double> logits(1, 3, 0.0);
    std::vector<int> t{3};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(t)), IndexError);
    std::vector<int> neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(neg)), IndexError);
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
    Rng rng(33);
    for (int rep = 0; rep < 50; ++rep) {
        Mat<float> l(3, 5);
        for (auto& v : l.data) v = static_cast<float>(rng.uniform(-30.0, 30.0));
        auto p = softmax_rows(l);
        for (std::size_t b = 0; b < 3; ++b) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 5; ++c) {
                CHECK(p(b, c) >= 0.0f);
                CHECK(p(b, c) <= 1.0f);
                sum += p(b, c);
            }
            CHECK(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("backward: single identity layer gradients are the linear-layer calculus") {
    Mat<double> w(2, 3);
    double val = 1.0;
    for (auto& v : w.data) v = val++;
    auto net = single_layer(w, Activation::Identity);
    Mat<double> x(1, 3);
    x(0, 0) = 0.5;
    x(0, 1) = -1.5;
    x(0, 2) = 2.0;
    auto fwd = forward(net, x);
    Mat<double> dout(1, 2);
    dout(0, 1) = 1.0;  // e_1
    auto back = backward(net, fwd.tape, dout);
    // dinput = e_1^T W = row 1 of W
    for (std::size_t i = 0; i < 3; ++i) CHECK(back.dinput(0, i) == net.layers[0].weights(1, i));
    // dW = dout^T x
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.grads.dweights[0](1, i) == x(0, i));
        CHECK(back.grads.dweights[0](0, i) == 0.0);
    }
    CHECK(back.grads.dbias[0][1] == 1.0);
    CHECK(back.grads.dbias[0][0] == 0.0);
}

TEST_CASE("backward: dead ReLU zeroes the input gradient") {
    auto net = single_layer(identity_matrix(2), Activation::ReLU);
    Mat<double> x(1, 2);
    x(0, 0) = -3.0;
    x(0, 1) = -0.5;
    auto fwd = forward(net, x);
    Mat<double> dout(1, 2, 1.0);
    auto back = backward(net, fwd.tape, dout);
    CHECK(back.dinput(0, 0) == 0.0);
    CHECK(back.dinput(0, 1) == 0.0);
}

TEST_CASE("backward: mismatched tape is rejected") {
    Rng rng(3);
    auto net = make_mlp<double>({4, 6, 3}, rng);
    auto other = make_mlp<double>({4, 5, 3}, rng);
    Mat<double> x(2, 4, 0.25);
    auto fwd = forward(other, x);
    Mat<double> dout(2, 3, 1.0);
    CHECK_THROWS_AS(backward(net, fwd.tape, dout), ContractError);

    auto good = forward(net, x);
    Mat<double> bad_dout(3, 3, 1.0);
    CHECK_THROWS_AS(backward(net, good.tape, bad_dout), ShapeError);
}

TEST_CASE("backward matches central finite differences on random small nets") {
    Rng rng(101);
    const std::vector<std::vector<std::size_t>> shapes = {
        {3, 7, 4}, {5, 16, 8, 3}, {4, 9, 9, 5}};
    for (const auto& dims : shapes) {
        auto net = make_mlp<double>(dims, rng);
        Mat<double> x(5, dims.front());
        for (auto& v : x.data) v = rng.gaussian();
        std::vector<int> y;
        for (int b = 0; b < 5; ++b) y.push_back(static_cast<int>(rng.index(dims.back())));

        auto fwd = forward(net, x);
        auto ce = softmax_cross_entropy(fwd.output, std::span<const int>(y));
        auto analytic = backward(net, fwd.tape, ce.dlogits);
        auto numeric = numeric_ce_gradient(net, x, y);

        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            for (std::size_t i = 0; i < analytic.grads.dweights[l].data.size(); ++i) {
                REQUIRE(rel_err(analytic.grads.dweights[l].data[i], numeric.dweights[l].data[i]) < 1e-4);
            }
            for (std::size_t i = 0; i < analytic.grads.dbias[l].size(); ++i) {
                REQUIRE(rel_err(analytic.grads.dbias[l][i], numeric.dbias[l][i]) < 1e-4);
            }
        }
    }
}

TEST_CASE("grad_reverse scales and negates") {
    Mat<double> d(1, 2);
    d(0, 0) = 2.0;
    d(0, 1) = -3.0;

    auto zero = grad_reverse(d, 0.0);
    CHECK(zero(0, 0) == 0.0);
    CHECK(zero(0, 1) == 0.0);

    auto neg = grad_reverse(d, 1.0);
    CHECK(neg(0, 0) == -2.0);
    CHECK(neg(0, 1) == 3.0);

    Mat<double> single(1, 1);
    single(0, 0) = 4.0;
    auto half = grad_reverse(single, 0.5);
    CHECK(half(0, 0) == -2.0);

    CHECK_THROWS_AS(grad_reverse(d, 1.5), ContractError);
    CHECK_THROWS_AS(grad_reverse(d, -0.1), ContractError);
}

TEST_CASE("GRL composition: reversed pipeline equals -lambda times unreversed pipeline") {
    Rng rng(55);
    auto net = make_mlp<double>({4, 8, 6}, rng);
    Mat<double> x(3, 4);
    for (auto& v : x.data) v = rng.gaussian();
    auto fwd = forward(net, x);
    Mat<double> dfeat(3, 6);
    for (auto& v : dfeat.data) v = rng.gaussian();

    auto plain = backward(net, fwd.tape, dfeat);

    // Dyadic lambdas make the scaling exact in floating point, so the two
    // pipelines must agree bitwise.
    for (double lambda : {1.0, 0.5, 0.25, 0.125}) {
        auto reversed = backward(net, fwd.tape, grad_reverse(dfeat, lambda));
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            for (std::size_t i = 0; i < plain.grads.dweights[l].data.size(); ++i) {
                REQUIRE(reversed.grads.dweights[l].data[i] == -lambda * plain.grads.dweights[l].data[i]);
            }
            for (std::size_t i = 0; i < plain.grads.dbias[l].size(); ++i) {
                REQUIRE(reversed.grads.dbias[l][i] == -lambda * plain.grads.dbias[l][i]);
            }
        }
    }

    // Arbitrary lambda: the seam transform itself is exact by definition.
    const double lambda = rng.uniform(0.0, 1.0);
    auto seam = grad_reverse(dfeat, lambda);
    for (std::size_t i = 0; i < dfeat.data.size(); ++i) {
        REQUIRE(seam.data[i] == -lambda * dfeat.data[i]);
    }
}

TEST_CASE("adam_step: zero gradient is a fixed point") {
    Rng rng(8);
    auto net = make_mlp<double>({3, 4, 2}, rng);
    auto before = net;
    auto grads = NetGradients<double>::zeros_like(net);
    auto state = AdamState<double>::for_network(net, 0.1);
    adam_step(net, grads, state);
    CHECK(state.step_count == 1);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(net.layers[l].weights.data == before.layers[l].weights.data);
        CHECK(net.layers[l].bias == before.layers[l].bias);
        for (double v : state.first_moment.dweights[l].data) CHECK(v == 0.0);
        for (double v : state.second_moment.dweights[l].data) CHECK(v == 0.0);
    }
}

TEST_CASE("adam_step: hand-computed first and second steps on a scalar") {
    MlpNetwork<double> net = single_layer(Mat<double>(1, 1, 1.0), Activation::Identity);
    net.layers[0].bias[0] = 0.0;
    auto state = AdamState<double>::for_network(net, 0.1);
    auto grads = NetGradients<double>::zeros_like(net);
    grads.dweights[0](0, 0) = 1.0;

    // Hand oracle, bias-corrected Adam at float64.
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0, w = 1.0;
    for (int step = 1; step <= 2; ++step) {
        m = b1 * m + (1 - b1) * 1.0;
        v = b2 * v + (1 - b2) * 1.0;
        const double mhat = m / (1 - std::pow(b1, step));
        const double vhat = v / (1 - std::pow(b2, step));
        w -= lr * mhat / (std::sqrt(vhat) + eps);
    }

    adam_step(net, grads, state);
    const double after_one = net.layers[0].weights(0, 0);
    CHECK(after_one == Catch::Approx(0.9).margin(1e-8));

    adam_step(net, grads, state);
    CHECK(state.step_count == 2);
    CHECK(net.layers[0].weights(0, 0) == Catch::Approx(w).margin(1e-12));
}

TEST_CASE("adam_step: lr=0 leaves parameters unchanged") {
    Rng rng(13);
    auto net = make_mlp<double>({4, 6, 3}, rng);
    auto before = net;
    auto state = AdamState<double>::for_network(net, 0.0);
    auto grads = NetGradients<double>::zeros_like(net);
    for (auto& m : grads.dweights)
        for (auto& v : m.data) v = rng.gaussian();
    adam_step(net, grads, state);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(net.layers[l].weights.data == before.layers[l].weights.data);
    }
}

TEST_CASE("adam_step rejects mismatched gradient shapes") {
    Rng rng(14);
    auto net = make_mlp<double>({4, 6, 3}, rng);
    auto other = make_mlp<double>({4, 5, 3}, rng);
    auto grads = NetGradients<double>::zeros_like(other);
    auto state = AdamState<double>::for_network(net, 0.1);
    CHECK_THROWS_AS(adam_step(net, grads, state), ShapeError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(77);
    auto net = make_mlp<float>({6, 12, 5}, rng);
    const auto path = std::filesystem::temp_directory_path() / "driftdiag_ckpt_test.net";
    save_network(net, path);
    auto loaded = load_network<float>(path);
    REQUIRE(loaded.layers.size() == net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK(loaded.layers[l].activation == net.layers[l].activation);
        CHECK(loaded.layers[l].weights.data == net.layers[l].weights.data);
        CHECK(loaded.layers[l].bias == net.layers[l].bias);
    }
    CHECK(param_hash(loaded) == param_hash(net));
    CHECK_THROWS_AS(load_network<double>(path), ParseError);  // width mismatch
    std::filesystem::remove(path);
}
