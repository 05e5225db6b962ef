// Central-finite-difference gradient checks for the nn layers and losses,
// shared by the unit tests and the acceptance gate. Everything runs in
// double precision with h = 1e-5; failures are counted, not thrown, so the
// caller can report totals.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vlgor/nn.hpp"
#include "vlgor/rng.hpp"

namespace gradcheck {

inline constexpr double kH = 1e-5;
inline constexpr double kRelTol = 1e-4;

struct Tally {
    long compared = 0;
    long failed = 0;
    std::string first_failure;

    void merge(const Tally& o) {
        compared += o.compared;
        failed += o.failed;
        if (first_failure.empty()) first_failure = o.first_failure;
    }
};

inline bool close(double analytic, double fd) {
    const double denom = std::max({1e-6, std::abs(analytic), std::abs(fd)});
    return std::abs(analytic - fd) / denom <= kRelTol;
}

// Compares analytic[i] against (loss(x_i + h) - loss(x_i - h)) / 2h for every
// entry of `values`, mutating them in place and restoring afterwards.
inline void check_entries(double* values, const double* analytic, std::size_t n,
                          const std::function<double()>& loss, const std::string& label,
                          Tally& tally) {
    for (std::size_t i = 0; i < n; ++i) {
        const double keep = values[i];
        values[i] = keep + kH;
        const double up = loss();
        values[i] = keep - kH;
        const double down = loss();
        values[i] = keep;
        const double fd = (up - down) / (2.0 * kH);
        ++tally.compared;
        if (!close(analytic[i], fd)) {
            ++tally.failed;
            if (tally.first_failure.empty())
                tally.first_failure = label + "[" + std::to_string(i) + "]: analytic " +
                                      std::to_string(analytic[i]) + " vs fd " + std::to_string(fd);
        }
    }
}

// Loss used to probe layers: a fixed random projection of the output, so
// every output entry receives a distinct upstream gradient.
inline vlgor::nn::Matrix<double> random_matrix(long rows, long cols, vlgor::Rng& rng,
                                               double scale = 1.0) {
    vlgor::nn::Matrix<double> m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = scale * rng.uniform(-1.0, 1.0);
    return m;
}

inline Tally check_linear(vlgor::Rng& rng) {
    using namespace vlgor;
    const int in = 1 + rng.index(6);
    const int out = 1 + rng.index(6);
    const int batch = 1 + rng.index(4);
    nn::Linear<double> layer(in, out, rng);
    nn::Matrix<double> x = random_matrix(batch, in, rng);
    const nn::Matrix<double> proj = random_matrix(batch, out, rng);
    const auto loss = [&] { return layer.forward(x).cwiseProduct(proj).sum(); };

    loss();
    std::vector<nn::ParamView<double>> params;
    layer.collect("linear", params);
    nn::zero_grads(params);
    const nn::Matrix<double> gx = layer.backward(proj);

    Tally tally;
    check_entries(x.data(), gx.data(), static_cast<std::size_t>(x.size()), loss, "linear.x", tally);
    for (auto& p : params) check_entries(p.value, p.grad, p.size, loss, p.name, tally);
    return tally;
}

inline Tally check_relu(vlgor::Rng& rng) {
    using namespace vlgor;
    const int rows = 1 + rng.index(4);
    const int cols = 1 + rng.index(8);
    nn::ReLU<double> layer;
    // Keep inputs away from the kink at 0 where FD is ill-defined.
    nn::Matrix<double> x(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
            const double v = rng.uniform(0.1, 1.0);
            x(r, c) = rng.uniform() < 0.5 ? v : -v;
        }
    const nn::Matrix<double> proj = random_matrix(rows, cols, rng);
    const auto loss = [&] { return layer.forward(x).cwiseProduct(proj).sum(); };

    loss();
    const nn::Matrix<double> gx = layer.backward(proj);
    Tally tally;
    check_entries(x.data(), gx.data(), static_cast<std::size_t>(x.size()), loss, "relu.x", tally);
    return tally;
}

inline Tally check_conv(vlgor::Rng& rng) {
    using namespace vlgor;
    const int in_ch = 1 + rng.index(3);
    const int out_ch = 1 + rng.index(3);
    const int kernel = 2 + rng.index(2);
    const int stride = 1 + rng.index(2);
    const int h = kernel + rng.index(4);
    const int w = kernel + rng.index(4);
    const int batch = 1 + rng.index(3);
    nn::Conv2d<double> layer(in_ch, out_ch, kernel, stride, rng);
    nn::Matrix<double> x = random_matrix(batch, static_cast<long>(in_ch) * h * w, rng);
    const long out_cols =
        static_cast<long>(out_ch) * layer.out_spatial(h) * layer.out_spatial(w);
    const nn::Matrix<double> proj = random_matrix(batch, out_cols, rng);
    const auto loss = [&] { return layer.forward(x, h, w).cwiseProduct(proj).sum(); };

    loss();
    std::vector<nn::ParamView<double>> params;
    layer.collect("conv", params);
    nn::zero_grads(params);
    const nn::Matrix<double> gx = layer.backward(proj);

    Tally tally;
    check_entries(x.data(), gx.data(), static_cast<std::size_t>(x.size()), loss, "conv.x", tally);
    for (auto& p : params) check_entries(p.value, p.grad, p.size, loss, p.name, tally);
    return tally;
}

inline Tally check_embedding(vlgor::Rng& rng) {
    using namespace vlgor;
    const int vocab = 3 + rng.index(6);
    const int dim = 2 + rng.index(3);
    const int batch = 1 + rng.index(3);
    const int len = 1 + rng.index(4);
    nn::Embedding<double> layer(vocab, dim, rng);
    std::vector<int> ids(static_cast<std::size_t>(batch) * len);
    for (int& id : ids) id = rng.index(vocab);
    const nn::Matrix<double> proj = random_matrix(batch, static_cast<long>(len) * dim, rng);
    const auto loss = [&] { return layer.forward(ids, batch, len).cwiseProduct(proj).sum(); };

    loss();
    std::vector<nn::ParamView<double>> params;
    layer.collect("embed", params);
    nn::zero_grads(params);
    layer.backward(proj);

    Tally tally;
    for (auto& p : params) check_entries(p.value, p.grad, p.size, loss, p.name, tally);
    return tally;
}

inline Tally check_meanpool(vlgor::Rng& rng) {
    using namespace vlgor;
    const int len = 1 + rng.index(4);
    const int dim = 2 + rng.index(4);
    const int batch = 1 + rng.index(3);
    nn::MeanPool<double> layer;
    nn::Matrix<double> x = random_matrix(batch, static_cast<long>(len) * dim, rng);
    const nn::Matrix<double> proj = random_matrix(batch, dim, rng);
    const auto loss = [&] { return layer.forward(x, len, dim).cwiseProduct(proj).sum(); };

    loss();
    const nn::Matrix<double> gx = layer.backward(proj);
    Tally tally;
    check_entries(x.data(), gx.data(), static_cast<std::size_t>(x.size()), loss, "meanpool.x",
                  tally);
    return tally;
}

inline Tally check_cross_entropy(vlgor::Rng& rng) {
    using namespace vlgor;
    const int batch = 1 + rng.index(4);
    const int classes = 2 + rng.index(8);
    nn::Matrix<double> logits = random_matrix(batch, classes, rng, 2.0);
    std::vector<int> labels(batch);
    for (int& l : labels) l = rng.index(classes);
    const auto loss = [&] { return nn::softmax_cross_entropy<double>(logits, labels); };

    nn::Matrix<double> grad;
    nn::softmax_cross_entropy<double>(logits, labels, &grad);
    Tally tally;
    check_entries(logits.data(), grad.data(), static_cast<std::size_t>(logits.size()), loss,
                  "xent.logits", tally);
    return tally;
}

inline Tally check_mse(vlgor::Rng& rng) {
    using namespace vlgor;
    const int rows = 1 + rng.index(4);
    const int cols = 1 + rng.index(6);
    nn::Matrix<double> pred = random_matrix(rows, cols, rng);
    const nn::Matrix<double> target = random_matrix(rows, cols, rng);
    const auto loss = [&] { return nn::mse_loss<double>(pred, target); };

    nn::Matrix<double> grad;
    nn::mse_loss<double>(pred, target, &grad);
    Tally tally;
    check_entries(pred.data(), grad.data(), static_cast<std::size_t>(pred.size()), loss,
                  "mse.pred", tally);
    return tally;
}

inline Tally check_logsumexp(vlgor::Rng& rng) {
    using namespace vlgor;
    const int rows = 1 + rng.index(3);
    const int cols = 2 + rng.index(8);
    nn::Matrix<double> x = random_matrix(rows, cols, rng, 3.0);
    const auto loss = [&] { return nn::logsumexp_rows(x).sum(); };

    const nn::Matrix<double> grad = nn::softmax_rows(x);  // d(sum lse)/dx
    Tally tally;
    check_entries(x.data(), grad.data(), static_cast<std::size_t>(x.size()), loss, "lse.x", tally);
    return tally;
}

// Runs `configs` random shapes of every layer/loss kind; returns the merged
// tally (compared entries and failures across all kinds).
inline Tally run_full_suite(int configs, std::uint64_t seed) {
    vlgor::Rng rng(seed);
    Tally total;
    for (int i = 0; i < configs; ++i) {
        total.merge(check_linear(rng));
        total.merge(check_relu(rng));
        total.merge(check_conv(rng));
        total.merge(check_embedding(rng));
        total.merge(check_meanpool(rng));
        total.merge(check_cross_entropy(rng));
        total.merge(check_mse(rng));
        total.merge(check_logsumexp(rng));
    }
    return total;
}

}  // namespace gradcheck
