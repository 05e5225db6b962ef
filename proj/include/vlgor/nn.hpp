// Differentiable-computation core: dense layers with hand-written
// forward/backward passes, losses, Adam, and the cosine learning-rate
// schedule. Templated on the scalar so gradient checks run in double while
// training runs in float. Networks are hand-wired from these pieces.
#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vlgor/rng.hpp"

namespace vlgor::nn {

// Batch convention: one row per batch item, features flattened row-major.
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Non-owning handle to one parameter tensor and its gradient buffer; the
// registry order is the checkpoint and optimizer order, so it must be
// stable for the lifetime of the network.
template <typename S>
struct ParamView {
    std::string name;
    S* value = nullptr;
    S* grad = nullptr;
    std::vector<int> shape;
    std::size_t size = 0;
};

template <typename S>
void zero_grads(std::vector<ParamView<S>>& params) {
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.size; ++i) p.grad[i] = S(0);
    }
}

namespace detail {
inline std::string shape_str(long rows, long cols) {
    std::ostringstream out;
    out << "[" << rows << "x" << cols << "]";
    return out.str();
}
inline void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
class Linear {
  public:
    Linear(int in, int out, Rng& rng) : in_(in), out_(out) {
        W_.resize(out, in);
        b_ = Vector<S>::Zero(out);
        const double limit = std::sqrt(6.0 / in);  // He-uniform
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) W_(r, c) = static_cast<S>(rng.uniform(-limit, limit));
        gW_ = Matrix<S>::Zero(out, in);
        gb_ = Vector<S>::Zero(out);
    }

    Matrix<S> forward(const Matrix<S>& x) {
        detail::require(x.cols() == in_, "linear: input " + detail::shape_str(x.rows(), x.cols()) +
                                             " vs weight " + detail::shape_str(out_, in_));
        x_ = x;
        Matrix<S> y = x * W_.transpose();
        y.rowwise() += b_.transpose();
        return y;
    }

    Matrix<S> backward(const Matrix<S>& gy) {
        detail::require(gy.cols() == out_ && gy.rows() == x_.rows(),
                        "linear backward: grad " + detail::shape_str(gy.rows(), gy.cols()) +
                            " vs cached input " + detail::shape_str(x_.rows(), x_.cols()));
        gW_.noalias() += gy.transpose() * x_;
        gb_.noalias() += gy.colwise().sum().transpose();
        return gy * W_;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        out.push_back({prefix + ".weight", W_.data(), gW_.data(), {out_, in_},
                       static_cast<std::size_t>(out_) * in_});
        out.push_back({prefix + ".bias", b_.data(), gb_.data(), {out_},
                       static_cast<std::size_t>(out_)});
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

  private:
    int in_, out_;
    Matrix<S> W_, gW_;
    Vector<S> b_, gb_;
    Matrix<S> x_;
};

template <typename S>
class ReLU {
  public:
    Matrix<S> forward(const Matrix<S>& x) {
        mask_ = (x.array() > S(0)).template cast<S>().matrix();
        return x.cwiseProduct(mask_);
    }
    Matrix<S> backward(const Matrix<S>& gy) {
        detail::require(gy.rows() == mask_.rows() && gy.cols() == mask_.cols(),
                        "relu backward: grad " + detail::shape_str(gy.rows(), gy.cols()) +
                            " vs activation " + detail::shape_str(mask_.rows(), mask_.cols()));
        return gy.cwiseProduct(mask_);
    }

  private:
    Matrix<S> mask_;
};

// Valid-padding 2-D convolution over rows holding CHW-flattened images,
// implemented as im2col + GEMM. Spatial dims are passed at forward time.
template <typename S>
class Conv2d {
  public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride) {
        const int fan_in = in_ch * kernel * kernel;
        W_.resize(out_ch, fan_in);
        const double limit = std::sqrt(6.0 / fan_in);
        for (int r = 0; r < out_ch; ++r)
            for (int c = 0; c < fan_in; ++c) W_(r, c) = static_cast<S>(rng.uniform(-limit, limit));
        b_ = Vector<S>::Zero(out_ch);
        gW_ = Matrix<S>::Zero(out_ch, fan_in);
        gb_ = Vector<S>::Zero(out_ch);
    }

    // x: [batch, in_ch*h*w] -> [batch, out_ch*h_out*w_out]
    Matrix<S> forward(const Matrix<S>& x, int h, int w) {
        detail::require(x.cols() == static_cast<long>(in_ch_) * h * w,
                        "conv2d: input " + detail::shape_str(x.rows(), x.cols()) + " vs expected cols " +
                            std::to_string(static_cast<long>(in_ch_) * h * w));
        detail::require(h >= kernel_ && w >= kernel_, "conv2d: image smaller than kernel");
        h_ = h;
        w_ = w;
        h_out_ = (h - kernel_) / stride_ + 1;
        w_out_ = (w - kernel_) / stride_ + 1;
        const int patches = h_out_ * w_out_;
        const int patch_len = in_ch_ * kernel_ * kernel_;
        const long batch = x.rows();
        cols_.assign(static_cast<std::size_t>(batch), Matrix<S>(patch_len, patches));
        Matrix<S> y(batch, static_cast<long>(out_ch_) * patches);
        for (long item = 0; item < batch; ++item) {
            Matrix<S>& cols = cols_[static_cast<std::size_t>(item)];
            const S* row = x.row(item).data();
            for (int c = 0; c < in_ch_; ++c) {
                for (int ky = 0; ky < kernel_; ++ky) {
                    for (int kx = 0; kx < kernel_; ++kx) {
                        const int pr = (c * kernel_ + ky) * kernel_ + kx;
                        for (int oy = 0; oy < h_out_; ++oy) {
                            const int iy = oy * stride_ + ky;
                            for (int ox = 0; ox < w_out_; ++ox) {
                                const int ix = ox * stride_ + kx;
                                cols(pr, oy * w_out_ + ox) = row[(c * h_ + iy) * w_ + ix];
                            }
                        }
                    }
                }
            }
            Matrix<S> out = W_ * cols;          // [out_ch, patches]
            out.colwise() += b_;
            Eigen::Map<Vector<S>> flat(y.row(item).data(), y.cols());
            flat = Eigen::Map<const Vector<S>>(out.data(), out.size());
        }
        return y;
    }

    Matrix<S> backward(const Matrix<S>& gy) {
        const int patches = h_out_ * w_out_;
        detail::require(gy.cols() == static_cast<long>(out_ch_) * patches &&
                            gy.rows() == static_cast<long>(cols_.size()),
                        "conv2d backward: grad " + detail::shape_str(gy.rows(), gy.cols()) +
                            " vs output cols " + std::to_string(static_cast<long>(out_ch_) * patches));
        Matrix<S> gx = Matrix<S>::Zero(gy.rows(), static_cast<long>(in_ch_) * h_ * w_);
        for (long item = 0; item < gy.rows(); ++item) {
            Eigen::Map<const Matrix<S>> gout(gy.row(item).data(), out_ch_, patches);
            const Matrix<S>& cols = cols_[static_cast<std::size_t>(item)];
            gW_.noalias() += gout * cols.transpose();
            gb_.noalias() += gout.rowwise().sum();
            Matrix<S> gcols = W_.transpose() * gout;  // [patch_len, patches]
            S* row = gx.row(item).data();
            for (int c = 0; c < in_ch_; ++c) {
                for (int ky = 0; ky < kernel_; ++ky) {
                    for (int kx = 0; kx < kernel_; ++kx) {
                        const int pr = (c * kernel_ + ky) * kernel_ + kx;
                        for (int oy = 0; oy < h_out_; ++oy) {
                            const int iy = oy * stride_ + ky;
                            for (int ox = 0; ox < w_out_; ++ox) {
                                const int ix = ox * stride_ + kx;
                                row[(c * h_ + iy) * w_ + ix] += gcols(pr, oy * w_out_ + ox);
                            }
                        }
                    }
                }
            }
        }
        return gx;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        const int patch_len = in_ch_ * kernel_ * kernel_;
        out.push_back({prefix + ".weight", W_.data(), gW_.data(), {out_ch_, in_ch_, kernel_, kernel_},
                       static_cast<std::size_t>(out_ch_) * patch_len});
        out.push_back({prefix + ".bias", b_.data(), gb_.data(), {out_ch_},
                       static_cast<std::size_t>(out_ch_)});
    }

    int out_spatial(int in) const { return (in - kernel_) / stride_ + 1; }
    int out_channels() const { return out_ch_; }

  private:
    int in_ch_, out_ch_, kernel_, stride_;
    int h_ = 0, w_ = 0, h_out_ = 0, w_out_ = 0;
    Matrix<S> W_, gW_;
    Vector<S> b_, gb_;
    std::vector<Matrix<S>> cols_;
};

// Token-id lookup table; rows of the output are the concatenated embedding
// vectors of one instruction. Ids are not differentiated through.
template <typename S>
class Embedding {
  public:
    Embedding(int vocab, int dim, Rng& rng) : vocab_(vocab), dim_(dim) {
        table_.resize(vocab, dim);
        for (int r = 0; r < vocab; ++r)
            for (int c = 0; c < dim; ++c) table_(r, c) = static_cast<S>(0.02 * rng.normal());
        gtable_ = Matrix<S>::Zero(vocab, dim);
    }

    // ids: batch * len entries, row-major. -> [batch, len*dim]
    Matrix<S> forward(const std::vector<int>& ids, int batch, int len) {
        detail::require(static_cast<long>(ids.size()) == static_cast<long>(batch) * len,
                        "embedding: ids size " + std::to_string(ids.size()) + " vs batch*len " +
                            std::to_string(static_cast<long>(batch) * len));
        ids_ = ids;
        len_ = len;
        Matrix<S> y(batch, static_cast<long>(len) * dim_);
        for (int item = 0; item < batch; ++item) {
            for (int t = 0; t < len; ++t) {
                const int id = ids[static_cast<std::size_t>(item) * len + t];
                detail::require(id >= 0 && id < vocab_, "embedding: token id " + std::to_string(id) +
                                                            " out of vocab " + std::to_string(vocab_));
                y.block(item, static_cast<long>(t) * dim_, 1, dim_) = table_.row(id);
            }
        }
        return y;
    }

    void backward(const Matrix<S>& gy) {
        const long batch = gy.rows();
        detail::require(gy.cols() == static_cast<long>(len_) * dim_ &&
                            static_cast<std::size_t>(batch) * len_ == ids_.size(),
                        "embedding backward: grad " + detail::shape_str(gy.rows(), gy.cols()));
        for (long item = 0; item < batch; ++item) {
            for (int t = 0; t < len_; ++t) {
                const int id = ids_[static_cast<std::size_t>(item) * len_ + t];
                gtable_.row(id) += gy.block(item, static_cast<long>(t) * dim_, 1, dim_);
            }
        }
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        out.push_back({prefix + ".table", table_.data(), gtable_.data(), {vocab_, dim_},
                       static_cast<std::size_t>(vocab_) * dim_});
    }

  private:
    int vocab_, dim_;
    int len_ = 0;
    Matrix<S> table_, gtable_;
    std::vector<int> ids_;
};

// Mean over the token axis: [batch, len*dim] -> [batch, dim].
template <typename S>
class MeanPool {
  public:
    Matrix<S> forward(const Matrix<S>& x, int len, int dim) {
        detail::require(x.cols() == static_cast<long>(len) * dim,
                        "meanpool: input " + detail::shape_str(x.rows(), x.cols()) + " vs len*dim " +
                            std::to_string(static_cast<long>(len) * dim));
        len_ = len;
        dim_ = dim;
        Matrix<S> y = Matrix<S>::Zero(x.rows(), dim);
        for (int t = 0; t < len; ++t) y += x.block(0, static_cast<long>(t) * dim, x.rows(), dim);
        return y / static_cast<S>(len);
    }
    Matrix<S> backward(const Matrix<S>& gy) {
        detail::require(gy.cols() == dim_, "meanpool backward: grad " +
                                               detail::shape_str(gy.rows(), gy.cols()) + " vs dim " +
                                               std::to_string(dim_));
        Matrix<S> gx(gy.rows(), static_cast<long>(len_) * dim_);
        const Matrix<S> spread = gy / static_cast<S>(len_);
        for (int t = 0; t < len_; ++t)
            gx.block(0, static_cast<long>(t) * dim_, gy.rows(), dim_) = spread;
        return gx;
    }

  private:
    int len_ = 0, dim_ = 0;
};

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

template <typename S>
Vector<S> logsumexp_rows(const Matrix<S>& x) {
    Vector<S> out(x.rows());
    for (long r = 0; r < x.rows(); ++r) {
        const S m = x.row(r).maxCoeff();
        out(r) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    return out;
}

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& x) {
    Matrix<S> out(x.rows(), x.cols());
    for (long r = 0; r < x.rows(); ++r) {
        const S m = x.row(r).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - m).exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    return out;
}

// Mean over the batch of logsumexp(logits_r) - logits_r[label_r]; grad is
// d(mean loss)/d(logits) when requested.
template <typename S>
S softmax_cross_entropy(const Matrix<S>& logits, const std::vector<int>& labels,
                        Matrix<S>* grad = nullptr) {
    detail::require(static_cast<long>(labels.size()) == logits.rows(),
                    "cross entropy: " + std::to_string(labels.size()) + " labels vs " +
                        std::to_string(logits.rows()) + " rows");
    for (int label : labels)
        detail::require(label >= 0 && label < logits.cols(),
                        "cross entropy: label " + std::to_string(label) + " out of range " +
                            std::to_string(logits.cols()));
    const Vector<S> lse = logsumexp_rows(logits);
    S loss = S(0);
    for (long r = 0; r < logits.rows(); ++r)
        loss += lse(r) - logits(r, labels[static_cast<std::size_t>(r)]);
    loss /= static_cast<S>(logits.rows());
    if (grad) {
        *grad = softmax_rows(logits);
        for (long r = 0; r < logits.rows(); ++r)
            (*grad)(r, labels[static_cast<std::size_t>(r)]) -= S(1);
        *grad /= static_cast<S>(logits.rows());
    }
    return loss;
}

// Mean over all entries of (pred - target)^2; grad w.r.t. pred on request.
template <typename S>
S mse_loss(const Matrix<S>& pred, const Matrix<S>& target, Matrix<S>* grad = nullptr) {
    detail::require(pred.rows() == target.rows() && pred.cols() == target.cols(),
                    "mse: " + detail::shape_str(pred.rows(), pred.cols()) + " vs " +
                        detail::shape_str(target.rows(), target.cols()));
    const Matrix<S> diff = pred - target;
    const S n = static_cast<S>(diff.size());
    if (grad) *grad = diff * (S(2) / n);
    return diff.squaredNorm() / n;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

template <typename S>
class Adam {
  public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamView<S>>& params, double lr) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(Vector<S>::Zero(static_cast<long>(p.size)));
                v_.emplace_back(Vector<S>::Zero(static_cast<long>(p.size)));
            }
        }
        detail::require(m_.size() == params.size(), "adam: parameter registry changed size");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            detail::require(static_cast<std::size_t>(m_[i].size()) == p.size,
                            "adam: parameter '" + p.name + "' changed size");
            Eigen::Map<Vector<S>> value(p.value, static_cast<long>(p.size));
            Eigen::Map<const Vector<S>> grad(p.grad, static_cast<long>(p.size));
            m_[i] = static_cast<S>(beta1_) * m_[i] + static_cast<S>(1.0 - beta1_) * grad;
            v_[i] = static_cast<S>(beta2_) * v_[i] +
                    static_cast<S>(1.0 - beta2_) * grad.cwiseProduct(grad);
            const Vector<S> mhat = m_[i] / static_cast<S>(bc1);
            const Vector<S> vhat = v_[i] / static_cast<S>(bc2);
            value.array() -=
                static_cast<S>(lr) * mhat.array() / (vhat.array().sqrt() + static_cast<S>(eps_));
        }
    }

    long step_count() const { return t_; }

  private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Vector<S>> m_, v_;
};

inline double cosine_lr(int epoch, int total_epochs, double lr_max = 3e-4, double lr_min = 1e-6) {
    detail::require(total_epochs > 0 && epoch >= 0 && epoch <= total_epochs,
                    "cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(total_epochs) + "]");
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / total_epochs));
}

}  // namespace vlgor::nn
