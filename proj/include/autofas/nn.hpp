#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "autofas/tensor.hpp"

namespace autofas {

using Rng = std::mt19937_64;

/// Fully connected layer, weight stored in x out.
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in_width() const { return weight.shape()[0]; }
    std::size_t out_width() const { return weight.shape()[1]; }
    std::size_t parameter_count() const { return weight.size() + bias.size(); }

    Tensor operator()(const Tensor& x) const { return add_row_bias(matmul(x, weight), bias); }

    Linear clone() const { return {weight.clone(), bias.clone()}; }

    /// He-style uniform init, bias zero.
    static Linear init(std::size_t in, std::size_t out, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        std::vector<double> w(in * out);
        for (auto& v : w) v = dist(rng);
        return {Tensor::matrix(in, out, std::move(w), true), Tensor::zeros({out}, true)};
    }
};

inline Tensor uniform_tensor(Shape shape, double limit, Rng& rng, bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline void set_trainable(std::vector<Tensor> params, bool on) {
    for (auto& p : params) p.set_requires_grad(on);
}

/// Adagrad: theta -= lr * g / (sqrt(accum) + eps), accum += g^2 first.
class Adagrad {
   public:
    explicit Adagrad(std::vector<Tensor> params, double lr = 0.01, double initial_accumulator = 0.1,
                     double eps = 1e-10)
        : params_(std::move(params)), lr_(lr), eps_(eps) {
        for (const auto& p : params_) accum_.emplace_back(p.size(), initial_accumulator);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (std::size_t j = 0; j < params_.size(); ++j) {
            auto& p = params_[j];
            if (!p.has_grad()) continue;
            auto values = p.values_mut();
            const auto grad = p.grad();
            auto& acc = accum_[j];
            for (std::size_t i = 0; i < values.size(); ++i) {
                acc[i] += grad[i] * grad[i];
                values[i] -= lr_ * grad[i] / (std::sqrt(acc[i]) + eps_);
            }
        }
    }

    double learning_rate() const { return lr_; }

   private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> accum_;
    double lr_;
    double eps_;
};

}  // namespace autofas
