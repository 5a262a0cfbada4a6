#pragma once

#include <string>

#include "bsdn/rng.hpp"
#include "bsdn/tensor.hpp"

namespace bsdn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Raised when a non-finite gradient or loss is encountered during training.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Canonical Adam with bias correction: m/(1-b1^t), v/(1-b2^t),
// p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
class Adam {
public:
    explicit Adam(std::vector<TensorPtr<T>> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->val.size(), T(0));
            v_[i].assign(params_[i]->val.size(), T(0));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            for (size_t j = 0; j < p.val.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                if (!std::isfinite(g))
                    throw TrainingDiverged("non-finite gradient in parameter " + std::to_string(i) + " element " +
                                           std::to_string(j) + " at step " + std::to_string(t_));
                double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * g;
                double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                p.val[j] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    int64_t t() const { return t_; }
    const std::vector<TensorPtr<T>>& params() const { return params_; }

private:
    std::vector<TensorPtr<T>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

// He initialization: N(0, sqrt(2/fan_in)).
template <typename T>
void he_fill(Rng& rng, Tensor<T>& w, int fan_in) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& v : w.val) v = static_cast<T>(rng.normal() * std);
}

// w_avg <- decay * w_avg + (1 - decay) * w, elementwise over parameter lists.
template <typename T>
void ema_update(std::vector<TensorPtr<T>>& avg, const std::vector<TensorPtr<T>>& cur, double decay) {
    for (size_t i = 0; i < avg.size(); ++i) {
        const auto& c = cur[i]->val;
        auto& a = avg[i]->val;
        for (size_t j = 0; j < a.size(); ++j)
            a[j] = static_cast<T>(decay * static_cast<double>(a[j]) + (1.0 - decay) * static_cast<double>(c[j]));
    }
}

}  // namespace bsdn
