#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "maefuse/params.hpp"

namespace maefuse {

template <typename T>
struct AdamWConfigT {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.01);
};

using AdamWConfig = AdamWConfigT<float>;

// AdamW with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * p )
// Frozen parameters are never touched. A non-finite gradient anywhere aborts
// the step before any parameter is modified.
template <typename T>
class AdamWT {
public:
    explicit AdamWT(AdamWConfigT<T> cfg = {}) : cfg_(cfg) {}

    const AdamWConfigT<T>& config() const { return cfg_; }
    AdamWConfigT<T>& config() { return cfg_; }
    long step_count() const { return step_; }

    void step(ParamSetT<T>& params) {
        // validate first: no partial updates
        for (auto& p : params.items()) {
            if (p.frozen) continue;
            if (!p.tensor.has_grad()) {
                throw ContractError("adamw: missing gradient for parameter " + p.name);
            }
            for (T g : p.tensor.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericError("adamw: non-finite gradient in parameter " + p.name);
                }
            }
        }
        ++step_;
        const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg_.beta1), step_));
        const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg_.beta2), step_));
        for (auto& p : params.items()) {
            if (p.frozen) continue;
            auto& st = slot(p.name, p.tensor.numel());
            const auto& g = p.tensor.grad();
            auto& w = p.tensor.data();
            for (size_t i = 0; i < w.size(); ++i) {
                st.m[i] = cfg_.beta1 * st.m[i] + (T(1) - cfg_.beta1) * g[i];
                st.v[i] = cfg_.beta2 * st.v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
                const T mhat = st.m[i] / bc1;
                const T vhat = st.v[i] / bc2;
                w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
            }
        }
    }

    struct Moments {
        std::vector<T> m, v;
    };

    // Serialization access (checkpointing); keyed by parameter name.
    std::map<std::string, Moments>& moments() { return state_; }
    const std::map<std::string, Moments>& moments() const { return state_; }
    void set_step_count(long s) { step_ = s; }

private:
    Moments& slot(const std::string& name, long numel) {
        auto& st = state_[name];
        if (st.m.empty()) {
            st.m.assign(static_cast<size_t>(numel), T(0));
            st.v.assign(static_cast<size_t>(numel), T(0));
        }
        return st;
    }

    AdamWConfigT<T> cfg_;
    std::map<std::string, Moments> state_;
    long step_ = 0;
};

using AdamW = AdamWT<float>;

} // namespace maefuse
