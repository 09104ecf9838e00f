#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "maefuse/tensor.hpp"

namespace maefuse {

// A named, trainable (or frozen) tensor. Frozen parameters take no part in
// graph building or optimizer updates; their data stays bit-identical for
// the lifetime of a run.
template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> tensor;
    bool frozen = false;
};

using Parameter = ParameterT<float>;

// Owning collection of a model's parameters, iterated in lexicographic name
// order everywhere determinism matters (checkpoints, optimizer state).
template <typename T>
class ParamSetT {
public:
    TensorT<T> add(std::string name, TensorT<T> t, bool frozen = false) {
        for (const auto& p : items_) {
            if (p.name == name) throw ContractError("duplicate parameter name: " + name);
        }
        t.set_requires_grad(!frozen);
        items_.push_back(ParameterT<T>{std::move(name), t, frozen});
        sorted_ = false;
        return t;
    }

    std::vector<ParameterT<T>>& items() {
        sort_if_needed();
        return items_;
    }
    const std::vector<ParameterT<T>>& items() const {
        const_cast<ParamSetT*>(this)->sort_if_needed();
        return items_;
    }

    ParameterT<T>& find(const std::string& name) {
        for (auto& p : items_) {
            if (p.name == name) return p;
        }
        throw ContractError("unknown parameter: " + name);
    }

    void freeze_all() {
        for (auto& p : items_) {
            p.frozen = true;
            p.tensor.set_requires_grad(false);
        }
    }

    void zero_grad() {
        for (auto& p : items_) {
            if (!p.frozen) p.tensor.zero_grad();
        }
    }

    long trainable_count() const {
        long n = 0;
        for (const auto& p : items_) {
            if (!p.frozen) n += p.tensor.numel();
        }
        return n;
    }

    long total_count() const {
        long n = 0;
        for (const auto& p : items_) n += p.tensor.numel();
        return n;
    }

    // Moves every parameter of `other` into this set under a dotted prefix.
    void adopt(const std::string& prefix, ParamSetT&& other) {
        for (auto& p : other.items_) {
            p.name = prefix + "." + p.name;
            items_.push_back(std::move(p));
        }
        other.items_.clear();
        sorted_ = false;
    }

private:
    void sort_if_needed() {
        if (!sorted_) {
            std::sort(items_.begin(), items_.end(),
                      [](const ParameterT<T>& a, const ParameterT<T>& b) { return a.name < b.name; });
            sorted_ = true;
        }
    }

    std::vector<ParameterT<T>> items_;
    bool sorted_ = true;
};

using ParamSet = ParamSetT<float>;

} // namespace maefuse
