#pragma once

// Search-space description shared by the supernet and the latency model.
//
// Mixop i chooses one of N operators: operator k < unit_choices.size() is a
// Linear+ReLU block with unit_choices[k] outputs, and (when include_zero) the
// last operator passes its input through unchanged. Because the zero operator
// keeps the incoming width, the representation after Mixop i can have any
// width in width_states(config)[i + 1].

#include <algorithm>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "autofas/error.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

struct SupernetConfig {
    std::size_t num_mixops = 3;
    std::vector<std::size_t> unit_choices{64, 32, 16};
    bool include_zero = true;
    std::size_t input_width = 0;  // width of the (masked) embedding fed to the first Mixop

    std::size_t num_ops() const { return unit_choices.size() + (include_zero ? 1 : 0); }
    bool is_zero_op(std::size_t k) const { return include_zero && k == unit_choices.size(); }

    void validate() const {
        if (num_mixops == 0) throw ParameterError("supernet: need at least one Mixop");
        if (unit_choices.empty()) throw ParameterError("supernet: need at least one MLP width");
        auto sorted = unit_choices;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ParameterError("supernet: unit choices must be distinct");
        }
        if (sorted.front() == 0) throw ParameterError("supernet: unit choices must be positive");
        if (input_width == 0) throw ParameterError("supernet: input width not set");
    }
};

inline std::string op_name(const SupernetConfig& config, std::size_t k) {
    return config.is_zero_op(k) ? std::string("zero") : "mlp" + std::to_string(config.unit_choices.at(k));
}

/// Reachable widths before Mixop 0 (index 0) through after the last Mixop (index L), each sorted descending.
inline std::vector<std::vector<std::size_t>> width_states(const SupernetConfig& config) {
    std::vector<std::vector<std::size_t>> states{{config.input_width}};
    for (std::size_t i = 0; i < config.num_mixops; ++i) {
        std::vector<std::size_t> next(config.unit_choices.begin(), config.unit_choices.end());
        if (config.include_zero) next.insert(next.end(), states.back().begin(), states.back().end());
        std::sort(next.begin(), next.end(), std::greater<>());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        states.push_back(std::move(next));
    }
    return states;
}

/// Architecture parameters alpha, one softmax row per Mixop.
struct ArchParams {
    Tensor alpha;  // L x N

    static ArchParams init(const SupernetConfig& config) {
        return {Tensor::zeros({config.num_mixops, config.num_ops()}, true)};
    }

    std::size_t num_mixops() const { return alpha.shape()[0]; }
    std::size_t num_ops() const { return alpha.shape()[1]; }

    /// Operator strengths of Mixop i, softmax(alpha_i).
    Tensor strengths(std::size_t i) const { return softmax(row(alpha, i)); }

    std::vector<double> strength_values(std::size_t i) const {
        const auto s = softmax(row(alpha.detach(), i));
        return {s.values().begin(), s.values().end()};
    }
};

inline void check_arch(const ArchParams& arch, const SupernetConfig& config) {
    if (arch.alpha.shape() != Shape{config.num_mixops, config.num_ops()}) {
        throw DimensionError("alpha has shape " + shape_str(arch.alpha.shape()) + ", search space needs " +
                             shape_str({config.num_mixops, config.num_ops()}));
    }
}

}  // namespace autofas
