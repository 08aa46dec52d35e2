#pragma once

// Over-parameterized pre-ranking network: L Mixops mixing candidate MLP
// widths (and the zero operator) by softmax strengths, plus derivation of a
// concrete architecture and the standalone pre-ranking model it describes.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "autofas/checkpoint.hpp"
#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/nn.hpp"
#include "autofas/search_space.hpp"
#include "autofas/teacher.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

/// Representation at one reachable width: its probability mass and the
/// mass-weighted mixture of everything that arrives at that width.
struct PathState {
    std::size_t width = 0;
    Tensor mass;   // scalar
    Tensor value;  // batch x width
};

class Supernet {
   public:
    Supernet() = default;

    static Supernet init(const SupernetConfig& config, Rng& rng) {
        config.validate();
        Supernet net;
        net.config_ = config;
        const auto states = width_states(config);
        net.blocks_.resize(config.num_mixops);
        for (std::size_t i = 0; i < config.num_mixops; ++i)
            for (auto s : states[i])
                for (std::size_t k = 0; k < config.unit_choices.size(); ++k)
                    net.blocks_[i].emplace(std::make_pair(s, k), Linear::init(s, config.unit_choices[k], rng));
        for (auto t : states.back()) net.heads_.emplace(t, Linear::init(t, 1, rng));
        return net;
    }

    const SupernetConfig& config() const { return config_; }

    /// MLP operator k of Mixop i applied to inputs of width `source`.
    const Linear& block(std::size_t i, std::size_t source, std::size_t k) const {
        const auto it = blocks_.at(i).find({source, k});
        if (it == blocks_[i].end()) {
            throw DimensionError("Mixop " + std::to_string(i) + " has no operator " + std::to_string(k) +
                                 " for input width " + std::to_string(source));
        }
        return it->second;
    }

    const Linear& head(std::size_t width) const {
        const auto it = heads_.find(width);
        if (it == heads_.end()) throw DimensionError("no head for width " + std::to_string(width));
        return it->second;
    }

    /// One Mixop. `strengths` are this Mixop's operator strengths. A
    /// contribution (source s, operator k) arrives at width w_k (or at s for
    /// the zero operator) with mass m_s p_k; each target is the
    /// mass-normalized sum of its contributions:
    ///   O_t = sum_{s,k -> t} (m_s p_k / m_t) MLP_s^k(O_s),   m_t = sum m_s p_k.
    /// With distinct widths and no zero operator this is O_k = sum_j m_j MLP_j^k(O_j).
    std::vector<PathState> mixop_forward(std::size_t i, const std::vector<PathState>& prev, const Tensor& strengths) const {
        if (i >= config_.num_mixops) throw DimensionError("Mixop index out of range");
        if (strengths.size() != config_.num_ops()) throw DimensionError("strength row length does not match operator count");
        std::vector<Tensor> pk;
        for (std::size_t k = 0; k < config_.num_ops(); ++k) pk.push_back(pick(strengths, k));

        const auto n_mlp = config_.unit_choices.size();
        const auto targets = width_states(config_)[i + 1];
        std::vector<PathState> out;
        for (auto t : targets) {
            std::vector<Tensor> weights, values;
            for (const auto& src : prev) {
                if (src.value.rank() != 2 || src.value.shape()[1] != src.width) {
                    throw DimensionError("path value " + shape_str(src.value.shape()) + " does not have width " +
                                         std::to_string(src.width));
                }
                for (std::size_t k = 0; k < n_mlp; ++k) {
                    if (config_.unit_choices[k] != t) continue;
                    weights.push_back(mul(src.mass, pk[k]));
                    values.push_back(relu(block(i, src.width, k)(src.value)));
                }
                if (config_.include_zero && src.width == t) {
                    weights.push_back(mul(src.mass, pk[n_mlp]));
                    values.push_back(src.value);
                }
            }
            if (weights.empty()) continue;
            const Tensor mass = weights.size() == 1 ? weights[0] : sum(stack(weights));
            Tensor value = weights.size() == 1 ? values[0] : scale_by(div(weights[0], mass), values[0]);
            for (std::size_t c = 1; c < weights.size(); ++c) value = add(value, scale_by(div(weights[c], mass), values[c]));
            out.push_back({t, mass, value});
        }
        return out;
    }

    /// Pre-ranking logits for a (masked) embedding batch.
    Tensor forward(const Tensor& x, const ArchParams& arch) const {
        check_arch(arch, config_);
        if (x.rank() != 2 || x.shape()[1] != config_.input_width) {
            throw DimensionError("supernet input " + shape_str(x.shape()) + " does not have width " +
                                 std::to_string(config_.input_width));
        }
        std::vector<PathState> states{{config_.input_width, Tensor::scalar(1.0), x}};
        for (std::size_t i = 0; i < config_.num_mixops; ++i) states = mixop_forward(i, states, arch.strengths(i));
        Tensor logits;
        for (const auto& s : states) {
            const Tensor term = scale_by(s.mass, head(s.width)(s.value));
            logits = logits.defined() ? add(logits, term) : term;
        }
        return reshape(logits, {x.shape()[0]});
    }

    /// Layers along one operator assignment (zero operators dropped) and the matching head, sharing weights.
    std::pair<std::vector<Linear>, Linear> extract_path(const std::vector<std::size_t>& ops) const {
        if (ops.size() != config_.num_mixops) throw DimensionError("path has wrong number of Mixops");
        std::vector<Linear> layers;
        std::size_t width = config_.input_width;
        for (std::size_t i = 0; i < ops.size(); ++i) {
            if (config_.is_zero_op(ops[i])) continue;
            layers.push_back(block(i, width, ops[i]));
            width = config_.unit_choices.at(ops[i]);
        }
        return {layers, head(width)};
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& mixop : blocks_)
            for (const auto& [key, layer] : mixop) {
                out.push_back(layer.weight);
                out.push_back(layer.bias);
            }
        for (const auto& [w, h] : heads_) {
            out.push_back(h.weight);
            out.push_back(h.bias);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.size();
        return n;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint ckpt;
        ckpt.meta["kind"] = "supernet";
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            for (const auto& [key, layer] : blocks_[i]) {
                const auto base = "block." + std::to_string(i) + "." + std::to_string(key.first) + "." + std::to_string(key.second);
                ckpt.add(base + ".weight", layer.weight);
                ckpt.add(base + ".bias", layer.bias);
            }
        for (const auto& [w, h] : heads_) {
            ckpt.add("head." + std::to_string(w) + ".weight", h.weight);
            ckpt.add("head." + std::to_string(w) + ".bias", h.bias);
        }
        return ckpt;
    }

   private:
    SupernetConfig config_;
    std::vector<std::map<std::pair<std::size_t, std::size_t>, Linear>> blocks_;
    std::map<std::size_t, Linear> heads_;
};

// ---------------------------------------------------------------------------
// Derivation

struct DerivedArchitecture {
    std::vector<std::size_t> features;       // ascending ids
    std::vector<std::size_t> ops;            // operator index per Mixop
    std::vector<std::size_t> hidden_widths;  // widths of the non-zero operators, in order
    std::vector<std::string> op_names;       // per Mixop, e.g. "mlp32" or "zero"

    bool operator==(const DerivedArchitecture&) const = default;
};

/// Indices of the n largest values; ties go to the lower index. Result ascending.
inline std::vector<std::size_t> top_n_indices(const std::vector<double>& values, std::size_t n) {
    if (n > values.size()) throw ParameterError("top_n " + std::to_string(n) + " exceeds " + std::to_string(values.size()));
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    order.resize(n);
    std::sort(order.begin(), order.end());
    return order;
}

/// First index of the maximum.
inline std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline DerivedArchitecture make_architecture(std::vector<std::size_t> features, std::vector<std::size_t> ops,
                                             const SupernetConfig& config) {
    DerivedArchitecture d;
    d.features = std::move(features);
    std::sort(d.features.begin(), d.features.end());
    d.ops = std::move(ops);
    for (auto k : d.ops) {
        if (k >= config.num_ops()) throw DimensionError("operator index out of range");
        d.op_names.push_back(op_name(config, k));
        if (!config.is_zero_op(k)) d.hidden_widths.push_back(config.unit_choices[k]);
    }
    return d;
}

/// Keeps the top_n features by theta and the strongest operator per Mixop.
inline DerivedArchitecture derive_architecture(const ArchParams& arch, const MaskParams& mask, std::size_t top_n,
                                               const SupernetConfig& config) {
    check_arch(arch, config);
    std::vector<std::size_t> ops;
    for (std::size_t i = 0; i < arch.num_mixops(); ++i) ops.push_back(argmax(arch.strength_values(i)));
    return make_architecture(top_n_indices(mask.theta_values(), top_n), std::move(ops), config);
}

inline constexpr int kArchitectureVersion = 1;

inline void write_architecture(std::ostream& out, const DerivedArchitecture& d) {
    out << "autofas-architecture " << kArchitectureVersion << '\n';
    out << "features";
    for (auto f : d.features) out << ' ' << f;
    out << '\n';
    for (std::size_t i = 0; i < d.ops.size(); ++i) out << "mixop " << i << ' ' << d.ops[i] << ' ' << d.op_names[i] << '\n';
    out << "widths";
    for (auto w : d.hidden_widths) out << ' ' << w;
    out << '\n';
}

inline DerivedArchitecture read_architecture(std::istream& in) {
    DerivedArchitecture d;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream rec(line);
        std::string kind;
        rec >> kind;
        if (!header) {
            int version = 0;
            if (kind != "autofas-architecture" || !(rec >> version) || version != kArchitectureVersion) {
                throw ParseError(lineno, "not an architecture file (or unsupported version)");
            }
            header = true;
        } else if (kind == "features") {
            std::size_t f;
            while (rec >> f) d.features.push_back(f);
        } else if (kind == "mixop") {
            std::size_t i = 0, k = 0;
            std::string name;
            if (!(rec >> i >> k >> name) || i != d.ops.size()) throw ParseError(lineno, "bad mixop record");
            d.ops.push_back(k);
            d.op_names.push_back(name);
        } else if (kind == "widths") {
            std::size_t w;
            while (rec >> w) d.hidden_widths.push_back(w);
        } else {
            throw ParseError(lineno, "unknown record '" + kind + "'");
        }
    }
    if (!header) throw ParseError(0, "empty architecture file");
    return d;
}

inline void save_architecture(const std::string& path, const DerivedArchitecture& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot write " + path);
    write_architecture(out, d);
}

inline DerivedArchitecture load_architecture(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open " + path);
    return read_architecture(in);
}

// ---------------------------------------------------------------------------
// Standalone pre-ranking model

/// Plain feed-forward student over a subset of features: own embeddings,
/// Linear+ReLU layers, linear head.
class PreRankingModel {
   public:
    PreRankingModel() = default;

    static PreRankingModel init(const std::vector<std::size_t>& hidden_widths, const std::vector<std::size_t>& features,
                                const std::vector<FeatureSpec>& all_features, Rng& rng) {
        PreRankingModel m;
        m.features_ = features;
        std::size_t width = 0;
        for (auto id : features) {
            const auto& f = all_features.at(id);
            m.embeddings_.push_back(uniform_tensor({f.vocab_size, f.embedding_dim}, 0.1, rng));
            width += f.embedding_dim;
        }
        for (auto w : hidden_widths) {
            m.layers_.push_back(Linear::init(width, w, rng));
            width = w;
        }
        m.head_ = Linear::init(width, 1, rng);
        return m;
    }

    /// Fresh weights for a derived architecture.
    static PreRankingModel instantiate(const DerivedArchitecture& d, const std::vector<FeatureSpec>& all_features, Rng& rng) {
        return init(d.hidden_widths, d.features, all_features, rng);
    }

    /// Wraps existing tensors (shared, not copied).
    static PreRankingModel from_parts(std::vector<std::size_t> features, std::vector<Tensor> embeddings,
                                      std::vector<Linear> layers, Linear head) {
        PreRankingModel m;
        m.features_ = std::move(features);
        m.embeddings_ = std::move(embeddings);
        m.layers_ = std::move(layers);
        m.head_ = std::move(head);
        return m;
    }

    const std::vector<std::size_t>& features() const { return features_; }
    const std::vector<Linear>& layers() const { return layers_; }
    std::size_t input_width() const {
        std::size_t w = 0;
        for (const auto& e : embeddings_) w += e.shape()[1];
        return w;
    }

    Tensor embed(const Batch& batch) const { return gather_concat(embeddings_, batch.ids, batch.num_features, features_); }

    Tensor forward_embedded(const Tensor& x) const {
        Tensor h = x;
        for (const auto& layer : layers_) h = relu(layer(h));
        return reshape(head_(h), {x.shape()[0]});
    }

    Tensor forward(const Batch& batch) const { return forward_embedded(embed(batch)); }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out(embeddings_.begin(), embeddings_.end());
        for (const auto& l : layers_) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        out.push_back(head_.weight);
        out.push_back(head_.bias);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.size();
        return n;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint ckpt;
        ckpt.meta["kind"] = "prerank";
        std::ostringstream ids;
        for (std::size_t j = 0; j < features_.size(); ++j) ids << (j ? "," : "") << features_[j];
        ckpt.meta["features"] = ids.str();
        ckpt.meta["layers"] = std::to_string(layers_.size());
        for (std::size_t j = 0; j < embeddings_.size(); ++j) ckpt.add("embedding." + std::to_string(j), embeddings_[j]);
        for (std::size_t j = 0; j < layers_.size(); ++j) {
            ckpt.add("layer." + std::to_string(j) + ".weight", layers_[j].weight);
            ckpt.add("layer." + std::to_string(j) + ".bias", layers_[j].bias);
        }
        ckpt.add("head.weight", head_.weight);
        ckpt.add("head.bias", head_.bias);
        return ckpt;
    }

    static PreRankingModel from_checkpoint(const Checkpoint& ckpt) {
        if (ckpt.meta_value("kind") != "prerank") throw ParameterError("checkpoint is not a pre-ranking model");
        PreRankingModel m;
        std::istringstream ids(ckpt.meta_value("features"));
        std::string tok;
        while (std::getline(ids, tok, ',')) {
            if (!tok.empty()) m.features_.push_back(std::stoul(tok));
        }
        for (std::size_t j = 0; j < m.features_.size(); ++j) m.embeddings_.push_back(ckpt.get("embedding." + std::to_string(j)).clone());
        const auto layers = std::stoul(ckpt.meta_value("layers"));
        for (std::size_t j = 0; j < layers; ++j) {
            m.layers_.push_back({ckpt.get("layer." + std::to_string(j) + ".weight").clone(),
                                 ckpt.get("layer." + std::to_string(j) + ".bias").clone()});
        }
        m.head_ = {ckpt.get("head.weight").clone(), ckpt.get("head.bias").clone()};
        return m;
    }

   private:
    std::vector<std::size_t> features_;
    std::vector<Tensor> embeddings_;
    std::vector<Linear> layers_;
    Linear head_;
};

}  // namespace autofas
