#pragma once

// The ranking network ("teacher") with per-feature stochastic masks.

#include <cmath>
#include <cstddef>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "autofas/checkpoint.hpp"
#include "autofas/data.hpp"
#include "autofas/error.hpp"
#include "autofas/nn.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

/// Feature keep-probabilities, theta = sigmoid(phi).
struct MaskParams {
    Tensor phi;

    static MaskParams init(std::size_t num_features, double phi0 = 0.0) {
        return {Tensor::vector(std::vector<double>(num_features, phi0), true)};
    }

    std::size_t size() const { return phi.size(); }
    Tensor theta() const { return sigmoid(phi); }

    std::vector<double> theta_values() const {
        std::vector<double> out(phi.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(phi[i]);
        return out;
    }
};

/// Binary gates, rows x num_features; rows == 1 means one draw for the whole batch.
struct FeatureMask {
    std::size_t rows = 1;
    std::size_t num_features = 0;
    std::vector<double> gates;

    static FeatureMask ones(std::size_t num_features) { return {1, num_features, std::vector<double>(num_features, 1.0)}; }
};

/// g_i = 1 with probability theta_i, independently per feature (and per row).
inline FeatureMask sample_masks(const MaskParams& mask, Rng& rng, std::size_t rows = 1) {
    const auto theta = mask.theta_values();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FeatureMask g{rows, theta.size(), std::vector<double>(rows * theta.size())};
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < theta.size(); ++i) g.gates[r * theta.size() + i] = unit(rng) < theta[i] ? 1.0 : 0.0;
    return g;
}

class TeacherModel {
   public:
    TeacherModel() = default;

    static TeacherModel init(std::vector<FeatureSpec> features, const std::vector<std::size_t>& tower, Rng& rng) {
        TeacherModel t;
        t.features_ = std::move(features);
        t.offsets_ = {0};
        for (const auto& f : t.features_) {
            t.embeddings_.push_back(uniform_tensor({f.vocab_size, f.embedding_dim}, 0.1, rng));
            t.offsets_.push_back(t.offsets_.back() + f.embedding_dim);
        }
        std::size_t width = t.offsets_.back();
        for (auto units : tower) {
            t.tower_.push_back(Linear::init(width, units, rng));
            width = units;
        }
        t.head_ = Linear::init(width, 1, rng);
        return t;
    }

    const std::vector<FeatureSpec>& features() const { return features_; }
    std::size_t num_features() const { return features_.size(); }
    std::size_t input_width() const { return offsets_.back(); }
    const std::vector<std::size_t>& block_offsets() const { return offsets_; }
    const std::vector<Tensor>& embeddings() const { return embeddings_; }
    const std::vector<Linear>& tower() const { return tower_; }
    const Linear& head() const { return head_; }

    /// Concatenated feature embeddings, batch x input_width.
    Tensor embed(const Batch& batch) const {
        if (batch.num_features != features_.size()) {
            throw DimensionError("teacher: batch has " + std::to_string(batch.num_features) + " features, model " +
                                 std::to_string(features_.size()));
        }
        std::vector<std::size_t> columns(features_.size());
        for (std::size_t i = 0; i < columns.size(); ++i) columns[i] = i;
        return gather_concat(embeddings_, batch.ids, batch.num_features, columns);
    }

    Tensor apply_mask(const Tensor& x, const Tensor& theta, const FeatureMask& g) const {
        if (g.num_features != features_.size()) throw DimensionError("teacher: mask length does not match feature count");
        return feature_mask(x, theta, g.gates, g.rows, offsets_);
    }

    /// Tower and head on an (optionally masked) embedding; one logit per row.
    Tensor forward_embedded(const Tensor& x) const {
        Tensor h = x;
        for (const auto& layer : tower_) h = relu(layer(h));
        const auto rows = h.shape()[0];
        return reshape(head_(h), {rows});
    }

    Tensor forward_masked(const Batch& batch, const Tensor& theta, const FeatureMask& g) const {
        return forward_embedded(apply_mask(embed(batch), theta, g));
    }

    Tensor forward_unmasked(const Batch& batch) const { return forward_embedded(embed(batch)); }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out(embeddings_.begin(), embeddings_.end());
        for (const auto& l : tower_) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        out.push_back(head_.weight);
        out.push_back(head_.bias);
        return out;
    }

    void freeze() { set_trainable(parameters(), false); }
    void unfreeze() { set_trainable(parameters(), true); }

    TeacherModel clone() const {
        TeacherModel t;
        t.features_ = features_;
        t.offsets_ = offsets_;
        for (const auto& e : embeddings_) t.embeddings_.push_back(e.clone());
        for (const auto& l : tower_) t.tower_.push_back(l.clone());
        t.head_ = head_.clone();
        return t;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint ckpt;
        ckpt.meta["kind"] = "teacher";
        ckpt.meta["num_features"] = std::to_string(features_.size());
        ckpt.meta["tower_layers"] = std::to_string(tower_.size());
        for (std::size_t i = 0; i < embeddings_.size(); ++i) ckpt.add("embedding." + std::to_string(i), embeddings_[i]);
        for (std::size_t j = 0; j < tower_.size(); ++j) {
            ckpt.add("tower." + std::to_string(j) + ".weight", tower_[j].weight);
            ckpt.add("tower." + std::to_string(j) + ".bias", tower_[j].bias);
        }
        ckpt.add("head.weight", head_.weight);
        ckpt.add("head.bias", head_.bias);
        return ckpt;
    }

    static TeacherModel from_checkpoint(const Checkpoint& ckpt, std::vector<FeatureSpec> features) {
        if (ckpt.meta_value("kind") != "teacher") throw ParameterError("checkpoint is not a teacher model");
        if (std::stoul(ckpt.meta_value("num_features")) != features.size()) {
            throw DimensionError("teacher checkpoint feature count does not match dataset");
        }
        TeacherModel t;
        t.features_ = std::move(features);
        t.offsets_ = {0};
        for (std::size_t i = 0; i < t.features_.size(); ++i) {
            auto e = ckpt.get("embedding." + std::to_string(i)).clone();
            if (e.shape() != Shape{t.features_[i].vocab_size, t.features_[i].embedding_dim}) {
                throw DimensionError("teacher checkpoint embedding " + std::to_string(i) + " has shape " + shape_str(e.shape()));
            }
            t.embeddings_.push_back(e);
            t.offsets_.push_back(t.offsets_.back() + t.features_[i].embedding_dim);
        }
        const auto layers = std::stoul(ckpt.meta_value("tower_layers"));
        for (std::size_t j = 0; j < layers; ++j) {
            t.tower_.push_back({ckpt.get("tower." + std::to_string(j) + ".weight").clone(),
                                ckpt.get("tower." + std::to_string(j) + ".bias").clone()});
        }
        t.head_ = {ckpt.get("head.weight").clone(), ckpt.get("head.bias").clone()};
        return t;
    }

   private:
    std::vector<FeatureSpec> features_;
    std::vector<std::size_t> offsets_;
    std::vector<Tensor> embeddings_;
    std::vector<Linear> tower_;
    Linear head_;
};

/// Logits for many rows, evaluated in chunks. `forward` maps a Batch to logits.
template <typename Forward>
std::vector<double> score_rows(const Dataset& data, std::span<const std::size_t> rows, Forward&& forward,
                               std::size_t chunk = 1024) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t start = 0; start < rows.size(); start += chunk) {
        const auto n = std::min(chunk, rows.size() - start);
        const auto logits = forward(make_batch(data, rows.subspan(start, n)));
        out.insert(out.end(), logits.values().begin(), logits.values().end());
    }
    return out;
}

/// Mean BCE of `forward` over rows (no gradient kept).
template <typename Forward>
double mean_loss(const Dataset& data, std::span<const std::size_t> rows, Forward&& forward) {
    const auto logits = score_rows(data, rows, forward);
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        total += detail::softplus(logits[i]) - data.examples[rows[i]].label * logits[i];
    }
    return total / static_cast<double>(rows.size());
}

struct WarmupStats {
    double initial_loss = 0.0;  // on the first min(rows, 5000) training rows
    double final_loss = 0.0;
};

/// Trains the unmasked teacher with BCE for `steps` Adagrad steps, then freezes it.
inline WarmupStats warmup(TeacherModel& model, const Dataset& data, const std::vector<std::size_t>& train_rows,
                          std::size_t steps, std::size_t batch_size, double lr, std::uint64_t seed) {
    if (steps == 0) throw ParameterError("warmup: steps must be at least 1");
    const std::span<const std::size_t> probe(train_rows.data(), std::min<std::size_t>(train_rows.size(), 5000));
    auto forward = [&](const Batch& b) { return model.forward_unmasked(b); };

    model.unfreeze();
    WarmupStats stats;
    stats.initial_loss = mean_loss(data, probe, forward);
    Adagrad opt(model.parameters(), lr);
    BatchSampler sampler(train_rows, batch_size, seed);
    for (std::size_t step = 0; step < steps; ++step) {
        const auto rows = sampler.next();
        const auto batch = make_batch(data, rows);
        opt.zero_grad();
        const auto loss = binary_cross_entropy(model.forward_unmasked(batch), batch.labels);
        if (!std::isfinite(loss.item())) throw DivergenceError(step, "teacher warmup loss is not finite");
        loss.backward();
        opt.step();
    }
    opt.zero_grad();
    model.freeze();
    stats.final_loss = mean_loss(data, probe, forward);
    return stats;
}

}  // namespace autofas
