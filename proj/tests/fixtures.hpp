#pragma once

#include "autofas/search.hpp"

namespace fixture {

inline autofas::DatasetSpec tiny_spec(std::uint64_t seed = 5) {
    autofas::DatasetSpec s;
    s.num_features = 8;
    s.num_informative = 3;
    s.queries = 60;
    s.items_per_query = 50;
    s.num_examples = 3000;
    s.vocab_size = 10;
    s.embedding_dim = 2;
    s.seed = seed;
    return s;
}

inline autofas::SearchConfig tiny_config(std::uint64_t seed = 1) {
    autofas::SearchConfig c;
    c.warmup_steps = 300;
    c.search_steps = 100;
    c.retrain_steps = 200;
    c.top_n_features = 3;
    c.seed = seed;
    c.teacher_tower = {16, 8};
    c.trajectory_every = 25;
    return c;
}

inline autofas::SupernetConfig tiny_supernet() {
    autofas::SupernetConfig c;
    c.num_mixops = 2;
    c.unit_choices = {8, 4};
    return c;
}

/// Supernet config with input width set and its synthetic table.
inline std::pair<autofas::SupernetConfig, autofas::LatencyTable> tiny_space(std::size_t input_width, double scale = 1e-3) {
    auto c = tiny_supernet();
    c.input_width = input_width;
    return {c, autofas::synthetic_latency_table(c, scale)};
}

}  // namespace fixture
