#pragma once

// Named-tensor container, stored as text.
//
//   autofas-checkpoint 1
//   meta <key> <value>              (zero or more; value runs to end of line)
//   tensor <name> <rank> <dims...>
//   <values as hex floats, space separated, one line>
//   ...
//   end
//
// Hex floats make the round trip bit-exact.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "autofas/error.hpp"
#include "autofas/tensor.hpp"

namespace autofas {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t); }

    const Tensor& get(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return t;
        }
        throw LookupError("checkpoint has no tensor '" + name + "'");
    }

    const std::string& meta_value(const std::string& key) const {
        const auto it = meta.find(key);
        if (it == meta.end()) throw LookupError("checkpoint has no meta key '" + key + "'");
        return it->second;
    }
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out << "autofas-checkpoint " << kCheckpointVersion << '\n';
    for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
    char buf[64];
    for (const auto& [name, t] : ckpt.tensors) {
        out << "tensor " << name << ' ' << t.rank();
        for (auto d : t.shape()) out << ' ' << d;
        out << '\n';
        const auto vals = t.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), vals[i], std::chars_format::hex);
            if (i) out << ' ';
            out.write(buf, ptr - buf);
        }
        out << '\n';
    }
    out << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
    Checkpoint ckpt;
    std::string line;
    std::size_t lineno = 0;
    auto next = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++lineno;
        return true;
    };
    if (!next()) throw ParseError(1, "empty checkpoint");
    {
        std::istringstream head(line);
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != "autofas-checkpoint") throw ParseError(lineno, "not a checkpoint");
        if (version != kCheckpointVersion) throw ParseError(lineno, "unsupported checkpoint version " + std::to_string(version));
    }
    while (next()) {
        if (line == "end") return ckpt;
        std::istringstream rec(line);
        std::string kind;
        rec >> kind;
        if (kind == "meta") {
            std::string key;
            rec >> key;
            std::string value;
            std::getline(rec >> std::ws, value);
            ckpt.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            std::size_t rank = 0;
            if (!(rec >> name >> rank)) throw ParseError(lineno, "bad tensor record");
            Shape shape(rank);
            for (auto& d : shape) {
                if (!(rec >> d)) throw ParseError(lineno, "bad tensor shape");
            }
            if (!next()) throw ParseError(lineno, "missing values for tensor '" + name + "'");
            std::vector<double> values;
            values.reserve(shape_size(shape));
            const char* p = line.data();
            const char* end = p + line.size();
            while (p < end) {
                while (p < end && *p == ' ') ++p;
                if (p == end) break;
                double v = 0.0;
                const auto [ptr, ec] = std::from_chars(p, end, v, std::chars_format::hex);
                if (ec != std::errc()) throw ParseError(lineno, "bad value in tensor '" + name + "'");
                values.push_back(v);
                p = ptr;
            }
            if (values.size() != shape_size(shape)) throw ParseError(lineno, "value count does not match shape of '" + name + "'");
            ckpt.add(name, Tensor(std::move(shape), std::move(values)));
        } else {
            throw ParseError(lineno, "unknown record '" + kind + "'");
        }
    }
    throw ParseError(lineno, "checkpoint truncated (no end marker)");
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParameterError("cannot write " + path);
    write_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open " + path);
    return read_checkpoint(in);
}

inline std::string checkpoint_string(const Checkpoint& ckpt) {
    std::ostringstream out;
    write_checkpoint(out, ckpt);
    return out.str();
}

}  // namespace autofas
