#pragma once

// Versioned text checkpoint. Every value is written as a C hex-float, so a
// write/read cycle reproduces each double bit for bit.
//
//   hfda-checkpoint 1
//   norm layer
//   dropout 1.999999999999ap-4
//   bn_momentum 1.999999999999ap-4
//   array extractor.layer1.weight 12 256
//   <256 values>            one line per row
//   ...
//   end

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hfda/error.hpp"
#include "hfda/matrix.hpp"
#include "hfda/network.hpp"

namespace hfda {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hex_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    return std::string(buf, res.ptr);
}

inline double parse_hex_double(std::string_view s) {
    double v = 0.0;
    bool negative = false;
    if (!s.empty() && s.front() == '-') {
        negative = true;
        s.remove_prefix(1);
    }
    if (s == "inf" || s == "nan") {
        throw DataError("checkpoint holds a non-finite value");
    }
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError("checkpoint: bad number '" + std::string(s) + "'");
    }
    return negative ? -v : v;
}

// Every array of the model, trainable or not, in a fixed order.
template <class P, class F>
void for_each_checkpoint_array(P& m, F&& f) {
    for (auto& a : m.arrays()) {
        f(a.name, *a.array);
    }
    auto& e = m.extractor;
    f(std::string("extractor.bn1.running_mean"), e.bn1.running_mean);
    f(std::string("extractor.bn1.running_var"), e.bn1.running_var);
    f(std::string("extractor.bn2.running_mean"), e.bn2.running_mean);
    f(std::string("extractor.bn2.running_var"), e.bn2.running_var);
    f(std::string("extractor.input_shift"), e.input_shift);
    f(std::string("extractor.input_scale"), e.input_scale);
}

} // namespace detail

inline void write_checkpoint(std::ostream& out, const ModelParams& m) {
    out << "hfda-checkpoint " << kCheckpointVersion << "\n";
    out << "norm " << to_string(m.extractor.norm) << "\n";
    out << "dropout " << detail::hex_double(m.extractor.dropout) << "\n";
    out << "bn_momentum " << detail::hex_double(m.extractor.bn1.momentum) << "\n";
    detail::for_each_checkpoint_array(m, [&](const std::string& name, const Matrix& a) {
        if (a.empty()) return;
        out << "array " << name << " " << a.rows() << " " << a.cols() << "\n";
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const auto r = a.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) {
                out << (j ? " " : "") << detail::hex_double(r[j]);
            }
            out << "\n";
        }
    });
    out << "end\n";
}

inline std::string checkpoint_string(const ModelParams& m) {
    std::ostringstream os;
    write_checkpoint(os, m);
    return os.str();
}

inline ModelParams read_checkpoint(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "hfda-checkpoint") {
        throw DataError("not a checkpoint file");
    }
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelParams m;
    std::map<std::string, Matrix> arrays;
    double momentum = kBatchNormMomentum;
    std::string key;
    bool ended = false;
    while (in >> key) {
        if (key == "end") {
            ended = true;
            break;
        }
        std::string value;
        if (key == "norm") {
            in >> value;
            m.extractor.norm = parse_norm_kind(value);
        } else if (key == "dropout") {
            in >> value;
            m.extractor.dropout = detail::parse_hex_double(value);
        } else if (key == "bn_momentum") {
            in >> value;
            momentum = detail::parse_hex_double(value);
        } else if (key == "array") {
            std::string name;
            std::size_t rows = 0, cols = 0;
            if (!(in >> name >> rows >> cols)) {
                throw DataError("checkpoint: truncated array header");
            }
            Matrix a(rows, cols);
            for (auto& v : a.values()) {
                if (!(in >> value)) {
                    throw DataError("checkpoint: truncated array '" + name + "'");
                }
                v = detail::parse_hex_double(value);
            }
            arrays[name] = std::move(a);
        } else {
            throw DataError("checkpoint: unknown key '" + key + "'");
        }
    }
    if (!ended) {
        throw DataError("checkpoint: missing 'end' marker");
    }

    // Discriminator layers are numbered consecutively from 0.
    for (std::size_t l = 0;; ++l) {
        const std::string prefix = "discriminator.layer" + std::to_string(l);
        if (!arrays.count(prefix + ".weight")) break;
        m.discriminator.layers.emplace_back();
    }
    auto take = [&](const std::string& name, Matrix& dst) {
        auto it = arrays.find(name);
        if (it != arrays.end()) {
            dst = std::move(it->second);
            arrays.erase(it);
        }
    };
    // arrays() only lists non-empty matrices, so fill by name explicitly.
    auto& e = m.extractor;
    take("extractor.layer1.weight", e.layer1.weight);
    take("extractor.layer1.bias", e.layer1.bias);
    take("extractor.norm1.scale", e.norm1.scale);
    take("extractor.norm1.shift", e.norm1.shift);
    take("extractor.layer2.weight", e.layer2.weight);
    take("extractor.layer2.bias", e.layer2.bias);
    take("extractor.norm2.scale", e.norm2.scale);
    take("extractor.norm2.shift", e.norm2.shift);
    take("classifier.weight", m.classifier.weight);
    take("classifier.bias", m.classifier.bias);
    for (std::size_t l = 0; l < m.discriminator.layers.size(); ++l) {
        const std::string prefix = "discriminator.layer" + std::to_string(l);
        take(prefix + ".weight", m.discriminator.layers[l].weight);
        take(prefix + ".bias", m.discriminator.layers[l].bias);
    }
    take("extractor.bn1.running_mean", e.bn1.running_mean);
    take("extractor.bn1.running_var", e.bn1.running_var);
    take("extractor.bn2.running_mean", e.bn2.running_mean);
    take("extractor.bn2.running_var", e.bn2.running_var);
    take("extractor.input_shift", e.input_shift);
    take("extractor.input_scale", e.input_scale);
    e.bn1.momentum = momentum;
    e.bn2.momentum = momentum;
    if (!arrays.empty()) {
        throw DataError("checkpoint: unknown array '" + arrays.begin()->first + "'");
    }
    if (e.layer1.weight.empty() || e.layer2.weight.empty() || m.classifier.weight.empty() ||
        m.discriminator.layers.empty()) {
        throw DataError("checkpoint: missing model arrays");
    }
    return m;
}

inline void save_checkpoint(const std::string& path, const ModelParams& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write checkpoint '" + path + "'");
    }
    write_checkpoint(out, m);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint '" + path + "'");
    }
    return read_checkpoint(in);
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

inline std::string checkpoint_hash(const ModelParams& m) {
    return hex64(fnv1a64(checkpoint_string(m)));
}

} // namespace hfda
