#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

enum class Dtype { F64, F32, F16, BF16 };

inline const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::F64:  return "F64";
        case Dtype::F32:  return "F32";
        case Dtype::F16:  return "F16";
        case Dtype::BF16: return "BF16";
    }
    throw Error("unreachable dtype");
}

inline Dtype parse_dtype(const std::string& s) {
    if (s == "F64") return Dtype::F64;
    if (s == "F32") return Dtype::F32;
    if (s == "F16") return Dtype::F16;
    if (s == "BF16") return Dtype::BF16;
    throw UnsupportedElementType("unsupported dtype: " + s);
}

inline size_t dtype_width(Dtype d) {
    switch (d) {
        case Dtype::F64:  return 8;
        case Dtype::F32:  return 4;
        case Dtype::F16:  return 2;
        case Dtype::BF16: return 2;
    }
    throw Error("unreachable dtype");
}

namespace detail {

inline double f16_to_f64(std::uint16_t h) {
    std::uint32_t sign = (h >> 15) & 1, exp = (h >> 10) & 0x1f, frac = h & 0x3ff;
    double v;
    if (exp == 0) v = std::ldexp(static_cast<double>(frac), -24);
    else if (exp == 0x1f) v = frac ? std::nan("") : INFINITY;
    else v = std::ldexp(1.0 + frac / 1024.0, static_cast<int>(exp) - 15);
    return sign ? -v : v;
}

inline std::uint16_t f64_to_f16(double v) {
    // via float with round-to-nearest-even on the mantissa
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    std::uint32_t sign = (bits >> 16) & 0x8000u;
    std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127 + 15;
    std::uint32_t frac = bits & 0x7fffffu;
    if (((bits >> 23) & 0xff) == 0xff) return static_cast<std::uint16_t>(sign | 0x7c00u | (frac ? 0x200u : 0));
    if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u); // overflow to inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign);
        frac |= 0x800000u;
        int shift = 14 - exp;
        std::uint32_t base = frac >> shift;
        std::uint32_t rem = frac & ((1u << shift) - 1);
        std::uint32_t half = 1u << (shift - 1);
        if (rem > half || (rem == half && (base & 1u))) ++base;
        return static_cast<std::uint16_t>(sign | base);
    }
    std::uint32_t base = frac >> 13;
    std::uint32_t rem = frac & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (base & 1u))) {
        ++base;
        if (base == 0x400u) { base = 0; ++exp; if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u); }
    }
    return static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(exp) << 10) | base);
}

inline double bf16_to_f64(std::uint16_t h) {
    std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
}

inline std::uint16_t f64_to_bf16(double v) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    std::uint32_t base = bits >> 16;
    std::uint32_t rem = bits & 0xffffu;
    if (rem > 0x8000u || (rem == 0x8000u && (base & 1u))) ++base;
    return static_cast<std::uint16_t>(base);
}

} // namespace detail

struct Tensor {
    Dtype dtype = Dtype::F32;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> data; // raw little-endian bytes

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    void check() const {
        for (auto d : shape)
            if (d < 0) throw ShapeMismatch("negative dimension");
        if (data.size() != static_cast<size_t>(numel()) * dtype_width(dtype))
            throw ShapeMismatch("tensor data length does not match shape");
    }

    std::vector<double> to_f64() const {
        check();
        std::vector<double> out(static_cast<size_t>(numel()));
        const std::uint8_t* p = data.data();
        for (size_t i = 0; i < out.size(); ++i) {
            switch (dtype) {
                case Dtype::F64: { double v; std::memcpy(&v, p + 8 * i, 8); out[i] = v; break; }
                case Dtype::F32: { float v; std::memcpy(&v, p + 4 * i, 4); out[i] = v; break; }
                case Dtype::F16: { std::uint16_t v; std::memcpy(&v, p + 2 * i, 2); out[i] = detail::f16_to_f64(v); break; }
                case Dtype::BF16: { std::uint16_t v; std::memcpy(&v, p + 2 * i, 2); out[i] = detail::bf16_to_f64(v); break; }
            }
        }
        return out;
    }

    static Tensor from_f64(Dtype dtype, std::vector<std::int64_t> shape,
                           const std::vector<double>& values) {
        Tensor t;
        t.dtype = dtype;
        t.shape = std::move(shape);
        t.data.resize(values.size() * dtype_width(dtype));
        std::uint8_t* p = t.data.data();
        for (size_t i = 0; i < values.size(); ++i) {
            switch (dtype) {
                case Dtype::F64: { double v = values[i]; std::memcpy(p + 8 * i, &v, 8); break; }
                case Dtype::F32: { float v = static_cast<float>(values[i]); std::memcpy(p + 4 * i, &v, 4); break; }
                case Dtype::F16: { std::uint16_t v = detail::f64_to_f16(values[i]); std::memcpy(p + 2 * i, &v, 2); break; }
                case Dtype::BF16: { std::uint16_t v = detail::f64_to_bf16(values[i]); std::memcpy(p + 2 * i, &v, 2); break; }
            }
        }
        t.check();
        return t;
    }

    bool operator==(const Tensor&) const = default;
};

struct AdapterMeta {
    std::map<std::string, std::string> entries; // e.g. r, alpha, target_modules

    bool operator==(const AdapterMeta&) const = default;
};

struct AdapterWeights {
    std::map<std::string, Tensor> tensors; // lexicographic by construction
    AdapterMeta meta;

    void check() const {
        for (const auto& [name, t] : tensors) {
            try {
                t.check();
            } catch (const ShapeMismatch& e) {
                throw ShapeMismatch(name + ": " + e.what());
            }
        }
    }

    bool operator==(const AdapterWeights&) const = default;
};

// safetensors layout: u64le header length, JSON header, raw tensor bytes
inline std::string serialize_adapter(const AdapterWeights& weights) {
    weights.check();
    nlohmann::json header = nlohmann::json::object();
    if (!weights.meta.entries.empty()) {
        nlohmann::json md = nlohmann::json::object();
        for (const auto& [k, v] : weights.meta.entries) md[k] = v;
        header["__metadata__"] = md;
    }
    std::string body;
    for (const auto& [name, t] : weights.tensors) {
        std::size_t begin = body.size();
        body.append(reinterpret_cast<const char*>(t.data.data()), t.data.size());
        header[name] = {{"dtype", dtype_name(t.dtype)},
                        {"shape", t.shape},
                        {"data_offsets", {begin, body.size()}}};
    }
    std::string header_text = header.dump();
    std::string out;
    std::uint64_t n = header_text.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
    out += header_text;
    out += body;
    return out;
}

inline AdapterWeights deserialize_adapter(const std::string& bytes) {
    if (bytes.size() < 8) throw TruncatedData("file shorter than header length field");
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i)
        n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    if (bytes.size() < 8 + n) throw TruncatedData("declared header exceeds file size");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, n));
    } catch (const nlohmann::json::parse_error& e) {
        throw BadHeader(std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) throw BadHeader("header is not an object");
    AdapterWeights weights;
    const char* data = bytes.data() + 8 + n;
    std::size_t data_size = bytes.size() - 8 - n;
    for (auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            for (auto& [k, v] : entry.items())
                weights.meta.entries[k] = v.get<std::string>();
            continue;
        }
        if (!entry.contains("dtype") || !entry.contains("shape") || !entry.contains("data_offsets"))
            throw BadHeader("tensor entry " + name + " lacks dtype/shape/data_offsets");
        Tensor t;
        t.dtype = parse_dtype(entry["dtype"].get<std::string>());
        t.shape = entry["shape"].get<std::vector<std::int64_t>>();
        auto offs = entry["data_offsets"].get<std::vector<std::uint64_t>>();
        if (offs.size() != 2 || offs[1] < offs[0]) throw BadHeader("bad data_offsets for " + name);
        if (offs[1] > data_size) throw TruncatedData("data_offsets of " + name + " beyond file size");
        if (offs[1] - offs[0] != static_cast<std::uint64_t>(t.numel()) * dtype_width(t.dtype))
            throw BadHeader("data length of " + name + " does not match shape");
        t.data.assign(data + offs[0], data + offs[1]);
        weights.tensors.emplace(name, std::move(t));
    }
    return weights;
}

inline AdapterWeights read_adapter(const std::filesystem::path& file) {
    return deserialize_adapter(read_file(file));
}

inline void write_adapter(const AdapterWeights& weights, const std::filesystem::path& file) {
    write_file(file, serialize_adapter(weights));
}

struct MergeSpec {
    std::vector<double> coefficients = {0.5, 0.5};
    bool intersect = false; // merge only shared names instead of failing
};

struct MergeResult {
    AdapterWeights merged;
    std::vector<std::string> dropped; // names skipped in intersect mode
};

inline MergeResult merge(const std::vector<AdapterWeights>& adapters, const MergeSpec& spec) {
    if (adapters.empty()) throw KeyMismatch("no adapters to merge");
    if (spec.coefficients.size() != adapters.size())
        throw ConfigError("coefficient count does not match adapter count");
    for (double c : spec.coefficients)
        if (!std::isfinite(c)) throw ConfigError("non-finite merge coefficient");
    for (const auto& a : adapters) a.check();

    // name set: intersection or strict equality
    std::vector<std::string> names;
    std::vector<std::string> dropped;
    for (const auto& [name, _] : adapters.front().tensors) {
        bool everywhere = true;
        for (const auto& a : adapters)
            if (!a.tensors.count(name)) { everywhere = false; break; }
        if (everywhere) names.push_back(name);
        else dropped.push_back(name);
    }
    if (!spec.intersect) {
        std::vector<std::string> missing = dropped;
        for (size_t i = 1; i < adapters.size(); ++i)
            for (const auto& [name, _] : adapters[i].tensors)
                if (!adapters.front().tensors.count(name)) missing.push_back(name);
        if (!missing.empty())
            throw KeyMismatch("adapters disagree on tensor names: " + join(missing, ", "));
    } else {
        for (size_t i = 1; i < adapters.size(); ++i)
            for (const auto& [name, _] : adapters[i].tensors)
                if (!adapters.front().tensors.count(name)) dropped.push_back(name);
    }

    for (size_t i = 1; i < adapters.size(); ++i)
        if (!(adapters[i].meta == adapters.front().meta))
            throw MetaMismatch("adapter metadata differs");

    MergeResult result;
    result.dropped = std::move(dropped);
    result.merged.meta = adapters.front().meta;
    for (const auto& name : names) {
        const Tensor& first = adapters.front().tensors.at(name);
        std::vector<double> acc(static_cast<size_t>(first.numel()), 0.0);
        for (size_t i = 0; i < adapters.size(); ++i) {
            const Tensor& t = adapters[i].tensors.at(name);
            if (t.shape != first.shape)
                throw ShapeMismatch("shape mismatch for tensor " + name);
            if (t.dtype != first.dtype)
                throw MetaMismatch("dtype mismatch for tensor " + name);
            auto vals = t.to_f64();
            for (size_t e = 0; e < acc.size(); ++e) acc[e] += spec.coefficients[i] * vals[e];
        }
        result.merged.tensors.emplace(name, Tensor::from_f64(first.dtype, first.shape, acc));
    }
    return result;
}

} // namespace ctnli
