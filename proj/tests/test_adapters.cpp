#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "ctnli/adapters.hpp"

using namespace ctnli;
namespace fs = std::filesystem;

namespace {

Tensor f64_tensor(std::vector<std::int64_t> shape, std::vector<double> values) {
    return Tensor::from_f64(Dtype::F64, std::move(shape), values);
}

AdapterWeights simple_adapter(std::vector<double> a_vals, std::vector<double> b_vals) {
    AdapterWeights w;
    w.tensors["lora_A"] = f64_tensor({2}, std::move(a_vals));
    w.tensors["lora_B"] = f64_tensor({2}, std::move(b_vals));
    w.meta.entries = {{"r", "4"}, {"alpha", "8"}};
    return w;
}

} // namespace

TEST_CASE("half-precision conversions") {
    SUBCASE("f16 representable values round-trip exactly") {
        for (double v : {0.0, 1.0, -1.0, 0.5, 1.5, 2.0, -0.25, 65504.0, 0.000060975551605224609375}) {
            CHECK(detail::f16_to_f64(detail::f64_to_f16(v)) == v);
        }
    }
    SUBCASE("f16 rounds to nearest, ties to even") {
        // 1 + 1/2048 lies halfway between 1.0 and the next representable; even wins
        CHECK(detail::f16_to_f64(detail::f64_to_f16(1.0 + 1.0 / 2048.0)) == 1.0);
        CHECK(detail::f16_to_f64(detail::f64_to_f16(1.0 + 3.0 / 2048.0)) == 1.0 + 2.0 / 1024.0);
    }
    SUBCASE("f16 overflow saturates to infinity") {
        CHECK(std::isinf(detail::f16_to_f64(detail::f64_to_f16(1e6))));
        CHECK(detail::f16_to_f64(detail::f64_to_f16(-1e6)) < 0);
    }
    SUBCASE("f16 subnormals survive") {
        double tiny = std::ldexp(3.0, -24); // 3 * 2^-24, subnormal
        CHECK(detail::f16_to_f64(detail::f64_to_f16(tiny)) == tiny);
    }
    SUBCASE("bf16 keeps float32 exponent range") {
        CHECK(detail::bf16_to_f64(detail::f64_to_bf16(1e30)) == doctest::Approx(1e30).epsilon(0.01));
        for (double v : {0.0, 1.0, -2.0, 0.5, 256.0}) {
            CHECK(detail::bf16_to_f64(detail::f64_to_bf16(v)) == v);
        }
    }
}

TEST_CASE("tensor f64 round trip per dtype") {
    std::vector<double> vals = {0.0, 1.0, -1.5, 0.25, 42.0, -0.125};
    for (Dtype d : {Dtype::F64, Dtype::F32, Dtype::F16, Dtype::BF16}) {
        auto t = Tensor::from_f64(d, {2, 3}, vals);
        CHECK(t.to_f64() == vals); // all chosen values are exactly representable
    }
}

TEST_CASE("tensor shape validation") {
    Tensor t = f64_tensor({2, 2}, {1, 2, 3, 4});
    CHECK_NOTHROW(t.check());
    t.shape = {2, 3};
    CHECK_THROWS_AS(t.check(), ShapeMismatch);
    t.shape = {-2, 2};
    CHECK_THROWS_AS(t.check(), ShapeMismatch);
}

TEST_CASE("adapter files round-trip bit-exactly in every dtype") {
    auto dir = fs::temp_directory_path() / "ctnli_adapters";
    fs::create_directories(dir);
    for (Dtype d : {Dtype::F64, Dtype::F32, Dtype::F16, Dtype::BF16}) {
        AdapterWeights w;
        w.tensors["x"] = Tensor::from_f64(d, {3}, {1.0, -0.5, 0.25});
        w.tensors["y"] = Tensor::from_f64(d, {2, 2}, {0.0, 1.0, 2.0, 3.0});
        w.meta.entries = {{"r", "2"}, {"target_modules", "embed"}};
        auto file = dir / (std::string("t_") + dtype_name(d) + ".safetensors");
        write_adapter(w, file);
        auto back = read_adapter(file);
        CHECK(back == w);
        // serialization is canonical: re-writing yields identical bytes
        CHECK(serialize_adapter(back) == serialize_adapter(w));
        CHECK(read_file(file) == serialize_adapter(w));
    }
    fs::remove_all(dir);
}

TEST_CASE("metadata is optional and preserved") {
    AdapterWeights w;
    w.tensors["x"] = f64_tensor({1}, {7.0});
    auto back = deserialize_adapter(serialize_adapter(w));
    CHECK(back.meta.entries.empty());
    CHECK(back == w);
}

TEST_CASE("malformed adapter files are rejected") {
    AdapterWeights w = simple_adapter({1, 2}, {3, 4});
    std::string good = serialize_adapter(w);

    SUBCASE("shorter than the length field") {
        CHECK_THROWS_AS(deserialize_adapter("abc"), TruncatedData);
    }
    SUBCASE("declared header longer than the file") {
        std::string bad = good.substr(0, 12);
        CHECK_THROWS_AS(deserialize_adapter(bad), TruncatedData);
    }
    SUBCASE("header is not JSON") {
        std::string bad = good;
        bad[8] = '!';
        CHECK_THROWS_AS(deserialize_adapter(bad), BadHeader);
    }
    SUBCASE("tensor bytes truncated") {
        std::string bad = good.substr(0, good.size() - 4);
        CHECK_THROWS_AS(deserialize_adapter(bad), TruncatedData);
    }
    SUBCASE("unknown element type") {
        std::string bad = good;
        auto pos = bad.find("\"F64\"");
        REQUIRE(pos != std::string::npos);
        bad.replace(pos, 5, "\"I64\"");
        CHECK_THROWS_AS(deserialize_adapter(bad), UnsupportedElementType);
    }
}

TEST_CASE("merge identities") {
    AdapterWeights theta = simple_adapter({2.0, 4.0}, {1.0, -1.0});

    SUBCASE("averaging an adapter with itself is the identity") {
        auto r = merge({theta, theta}, {});
        CHECK(r.merged == theta);
        CHECK(r.dropped.empty());
    }
    SUBCASE("averaging with zeros halves every element") {
        AdapterWeights zero = simple_adapter({0.0, 0.0}, {0.0, 0.0});
        auto r = merge({theta, zero}, {});
        CHECK(r.merged.tensors.at("lora_A").to_f64() == std::vector<double>{1.0, 2.0});
        CHECK(r.merged.tensors.at("lora_B").to_f64() == std::vector<double>{0.5, -0.5});
    }
    SUBCASE("hand-computed elementwise mean") {
        AdapterWeights a = simple_adapter({2.0, 4.0}, {10.0, 0.0});
        AdapterWeights b = simple_adapter({6.0, 0.0}, {-2.0, 8.0});
        auto r = merge({a, b}, {});
        CHECK(r.merged.tensors.at("lora_A").to_f64() == std::vector<double>{4.0, 2.0});
        CHECK(r.merged.tensors.at("lora_B").to_f64() == std::vector<double>{4.0, 4.0});
    }
    SUBCASE("merge order does not matter for equal coefficients") {
        AdapterWeights a = simple_adapter({1.5, -2.5}, {0.75, 3.0});
        auto ab = merge({theta, a}, {});
        auto ba = merge({a, theta}, {});
        CHECK(ab.merged == ba.merged);
    }
    SUBCASE("weighted coefficients apply per adapter") {
        AdapterWeights a = simple_adapter({0.0, 0.0}, {0.0, 0.0});
        MergeSpec spec;
        spec.coefficients = {0.25, 0.75};
        auto r = merge({theta, a}, spec);
        CHECK(r.merged.tensors.at("lora_A").to_f64() == std::vector<double>{0.5, 1.0});
    }
}

TEST_CASE("merge validation") {
    AdapterWeights theta = simple_adapter({2.0, 4.0}, {1.0, -1.0});

    SUBCASE("empty input") {
        CHECK_THROWS_AS(merge({}, {}), KeyMismatch);
    }
    SUBCASE("coefficient count mismatch") {
        MergeSpec spec;
        spec.coefficients = {1.0};
        CHECK_THROWS_AS(merge({theta, theta}, spec), ConfigError);
    }
    SUBCASE("differing tensor names fail strictly, listing offenders") {
        AdapterWeights other = theta;
        other.tensors.erase("lora_B");
        other.tensors["lora_C"] = f64_tensor({2}, {0.0, 0.0});
        try {
            merge({theta, other}, {});
            FAIL("expected KeyMismatch");
        } catch (const KeyMismatch& e) {
            std::string msg = e.what();
            CHECK(msg.find("lora_B") != std::string::npos);
            CHECK(msg.find("lora_C") != std::string::npos);
        }
    }
    SUBCASE("intersect mode merges shared names and reports the dropped") {
        AdapterWeights other = theta;
        other.tensors.erase("lora_B");
        other.tensors["lora_C"] = f64_tensor({2}, {0.0, 0.0});
        MergeSpec spec;
        spec.intersect = true;
        auto r = merge({theta, other}, spec);
        CHECK(r.merged.tensors.size() == 1);
        CHECK(r.merged.tensors.count("lora_A") == 1);
        CHECK(r.dropped == std::vector<std::string>{"lora_B", "lora_C"});
    }
    SUBCASE("shape mismatch") {
        AdapterWeights other = theta;
        other.tensors["lora_A"] = f64_tensor({3}, {1.0, 2.0, 3.0});
        CHECK_THROWS_AS(merge({theta, other}, {}), ShapeMismatch);
    }
    SUBCASE("metadata mismatch") {
        AdapterWeights other = simple_adapter({2.0, 4.0}, {1.0, -1.0});
        other.meta.entries["r"] = "8";
        CHECK_THROWS_AS(merge({theta, other}, {}), MetaMismatch);
    }
    SUBCASE("dtype mismatch across adapters") {
        AdapterWeights other = theta;
        other.tensors["lora_A"] = Tensor::from_f64(Dtype::F32, {2}, {2.0, 4.0});
        CHECK_THROWS_AS(merge({theta, other}, {}), MetaMismatch);
    }
}

TEST_CASE("merge accumulates in f64 regardless of storage dtype") {
    // values representable in f16 whose mean is too: no rounding anywhere
    AdapterWeights a, b;
    a.tensors["x"] = Tensor::from_f64(Dtype::F16, {2}, {1.0, 3.0});
    b.tensors["x"] = Tensor::from_f64(Dtype::F16, {2}, {2.0, 5.0});
    auto r = merge({a, b}, {});
    CHECK(r.merged.tensors.at("x").dtype == Dtype::F16);
    CHECK(r.merged.tensors.at("x").to_f64() == std::vector<double>{1.5, 4.0});
}
