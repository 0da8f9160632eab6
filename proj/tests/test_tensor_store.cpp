// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lorax/errors.hpp"
#include "lorax/float16.hpp"
#include "lorax/tensor_store.hpp"
#include "lorax/util.hpp"

using namespace lorax;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "lorax_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Hand-built container: header length prefix + JSON + raw little-endian payload.
std::vector<std::uint8_t> build_file(const std::string& header,
                                     const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> bytes;
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>((n >> (8 * i)) & 0xff));
    bytes.insert(bytes.end(), header.begin(), header.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    return bytes;
}

void push_f32(std::vector<std::uint8_t>& payload, float f) {
    std::uint32_t w;
    static_assert(sizeof(w) == sizeof(f));
    std::memcpy(&w, &f, 4);
    for (int i = 0; i < 4; ++i) payload.push_back(static_cast<std::uint8_t>((w >> (8 * i)) & 0xff));
}

TensorBundle random_bundle(Rng& rng, std::size_t tensors) {
    TensorBundle b;
    for (std::size_t t = 0; t < tensors; ++t) {
        const DType dtype = rng.uniform() < 0.5 ? DType::f16 : DType::f32;
        std::vector<std::size_t> shape;
        if (rng.uniform() < 0.3) {
            shape = {1 + rng.index(12)};
        } else {
            shape = {1 + rng.index(9), 1 + rng.index(9)};
        }
        std::size_t count = 1;
        for (std::size_t d : shape) count *= d;
        std::vector<double> data(count);
        for (double& v : data) v = rng.gaussian();
        b.add("tensor_" + std::to_string(t), dtype, shape, data);
    }
    if (rng.uniform() < 0.5) b.set_metadata("note", "generated");
    return b;
}

}  // namespace

TEST_CASE("float16 codec: 0.5 encodes to 0x3800 and decodes back") {
    CHECK(float16_encode(0.5) == 0x3800);
    CHECK(float16_decode(0x3800) == 0.5);
    CHECK(float16_encode(1.0) == 0x3c00);
    CHECK(float16_decode(0x3c00) == 1.0);
    CHECK(float16_encode(-2.0) == 0xc000);
    CHECK(float16_encode(0.0) == 0x0000);
    CHECK(float16_encode(-0.0) == 0x8000);
    CHECK(float16_encode(65504.0) == 0x7bff);   // largest finite half
    CHECK(float16_encode(65520.0) == 0x7c00);   // rounds to inf
    CHECK(float16_encode(1e30) == 0x7c00);
    CHECK(float16_decode(0x0001) == doctest::Approx(5.960464477539063e-08));
}

TEST_CASE("float16 codec: every bit pattern of finite halves round-trips") {
    for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
        const std::uint16_t h = static_cast<std::uint16_t>(bits);
        if (((h >> 10) & 0x1f) == 0x1f) continue;  // inf / nan payloads excluded
        CHECK(float16_encode(float16_decode(h)) == h);
    }
}

TEST_CASE("read_bundle on a hand-built single-tensor file") {
    std::vector<std::uint8_t> payload;
    for (float f : {1.0f, 2.0f, 3.0f, 4.0f}) push_f32(payload, f);
    const auto bytes = build_file(
        R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})", payload);
    const TensorBundle b = deserialize_bundle(bytes);
    REQUIRE(b.size() == 1);
    const TensorEntry& e = b.at("w");
    CHECK(e.dtype == DType::f32);
    CHECK(e.shape == std::vector<std::size_t>{2, 2});
    CHECK(e.data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("read_bundle accepts an empty header") {
    const TensorBundle b = deserialize_bundle(build_file("{}", {}));
    CHECK(b.size() == 0);
}

TEST_CASE("float16 payloads widen exactly") {
    // 0.5 is 0x3800 in binary16
    std::vector<std::uint8_t> payload;
    for (int i = 0; i < 12; ++i) {
        payload.push_back(0x00);
        payload.push_back(0x38);
    }
    const auto bytes = build_file(
        R"({"h":{"dtype":"F16","shape":[3,4],"data_offsets":[0,24]}})", payload);
    const TensorBundle b = deserialize_bundle(bytes);
    for (double v : b.at("h").data) CHECK(v == 0.5);
}

TEST_CASE("malformed containers raise FormatError with offset context") {
    CHECK_THROWS_AS(deserialize_bundle(std::vector<std::uint8_t>{1, 2, 3}), FormatError);

    // header length larger than the file
    std::vector<std::uint8_t> oversized{255, 0, 0, 0, 0, 0, 0, 0, '{', '}'};
    CHECK_THROWS_AS(deserialize_bundle(oversized), FormatError);

    // invalid JSON
    CHECK_THROWS_AS(deserialize_bundle(build_file("{not json", {})), FormatError);

    // truncated payload
    std::vector<std::uint8_t> short_payload(8, 0);
    CHECK_THROWS_AS(
        deserialize_bundle(build_file(
            R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})", short_payload)),
        FormatError);

    // overlapping ranges
    std::vector<std::uint8_t> payload(16, 0);
    CHECK_THROWS_AS(
        deserialize_bundle(build_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                                      R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                                      payload)),
        FormatError);

    // alien dtype
    CHECK_THROWS_AS(
        deserialize_bundle(build_file(
            R"({"w":{"dtype":"BF16","shape":[2],"data_offsets":[0,4]}})", payload)),
        FormatError);
}

TEST_CASE("tensors of rank > 2 are rejected") {
    std::vector<std::uint8_t> payload(32, 0);
    CHECK_THROWS_AS(
        deserialize_bundle(build_file(
            R"({"w":{"dtype":"F32","shape":[2,2,2],"data_offsets":[0,32]}})", payload)),
        UnsupportedTensor);
    TensorBundle b;
    CHECK_THROWS_AS(b.add("w", DType::f32, {2, 2, 2}, std::vector<double>(8, 0.0)),
                    UnsupportedTensor);
}

TEST_CASE("duplicate keys are rejected before writing") {
    TensorBundle b;
    b.add_vector("w", {1.0, 2.0});
    CHECK_THROWS_AS(b.add_vector("w", {3.0}), FormatError);
}

TEST_CASE("metadata round-trips verbatim") {
    TensorBundle b;
    b.set_metadata("rank", "320");
    b.set_metadata("base_model_hash", "abc123");
    b.add_vector("x", {1.0});
    const TensorBundle back = deserialize_bundle(serialize_bundle(b));
    CHECK(back.metadata() == b.metadata());
}

TEST_CASE("serialization round-trip is bit-exact") {
    TensorBundle b;
    b.add_matrix("w", Matrix(2, 2, {1, 2, 3, 4}));
    const auto bytes1 = serialize_bundle(b);
    const auto bytes2 = serialize_bundle(deserialize_bundle(bytes1));
    CHECK(bytes1 == bytes2);

    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const TensorBundle original = random_bundle(rng, 1 + rng.index(6));
        const auto first = serialize_bundle(original);
        const TensorBundle reloaded = deserialize_bundle(first);
        CHECK(reloaded == original);
        CHECK(serialize_bundle(reloaded) == first);
    }
}

TEST_CASE("file io round-trip and hash stability") {
    Rng rng(43);
    const TensorBundle b = random_bundle(rng, 4);
    const fs::path path = temp_file("roundtrip.safetensors");
    write_bundle(b, path);
    const TensorBundle back = read_bundle(path);
    CHECK(back == b);
    CHECK(bundle_content_hash(back) == bundle_content_hash(b));
    fs::remove(path);
    CHECK_THROWS_AS(read_bundle(path), IoError);
}

TEST_CASE("parse_module_key: block addressing") {
    const ModuleKey k = parse_module_key("db.2.attentions.0.tb.3.to_q");
    CHECK(k.network_part == NetworkPart::down);
    CHECK(k.block_index == 2);
    CHECK(k.attention_index == 0);
    CHECK(k.transformer_block == 3);
    CHECK(k.op_kind == OpKind::to_q);
    CHECK(k.format() == "db.2.attentions.0.tb.3.to_q");
}

TEST_CASE("parse_module_key: up blocks and to_out") {
    const ModuleKey k = parse_module_key("up.0.attentions.2.tb.4.to_out");
    CHECK(k.network_part == NetworkPart::up);
    CHECK(k.block_index == 0);
    CHECK(k.attention_index == 2);
    CHECK(k.transformer_block == 4);
    CHECK(k.op_kind == OpKind::to_out);
}

TEST_CASE("parse_module_key: long-form names") {
    const ModuleKey k = parse_module_key("down_blocks.1.attentions.0.transformer_blocks.2.to_v");
    CHECK(k.network_part == NetworkPart::down);
    CHECK(k.block_index == 1);
    CHECK(k.attention_index == 0);
    CHECK(k.transformer_block == 2);
    CHECK(k.op_kind == OpKind::to_v);
}

TEST_CASE("parse_module_key: unknown keys fall back to other") {
    const ModuleKey k = parse_module_key("some.unknown.layer");
    CHECK(k.network_part == NetworkPart::other);
    CHECK_FALSE(k.block_index.has_value());
    CHECK_FALSE(k.attention_index.has_value());
    CHECK_FALSE(k.transformer_block.has_value());
    CHECK(k.op_kind == OpKind::other);
    CHECK(k.raw == "some.unknown.layer");
}

TEST_CASE("parse is idempotent through format") {
    Rng rng(47);
    const std::vector<std::string> keys = {
        "db.2.attentions.0.tb.3.to_q", "mid.attentions.0.to_k", "te.7.to_out",
        "up_blocks.3.attentions.1.transformer_blocks.0.to_v", "arbitrary.text"};
    for (const std::string& raw : keys) {
        const ModuleKey once = parse_module_key(raw);
        const ModuleKey twice = parse_module_key(once.format());
        CHECK(once.format() == twice.format());
        CHECK(once.same_position(twice));
    }
}
