// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "lorax/errors.hpp"
#include "lorax/float16.hpp"
#include "lorax/util.hpp"

namespace lorax {

using ordered_json = nlohmann::ordered_json;

std::size_t dtype_size(DType dtype) { return dtype == DType::f16 ? 2 : 4; }

std::string_view dtype_name(DType dtype) { return dtype == DType::f16 ? "F16" : "F32"; }

namespace {

DType dtype_from_name(const std::string& name) {
    if (name == "F16") return DType::f16;
    if (name == "F32") return DType::f32;
    throw FormatError("unsupported dtype \"" + name + "\" (expected F16 or F32)");
}

// Snap a double onto the exact grid of the storage dtype so widening on a
// later load reproduces it bit-for-bit.
double canonicalize(double v, DType dtype) {
    if (dtype == DType::f16) return float16_decode(float16_encode(v));
    return static_cast<double>(static_cast<float>(v));
}

void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[offset + static_cast<std::size_t>(i)];
    return v;
}

}  // namespace

std::size_t TensorEntry::element_count() const {
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    return count;
}

void TensorBundle::add(std::string key, DType dtype, std::vector<std::size_t> shape,
                       std::vector<double> data) {
    if (index_.count(key) != 0) {
        throw FormatError("duplicate tensor key \"" + key + "\"");
    }
    if (shape.empty() || shape.size() > 2) {
        throw UnsupportedTensor("tensor \"" + key + "\" has rank " +
                                std::to_string(shape.size()) +
                                "; only vectors and matrices are supported");
    }
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    if (count != data.size()) {
        throw ShapeError("tensor \"" + key + "\": shape product " + std::to_string(count) +
                         " != value count " + std::to_string(data.size()));
    }
    for (double& v : data) v = canonicalize(v, dtype);
    index_[key] = entries_.size();
    entries_.push_back(TensorEntry{std::move(key), dtype, std::move(shape), std::move(data)});
}

void TensorBundle::add_matrix(const std::string& key, const Matrix& m, DType dtype) {
    add(key, dtype, {m.rows(), m.cols()}, m.values());
}

void TensorBundle::add_vector(const std::string& key, const std::vector<double>& v,
                              DType dtype) {
    add(key, dtype, {v.size()}, v);
}

bool TensorBundle::contains(const std::string& key) const { return index_.count(key) != 0; }

const TensorEntry& TensorBundle::at(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw FormatError("no tensor named \"" + key + "\"");
    return entries_[it->second];
}

Matrix TensorBundle::matrix(const std::string& key) const {
    const TensorEntry& e = at(key);
    if (e.shape.size() != 2) {
        throw ShapeError("tensor \"" + key + "\" is not a matrix");
    }
    return Matrix(e.shape[0], e.shape[1], e.data);
}

void TensorBundle::set_metadata(const std::string& key, const std::string& value) {
    metadata_[key] = value;
}

bool TensorBundle::operator==(const TensorBundle& other) const {
    if (metadata_ != other.metadata_ || entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const TensorEntry& a = entries_[i];
        const TensorEntry& b = other.entries_[i];
        if (a.key != b.key || a.dtype != b.dtype || a.shape != b.shape) return false;
        if (a.data.size() != b.data.size()) return false;
        // bit comparison: canonicalized values either match exactly or differ
        if (std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

std::vector<std::uint8_t> serialize_bundle(const TensorBundle& bundle) {
    ordered_json header = ordered_json::object();
    if (!bundle.metadata().empty()) {
        ordered_json meta = ordered_json::object();
        for (const auto& [k, v] : bundle.metadata()) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }

    std::vector<std::uint8_t> payload;
    std::size_t offset = 0;
    for (const TensorEntry& e : bundle.entries()) {
        const std::size_t nbytes = e.element_count() * dtype_size(e.dtype);
        ordered_json info = ordered_json::object();
        info["dtype"] = std::string(dtype_name(e.dtype));
        info["shape"] = e.shape;
        info["data_offsets"] = {offset, offset + nbytes};
        header[e.key] = std::move(info);
        if (e.dtype == DType::f16) {
            for (double v : e.data) put_u16le(payload, float16_encode(v));
        } else {
            for (double v : e.data)
                put_u32le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
        offset += nbytes;
    }

    const std::string header_text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(8 + header_text.size() + payload.size());
    put_u64le(out, header_text.size());
    out.insert(out.end(), header_text.begin(), header_text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

TensorBundle deserialize_bundle(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) {
        throw FormatError("container too short: " + std::to_string(bytes.size()) +
                          " bytes, need at least 8 for the header length");
    }
    const std::uint64_t header_len = get_u64le(bytes, 0);
    if (header_len > bytes.size() - 8) {
        throw FormatError("header length " + std::to_string(header_len) +
                          " at byte 0 exceeds remaining " + std::to_string(bytes.size() - 8) +
                          " bytes");
    }
    ordered_json header;
    try {
        header = ordered_json::parse(bytes.begin() + 8,
                                     bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("header JSON parse failed at byte 8: ") + e.what());
    }
    if (!header.is_object()) throw FormatError("header at byte 8 is not a JSON object");

    const std::size_t payload_begin = 8 + header_len;
    const std::size_t payload_size = bytes.size() - payload_begin;

    TensorBundle bundle;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (auto it = header.begin(); it != header.end(); ++it) {
        const std::string& key = it.key();
        if (key == "__metadata__") {
            if (!it.value().is_object())
                throw FormatError("__metadata__ must be a string-to-string object");
            for (auto m = it.value().begin(); m != it.value().end(); ++m) {
                if (!m.value().is_string())
                    throw FormatError("__metadata__ value for \"" + m.key() +
                                      "\" is not a string");
                bundle.set_metadata(m.key(), m.value().get<std::string>());
            }
            continue;
        }
        const ordered_json& info = it.value();
        if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
            !info.contains("data_offsets")) {
            throw FormatError("tensor \"" + key +
                              "\": entry must carry dtype, shape and data_offsets");
        }
        const DType dtype = dtype_from_name(info["dtype"].get<std::string>());
        std::vector<std::size_t> shape;
        for (const auto& d : info["shape"]) {
            if (!d.is_number_unsigned())
                throw FormatError("tensor \"" + key + "\": bad shape entry");
            shape.push_back(d.get<std::size_t>());
        }
        if (shape.empty() || shape.size() > 2) {
            throw UnsupportedTensor("tensor \"" + key + "\" has rank " +
                                    std::to_string(shape.size()) +
                                    "; only vectors and matrices are supported");
        }
        const auto& offs = info["data_offsets"];
        if (!offs.is_array() || offs.size() != 2) {
            throw FormatError("tensor \"" + key + "\": data_offsets must be [begin, end]");
        }
        const std::uint64_t begin = offs[0].get<std::uint64_t>();
        const std::uint64_t end = offs[1].get<std::uint64_t>();
        std::size_t count = 1;
        for (std::size_t d : shape) count *= d;
        if (end < begin || end - begin != count * dtype_size(dtype)) {
            throw FormatError("tensor \"" + key + "\": data range [" + std::to_string(begin) +
                              ", " + std::to_string(end) + ") does not match shape");
        }
        if (end > payload_size) {
            throw FormatError("tensor \"" + key + "\": data range ends at payload byte " +
                              std::to_string(end) + " but payload holds only " +
                              std::to_string(payload_size) + " bytes (file offset " +
                              std::to_string(payload_begin + payload_size) + ")");
        }
        ranges.emplace_back(begin, end);

        std::vector<double> data(count);
        const std::uint8_t* p = bytes.data() + payload_begin + begin;
        if (dtype == DType::f16) {
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint16_t h = static_cast<std::uint16_t>(
                    p[2 * i] | (static_cast<std::uint16_t>(p[2 * i + 1]) << 8));
                data[i] = float16_decode(h);
            }
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                std::uint32_t w = 0;
                for (int b = 3; b >= 0; --b)
                    w = (w << 8) | p[4 * i + static_cast<std::size_t>(b)];
                data[i] = static_cast<double>(std::bit_cast<float>(w));
            }
        }
        bundle.add(key, dtype, std::move(shape), std::move(data));
    }

    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) {
            throw FormatError("overlapping tensor data ranges in payload");
        }
    }
    return bundle;
}

TensorBundle read_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open \"" + path.string() + "\" for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_bundle(bytes);
}

void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_bundle(bundle);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path.string() + "\" for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to \"" + path.string() + "\"");
}

std::string bundle_content_hash(const TensorBundle& bundle) {
    const std::vector<std::uint8_t> bytes = serialize_bundle(bundle);
    return to_hex(fnv1a64(bytes));
}

// --- module keys -------------------------------------------------------------

std::string_view to_string(NetworkPart part) {
    switch (part) {
        case NetworkPart::down: return "down";
        case NetworkPart::mid: return "mid";
        case NetworkPart::up: return "up";
        case NetworkPart::text_encoder: return "text_encoder";
        default: return "other";
    }
}

std::string_view to_string(OpKind kind) {
    switch (kind) {
        case OpKind::to_q: return "to_q";
        case OpKind::to_k: return "to_k";
        case OpKind::to_v: return "to_v";
        case OpKind::to_out: return "to_out";
        default: return "other";
    }
}

bool ModuleKey::same_position(const ModuleKey& other) const {
    return network_part == other.network_part && block_index == other.block_index &&
           attention_index == other.attention_index &&
           transformer_block == other.transformer_block && op_kind == other.op_kind;
}

bool ModuleKey::same_site(const ModuleKey& other) const {
    return network_part == other.network_part && block_index == other.block_index &&
           attention_index == other.attention_index && op_kind == other.op_kind;
}

namespace {

std::vector<std::string> split_segments(std::string_view raw) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= raw.size()) {
        const std::size_t dot = raw.find('.', start);
        if (dot == std::string_view::npos) {
            out.emplace_back(raw.substr(start));
            break;
        }
        out.emplace_back(raw.substr(start, dot - start));
        start = dot + 1;
    }
    return out;
}

std::optional<std::size_t> parse_index(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

std::optional<NetworkPart> part_token(const std::string& s) {
    if (s == "db" || s == "down" || s == "down_blocks") return NetworkPart::down;
    if (s == "mb" || s == "mid" || s == "mid_block" || s == "mid_blocks")
        return NetworkPart::mid;
    if (s == "ub" || s == "up" || s == "up_blocks") return NetworkPart::up;
    if (s == "te" || s == "text_encoder" || s == "text_model") return NetworkPart::text_encoder;
    return std::nullopt;
}

std::optional<OpKind> op_token(const std::string& s) {
    if (s == "to_q") return OpKind::to_q;
    if (s == "to_k") return OpKind::to_k;
    if (s == "to_v") return OpKind::to_v;
    if (s == "to_out") return OpKind::to_out;
    return std::nullopt;
}

}  // namespace

ModuleKey parse_module_key(std::string_view raw) {
    ModuleKey key;
    key.raw = std::string(raw);
    const auto segments = split_segments(raw);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const std::string& seg = segments[i];
        if (key.network_part == NetworkPart::other) {
            if (auto part = part_token(seg)) {
                key.network_part = *part;
                if (i + 1 < segments.size() && !key.block_index) {
                    key.block_index = parse_index(segments[i + 1]);
                }
                continue;
            }
        }
        if ((seg == "attentions" || seg == "attention") && i + 1 < segments.size() &&
            !key.attention_index) {
            key.attention_index = parse_index(segments[i + 1]);
            continue;
        }
        if ((seg == "tb" || seg == "transformer_blocks") && i + 1 < segments.size() &&
            !key.transformer_block) {
            key.transformer_block = parse_index(segments[i + 1]);
            continue;
        }
        if (key.op_kind == OpKind::other) {
            if (auto op = op_token(seg)) key.op_kind = *op;
        }
    }
    return key;
}

}  // namespace lorax
