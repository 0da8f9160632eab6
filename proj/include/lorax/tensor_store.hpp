// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lorax/matrix.hpp"

namespace lorax {

enum class DType { f16, f32 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);  // "F16" / "F32"

/// One named tensor. Values are held as doubles (exact widenings of the
/// stored dtype); construction snaps incoming values to the dtype grid so
/// serialization round-trips are bit-exact.
struct TensorEntry {
    std::string key;
    DType dtype = DType::f32;
    std::vector<std::size_t> shape;  // rank 1 or 2
    std::vector<double> data;        // row-major

    std::size_t element_count() const;
};

/// Ordered collection of named vectors/matrices plus a verbatim-preserved
/// string metadata map. Read-only after load; safe to share across workers.
class TensorBundle {
public:
    /// Validates key uniqueness, rank <= 2, and shape/data agreement, then
    /// snaps values to the dtype grid.
    void add(std::string key, DType dtype, std::vector<std::size_t> shape,
             std::vector<double> data);
    void add_matrix(const std::string& key, const Matrix& m, DType dtype = DType::f32);
    void add_vector(const std::string& key, const std::vector<double>& v,
                    DType dtype = DType::f32);

    bool contains(const std::string& key) const;
    const TensorEntry& at(const std::string& key) const;
    const std::vector<TensorEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Rank-2 entry as a Matrix (throws ShapeError on rank-1 entries).
    Matrix matrix(const std::string& key) const;

    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    void set_metadata(const std::string& key, const std::string& value);

    bool operator==(const TensorBundle& other) const;

private:
    std::vector<TensorEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

/// Container layout (bit-exact): bytes 0-7 hold an unsigned 64-bit
/// little-endian header length N; bytes 8..8+N are a UTF-8 JSON object
/// mapping each tensor name to {"dtype": "F16"|"F32", "shape": [...],
/// "data_offsets": [begin, end]} with offsets into the payload region that
/// starts at byte 8+N. Payload values are little-endian, row-major. An
/// optional "__metadata__" entry (string-to-string map) is preserved.
std::vector<std::uint8_t> serialize_bundle(const TensorBundle& bundle);
TensorBundle deserialize_bundle(std::span<const std::uint8_t> bytes);

TensorBundle read_bundle(const std::filesystem::path& path);
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& path);

/// Deterministic content hash of the canonical serialization, as hex.
std::string bundle_content_hash(const TensorBundle& bundle);

// --- structured module keys ---------------------------------------------

enum class NetworkPart { down, mid, up, text_encoder, other };
enum class OpKind { to_q, to_k, to_v, to_out, other };

std::string_view to_string(NetworkPart part);
std::string_view to_string(OpKind kind);

/// Best-effort structured view of a checkpoint key such as
/// "db.2.attentions.0.tb.3.to_q". Parsing is total: unrecognized segments
/// fall back to `other` with the raw text preserved, and formatting a
/// parsed key reproduces the original text.
struct ModuleKey {
    NetworkPart network_part = NetworkPart::other;
    std::optional<std::size_t> block_index;
    std::optional<std::size_t> attention_index;
    std::optional<std::size_t> transformer_block;
    OpKind op_kind = OpKind::other;
    std::string raw;

    std::string format() const { return raw; }

    /// All five structured fields equal (the "same slot in the network").
    bool same_position(const ModuleKey& other) const;
    /// Equal up to the transformer block: the search space for
    /// alternate-block matching.
    bool same_site(const ModuleKey& other) const;
};

ModuleKey parse_module_key(std::string_view raw);

}  // namespace lorax
