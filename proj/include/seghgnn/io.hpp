#pragma once

// File formats:
//   feature file  "SGHN" | u32 version=1 | u32 grid_h | u32 grid_w | u32 d |
//                 u32 patch_size | f32 payload[grid_h*grid_w*d], all
//                 little-endian, payload row-major (patch row, patch col, channel)
//   masks         binary PGM (P5, maxval 255), one byte per cell, plus a JSON
//                 sidecar "<mask>.json" describing the label -> gray mapping
//   boxes         JSON array [{"x_min":..,"y_min":..,"x_max":..,"y_max":..}]
//   ground truth  JSON {"boxes": [...], "mask": "relative/path.pgm",
//                 "width": W, "height": H} (all keys optional) or a bare
//                 box array

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "seghgnn/error.hpp"
#include "seghgnn/grid.hpp"
#include "seghgnn/manifold.hpp"

namespace seghgnn {
namespace io {

inline constexpr std::array<char, 4> kFeatureMagic = {'S', 'G', 'H', 'N'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 24;

struct FeatureFile {
    Matrix features; ///< N x d, N = grid_h * grid_w
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t patch_size = 0;
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

} // namespace detail

inline std::string encode_features(const FeatureFile& f) {
    const auto n = static_cast<Eigen::Index>(f.grid_h) * static_cast<Eigen::Index>(f.grid_w);
    if (f.features.rows() != n) throw Error(ErrorCode::dimension, "feature rows do not match the grid");
    std::string buf(kFeatureMagic.begin(), kFeatureMagic.end());
    detail::put_u32(buf, kFeatureVersion);
    detail::put_u32(buf, f.grid_h);
    detail::put_u32(buf, f.grid_w);
    detail::put_u32(buf, static_cast<std::uint32_t>(f.features.cols()));
    detail::put_u32(buf, f.patch_size);
    buf.reserve(kFeatureHeaderBytes + 4 * static_cast<std::size_t>(f.features.size()));
    for (Eigen::Index i = 0; i < f.features.rows(); ++i) {
        for (Eigen::Index c = 0; c < f.features.cols(); ++c) {
            const auto v = static_cast<float>(f.features(i, c));
            if (!std::isfinite(v)) throw Error(ErrorCode::invalid_feature, "non-finite feature value");
            detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
        }
    }
    return buf;
}

inline FeatureFile decode_features(const std::string& bytes) {
    if (bytes.size() < kFeatureHeaderBytes) {
        if (bytes.size() >= 4 && std::memcmp(bytes.data(), kFeatureMagic.data(), 4) != 0) {
            throw Error(ErrorCode::bad_magic, "expected SGHN");
        }
        throw Error(ErrorCode::length_mismatch, "expected at least " + std::to_string(kFeatureHeaderBytes) +
                                                    " header bytes, got " + std::to_string(bytes.size()));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, kFeatureMagic.data(), 4) != 0) throw Error(ErrorCode::bad_magic, "expected SGHN");
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != kFeatureVersion) throw Error(ErrorCode::bad_version, "version " + std::to_string(version));
    FeatureFile f;
    f.grid_h = detail::get_u32(p + 8);
    f.grid_w = detail::get_u32(p + 12);
    const std::uint32_t d = detail::get_u32(p + 16);
    f.patch_size = detail::get_u32(p + 20);
    if (f.grid_h == 0 || f.grid_w == 0 || d == 0 || f.patch_size == 0) {
        throw Error(ErrorCode::bad_header, "grid dimensions, channel count and patch size must be nonzero");
    }
    const std::uint64_t values = std::uint64_t{f.grid_h} * f.grid_w * d;
    const std::uint64_t expected = kFeatureHeaderBytes + 4 * values;
    if (bytes.size() != expected) {
        throw Error(ErrorCode::length_mismatch, "expected " + std::to_string(expected) + " bytes, got " +
                                                    std::to_string(bytes.size()));
    }
    const auto n = static_cast<Eigen::Index>(std::uint64_t{f.grid_h} * f.grid_w);
    f.features.resize(n, d);
    const unsigned char* q = p + kFeatureHeaderBytes;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(d); ++c, q += 4) {
            const float v = std::bit_cast<float>(detail::get_u32(q));
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::invalid_feature, "non-finite payload value at patch " + std::to_string(i) +
                                                            ", channel " + std::to_string(c));
            }
            f.features(i, c) = static_cast<double>(v);
        }
    }
    return f;
}

inline FeatureFile read_features(const std::filesystem::path& path) {
    try {
        return decode_features(detail::read_all(path));
    } catch (const Error& e) {
        std::string detail = e.what();
        const std::string prefix = std::string(to_string(e.code())) + ": ";
        if (detail.starts_with(prefix)) detail.erase(0, prefix.size());
        throw Error(e.code(), path.string() + ": " + detail);
    }
}

inline void write_features(const std::filesystem::path& path, const FeatureFile& f) {
    detail::write_all(path, encode_features(f));
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// floor(255 * label / (num_labels - 1)); a single label maps to 0.
inline unsigned char gray_level(int label, int num_labels) {
    if (num_labels <= 1) return 0;
    return static_cast<unsigned char>((255L * label) / (num_labels - 1));
}

inline std::string encode_pgm(const LabelGrid& labels, int num_labels) {
    if (num_labels < 1) throw Error(ErrorCode::invalid_argument, "num_labels must be >= 1");
    std::string buf = "P5\n" + std::to_string(labels.cols) + " " + std::to_string(labels.rows) + "\n255\n";
    buf.reserve(buf.size() + labels.size());
    for (int l : labels.labels) {
        if (l < 0 || l >= num_labels) throw Error(ErrorCode::invalid_argument, "label " + std::to_string(l) + " out of range");
        buf.push_back(static_cast<char>(gray_level(l, num_labels)));
    }
    return buf;
}

/// Reads a P5 mask; cell values are the raw gray levels.
inline LabelGrid read_pgm(const std::filesystem::path& path) {
    const std::string bytes = detail::read_all(path);
    std::istringstream in(bytes);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw Error(ErrorCode::parse, path.string() + ": not a binary PGM");
    auto next_int = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw Error(ErrorCode::parse, path.string() + ": bad PGM header");
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (maxval < 1 || maxval > 255) throw Error(ErrorCode::parse, path.string() + ": only 8-bit PGM is supported");
    in.get();
    const auto offset = static_cast<std::size_t>(in.tellg());
    const auto count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() < offset + count) throw Error(ErrorCode::length_mismatch, path.string() + ": truncated PGM");
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<unsigned char>(bytes[offset + i]);
    return LabelGrid(static_cast<std::size_t>(h), static_cast<std::size_t>(w), std::move(labels));
}

struct MaskInfo {
    int num_labels = 2;
    std::optional<int> background_label;
    long patch_size = 1;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& mask) {
    return std::filesystem::path(mask.string() + ".json");
}

inline std::string encode_sidecar(const LabelGrid& labels, const MaskInfo& info) {
    nlohmann::ordered_json j;
    j["grid_h"] = labels.rows;
    j["grid_w"] = labels.cols;
    j["patch_size"] = info.patch_size;
    j["num_labels"] = info.num_labels;
    j["background_label"] = info.background_label ? nlohmann::ordered_json(*info.background_label) : nlohmann::ordered_json(nullptr);
    auto& levels = j["gray_levels"] = nlohmann::ordered_json::array();
    for (int l = 0; l < info.num_labels; ++l) levels.push_back({{"label", l}, {"gray", gray_level(l, info.num_labels)}});
    return j.dump(2) + "\n";
}

/// Writes the P5 mask and its sidecar.
inline void write_mask(const LabelGrid& labels, const std::filesystem::path& path, const MaskInfo& info) {
    detail::write_all(path, encode_pgm(labels, info.num_labels));
    detail::write_all(sidecar_path(path), encode_sidecar(labels, info));
}

// ---------------------------------------------------------------------------
// Boxes and ground truth
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json boxes_to_json(const std::vector<BoundingBox>& boxes) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& b : boxes) {
        arr.push_back({{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max}});
    }
    return arr;
}

inline std::string encode_boxes(const std::vector<BoundingBox>& boxes) { return boxes_to_json(boxes).dump(2) + "\n"; }

inline void write_boxes(const std::filesystem::path& path, const std::vector<BoundingBox>& boxes) {
    detail::write_all(path, encode_boxes(boxes));
}

namespace detail {

inline nlohmann::json parse_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_all(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, path.string() + ": " + e.what());
    }
}

inline std::vector<BoundingBox> boxes_from_json(const nlohmann::json& arr, const std::string& where) {
    if (!arr.is_array()) throw Error(ErrorCode::parse, where + ": expected a box array");
    std::vector<BoundingBox> out;
    for (const auto& b : arr) {
        try {
            BoundingBox box{b.at("x_min").get<long>(), b.at("y_min").get<long>(), b.at("x_max").get<long>(),
                            b.at("y_max").get<long>()};
            if (box.x_min > box.x_max || box.y_min > box.y_max || box.x_min < 0 || box.y_min < 0) {
                throw Error(ErrorCode::parse, where + ": malformed box");
            }
            out.push_back(box);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::parse, where + ": " + e.what());
        }
    }
    return out;
}

} // namespace detail

inline std::vector<BoundingBox> read_boxes(const std::filesystem::path& path) {
    return detail::boxes_from_json(detail::parse_json(path), path.string());
}

struct GroundTruth {
    std::vector<BoundingBox> boxes;
    std::optional<std::filesystem::path> mask; ///< resolved against the file's directory
};

inline GroundTruth read_ground_truth(const std::filesystem::path& path) {
    const auto j = detail::parse_json(path);
    GroundTruth gt;
    if (j.is_array()) {
        gt.boxes = detail::boxes_from_json(j, path.string());
        return gt;
    }
    if (!j.is_object()) throw Error(ErrorCode::parse, path.string() + ": expected an object or a box array");
    if (j.contains("boxes")) gt.boxes = detail::boxes_from_json(j["boxes"], path.string());
    if (j.contains("mask")) {
        std::filesystem::path m = j["mask"].get<std::string>();
        gt.mask = m.is_absolute() ? m : path.parent_path() / m;
    }
    if (j.contains("width") && j.contains("height")) {
        const long w = j["width"].get<long>();
        const long h = j["height"].get<long>();
        for (const auto& b : gt.boxes) {
            if (b.x_max >= w || b.y_max >= h) throw Error(ErrorCode::parse, path.string() + ": box outside the image");
        }
    }
    return gt;
}

} // namespace io
} // namespace seghgnn
