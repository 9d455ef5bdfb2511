#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cgm/graph.hpp"
#include "cgm/influence.hpp"

namespace cgm::io {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::uint32_t kBlobVersion = 1;
inline constexpr std::uint32_t kEimsVersion = 1;

// ---------------------------------------------------------------------------
// Model manifest (JSON) + CGMB weight blob
//
// CGMB layout, little-endian:
//   "CGMB" | u32 version | u32 count
//   count x { u32 name_len | name | u8 dtype (0 = f32) | u32 ndim | u32 dims[ndim] | u64 offset }
//   u64 payload_bytes | payload (f32 values, tensors in lexicographic name order)
//   u32 CRC-32 of every preceding byte
// ---------------------------------------------------------------------------

struct BlobEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes from the start of the payload
};

std::vector<std::uint8_t> encode_blob(const WeightStore& weights);
/// Throws FormatError: Magic, Version, Checksum (including truncation).
WeightStore decode_blob(std::span<const std::uint8_t> bytes, std::vector<BlobEntry>* table = nullptr);
std::vector<BlobEntry> blob_table(const WeightStore& weights);

std::string manifest_text(const CgmGraph& g, const std::string& blob_file, std::uint32_t blob_crc,
                          const std::string& provenance = {});
/// Graph description plus the weight table the manifest declares.
GraphDescription parse_manifest(const std::string& text, std::vector<BlobEntry>* table = nullptr,
                                std::string* blob_file = nullptr);

void save_model(const CgmGraph& g, const fs::path& manifest, const fs::path& blob, const std::string& provenance = {});
/// `blob` defaults to the file named in the manifest, relative to it.
CgmGraph load_model(const fs::path& manifest, const fs::path& blob = {});

// ---------------------------------------------------------------------------
// EIMS map stack
//
//   "EIMS" | u32 version | u32 name_len | layer name | u32 C | u32 H | u32 W
//   | u64 seed | u32 n_pairs | C*H*W f32 values, row-major
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_eims(const EimStack& stack);
EimStack decode_eims(std::span<const std::uint8_t> bytes);
void write_eims(const fs::path& path, const EimStack& stack);
EimStack read_eims(const fs::path& path);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

struct PngScale {
  float min = 0.0f;
  float max = 0.0f;
};

/// 8-bit PNG of a [C,H,W] (C = 1 or 3) or [H,W] tensor. Values map linearly
/// from [min, max] onto [0, 255]; the scale is stored in a tEXt chunk.
PngScale write_png(const fs::path& path, const Tensor& image, const std::string& provenance = {});

struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::pair<std::string, std::string>> text;
};
PngImage read_png(const fs::path& path);

/// Tiles a grid of equally shaped [C,H,W] tensors with `gap` pixels between
/// tiles. Gaps take the smallest value present.
Tensor montage(const std::vector<std::vector<Tensor>>& grid, std::size_t gap = 2);

/// Drops the batch axis of a [1,C,H,W] tensor.
Tensor squeeze_batch(const Tensor& t);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::string provenance;  // written as a leading "# ..." line
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

void write_csv(const fs::path& path, const CsvTable& table);
CsvTable read_csv(const fs::path& path);
/// Shortest text that reads back to the same double.
std::string format_number(double v);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text(const fs::path& path, const std::string& text);

}  // namespace cgm::io
