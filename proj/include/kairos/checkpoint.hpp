#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kairos/tensor.hpp"

// TensorContainer: on-disk bundle of named float32 tensors plus string
// metadata.
//
// Layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "KAIR"
//   4       4     format_version, u32 (= 1)
//   8       8     header_length, u64
//   16      H     UTF-8 JSON header:
//                   {"entries":[{"length":L,"name":N,"offset":O,"shape":[...]}...],
//                    "metadata":{"key":"value",...}}
//   16+H    ...   payload; entry offsets are relative to the payload start,
//                 8-byte aligned, zero padding between entries, no trailing
//                 padding after the last entry.
//
// Entries are written sorted by name, so identical inputs give identical
// files.
namespace kairos::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kPreambleBytes = 16;
inline constexpr std::size_t kPayloadAlignment = 8;

using TensorMap = std::map<std::string, Tensor>;
using Metadata = std::map<std::string, std::string>;

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct Container {
  Metadata metadata;
  TensorMap tensors;
};

std::vector<std::byte> encode_container(const TensorMap& tensors,
                                        const Metadata& metadata);

// Validates magic, version, header, every entry's offset/length against the
// buffer, and only then copies payload bytes.
Container decode_container(std::span<const std::byte> bytes);

// Writes to a sibling temp file and renames it into place.
void write_container(const TensorMap& tensors, const Metadata& metadata,
                     const std::filesystem::path& path);

Container read_container(const std::filesystem::path& path);

// Entry table only; used by tooling that lists a container without loading it.
std::vector<Entry> read_entries(const std::filesystem::path& path);

// Atomic whole-file write shared by everything that emits reports.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& text);

std::vector<std::byte> read_file(const std::filesystem::path& path);

}  // namespace kairos::checkpoint
