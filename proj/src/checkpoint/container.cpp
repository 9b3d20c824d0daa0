#include "kairos/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <unistd.h>

#include <json.hpp>

#include "kairos/error.hpp"

namespace kairos::checkpoint {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <typename T>
void put(std::vector<std::byte>& out, T v) {
  const auto le = to_little(v);
  const auto* p = reinterpret_cast<const std::byte*>(&le);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::byte> bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return to_little(v);
}

std::uint64_t align_up(std::uint64_t v) {
  return (v + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

// Product of extents with overflow detection; nullopt when it cannot be
// represented as a byte length.
std::optional<std::uint64_t> checked_byte_length(const Shape& shape) {
  std::uint64_t n = sizeof(float);
  for (auto e : shape) {
    if (e == 0) return std::nullopt;
    if (n > std::numeric_limits<std::uint64_t>::max() / e) return std::nullopt;
    n *= e;
  }
  return n;
}

struct ParsedHeader {
  Metadata metadata;
  std::vector<Entry> entries;
  std::size_t payload_start = 0;
  std::size_t payload_size = 0;
};

ParsedHeader parse_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kPreambleBytes) {
    throw FormatError("container too short for preamble (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), "KAIR", 4) != 0) {
    throw FormatError("bad magic: expected \"KAIR\"");
  }
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kFormatVersion) {
    throw FormatError("unsupported container format_version " +
                      std::to_string(version));
  }
  const auto header_length = get<std::uint64_t>(bytes, 8);
  if (header_length > bytes.size() - kPreambleBytes) {
    throw CorruptionError("header length " + std::to_string(header_length) +
                          " exceeds file size");
  }

  ParsedHeader parsed;
  parsed.payload_start = kPreambleBytes + static_cast<std::size_t>(header_length);
  parsed.payload_size = bytes.size() - parsed.payload_start;

  const auto* text = reinterpret_cast<const char*>(bytes.data() + kPreambleBytes);
  json header;
  try {
    header = json::parse(text, text + header_length);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("entries") ||
      !header.contains("metadata")) {
    throw FormatError("header must be an object with \"entries\" and \"metadata\"");
  }
  const auto& meta = header["metadata"];
  const auto& entries = header["entries"];
  if (!meta.is_object()) throw FormatError("header metadata must be an object");
  if (!entries.is_array()) throw FormatError("header entries must be an array");

  for (const auto& [key, value] : meta.items()) {
    if (!value.is_string()) {
      throw FormatError("metadata value for \"" + key + "\" is not a string");
    }
    parsed.metadata.emplace(key, value.get<std::string>());
  }

  std::set<std::string> names;
  for (const auto& item : entries) {
    if (!item.is_object()) throw FormatError("entry is not an object");
    const auto name_it = item.find("name");
    const auto shape_it = item.find("shape");
    const auto offset_it = item.find("offset");
    const auto length_it = item.find("length");
    if (name_it == item.end() || !name_it->is_string() || shape_it == item.end() ||
        !shape_it->is_array() || offset_it == item.end() ||
        !offset_it->is_number_unsigned() || length_it == item.end() ||
        !length_it->is_number_unsigned()) {
      throw FormatError("entry missing name/shape/offset/length or wrong type");
    }
    Entry entry;
    entry.name = name_it->get<std::string>();
    if (entry.name.empty()) throw FormatError("entry with empty name");
    if (!names.insert(entry.name).second) {
      throw FormatError("duplicate entry name \"" + entry.name + "\"");
    }
    if (shape_it->empty()) {
      throw FormatError("entry \"" + entry.name + "\" has rank 0");
    }
    for (const auto& e : *shape_it) {
      if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0) {
        throw FormatError("entry \"" + entry.name + "\" has a non-positive extent");
      }
      entry.shape.push_back(e.get<std::size_t>());
    }
    entry.offset = offset_it->get<std::uint64_t>();
    entry.length = length_it->get<std::uint64_t>();
    const auto expected = checked_byte_length(entry.shape);
    if (!expected || *expected != entry.length) {
      throw FormatError("entry \"" + entry.name + "\" length " +
                        std::to_string(entry.length) + " != 4 x product(shape)");
    }
    if (entry.offset % kPayloadAlignment != 0) {
      throw FormatError("entry \"" + entry.name + "\" offset is not 8-byte aligned");
    }
    if (entry.offset > parsed.payload_size ||
        entry.length > parsed.payload_size - entry.offset) {
      throw CorruptionError("entry \"" + entry.name +
                            "\" extends past end of payload (truncated file?)");
    }
    parsed.entries.push_back(std::move(entry));
  }

  std::vector<const Entry*> by_offset;
  for (const auto& e : parsed.entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < by_offset.size(); ++i) {
    const auto* prev = by_offset[i - 1];
    if (prev->offset + prev->length > by_offset[i]->offset) {
      throw FormatError("entries \"" + prev->name + "\" and \"" +
                        by_offset[i]->name + "\" overlap");
    }
  }
  const std::uint64_t end =
      by_offset.empty() ? 0 : by_offset.back()->offset + by_offset.back()->length;
  if (end != parsed.payload_size) {
    throw FormatError("payload has " + std::to_string(parsed.payload_size - end) +
                      " trailing bytes");
  }
  return parsed;
}

}  // namespace

std::vector<std::byte> encode_container(const TensorMap& tensors,
                                        const Metadata& metadata) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    if (name.empty()) throw FormatError("tensor names must be non-empty");
    if (tensor.empty()) {
      throw DimensionError("tensor \"" + name + "\" has no data");
    }
    offset = align_up(offset);
    const std::uint64_t length = tensor.numel() * sizeof(float);
    entries.push_back({{"name", name},
                       {"shape", tensor.shape()},
                       {"offset", offset},
                       {"length", length}});
    offset += length;
  }
  json meta = json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  const json header = {{"metadata", meta}, {"entries", entries}};
  const std::string text = header.dump();

  std::vector<std::byte> out;
  out.reserve(kPreambleBytes + text.size() + offset);
  for (char c : std::string_view("KAIR")) out.push_back(static_cast<std::byte>(c));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, text.size());
  for (char c : text) out.push_back(static_cast<std::byte>(c));

  const std::size_t payload_start = out.size();
  for (const auto& [name, tensor] : tensors) {
    const std::size_t pos = align_up(out.size() - payload_start) + payload_start;
    out.resize(pos, std::byte{0});
    for (float v : tensor.data()) put<float>(out, v);
  }
  return out;
}

Container decode_container(std::span<const std::byte> bytes) {
  const ParsedHeader header = parse_header(bytes);
  Container result;
  result.metadata = header.metadata;
  for (const auto& entry : header.entries) {
    std::vector<float> values(entry.length / sizeof(float));
    const std::size_t base = header.payload_start + entry.offset;
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = get<float>(bytes, base + i * sizeof(float));
    }
    result.tensors.emplace(entry.name, Tensor(entry.shape, std::move(values)));
  }
  return result;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw IoError("cannot size " + path.string());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  if (!bytes.empty() &&
      !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("short read on " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> bytes) {
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

void write_container(const TensorMap& tensors, const Metadata& metadata,
                     const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(tensors, metadata));
}

Container read_container(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_container(bytes);
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<Entry> read_entries(const std::filesystem::path& path) {
  return parse_header(read_file(path)).entries;
}

}  // namespace kairos::checkpoint
