#pragma once

#include "lunabell/errors.hpp"
#include "lunabell/tagstream.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace lunabell::tagstream {

// On-disk layout (all integers little-endian):
//   header, 16 bytes:  "LBTAGS\r\n" magic, u32 version, u32 reserved (0)
//   record, 16 bytes:  u64 time_ps, u8 channel, u8 flags, 6 reserved bytes (0)
inline constexpr std::array<char, 8> kTagFileMagic{'L', 'B', 'T', 'A', 'G', 'S', '\r', '\n'};
inline constexpr std::uint32_t kTagFileVersion = 1;
inline constexpr std::size_t kTagHeaderBytes = 16;
inline constexpr std::size_t kTagRecordBytes = 16;

class TagFileError : public Error {
public:
  enum class Kind { io, bad_magic, bad_version, truncated_record, time_order, bad_channel };

  TagFileError(Kind kind, std::uint64_t byte_offset, const std::string &what);
  Kind kind() const { return kind_; }
  std::uint64_t byte_offset() const { return offset_; }

private:
  Kind kind_;
  std::uint64_t offset_;
};

std::string_view to_string(TagFileError::Kind kind);

/// Buffered sequential reader; validates every record as it is decoded.
class TagReader {
public:
  explicit TagReader(const std::filesystem::path &path);

  std::optional<TimeTag> next();
  std::uint64_t records_read() const { return records_; }

private:
  bool refill();

  std::filesystem::path path_;
  std::ifstream in_;
  std::vector<unsigned char> buf_;
  std::size_t pos_{0};
  std::size_t len_{0};
  std::uint64_t offset_{kTagHeaderBytes};
  std::uint64_t records_{0};
  Picoseconds last_{0};
};

/// Buffered sequential writer; rejects out-of-order tags.
class TagWriter {
public:
  explicit TagWriter(const std::filesystem::path &path);
  ~TagWriter();
  TagWriter(const TagWriter &) = delete;
  TagWriter &operator=(const TagWriter &) = delete;

  void write(const TimeTag &tag);
  void close();

private:
  void flush();

  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<unsigned char> buf_;
  std::uint64_t records_{0};
  Picoseconds last_{0};
  bool closed_{false};
};

void write_tags(const std::filesystem::path &path, std::span<const TimeTag> stream);
std::vector<TimeTag> read_tags(const std::filesystem::path &path);

} // namespace lunabell::tagstream
