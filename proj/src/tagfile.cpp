#include "lunabell/tagfile.hpp"

#include <algorithm>
#include <cstring>
#include <fmt/format.h>

namespace lunabell::tagstream {

namespace {

constexpr std::size_t kBufferRecords = 1 << 14;

void put_u32(unsigned char *p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    p[i] = static_cast<unsigned char>(v >> (8 * i));
}
void put_u64(unsigned char *p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    p[i] = static_cast<unsigned char>(v >> (8 * i));
}
std::uint32_t get_u32(const unsigned char *p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | p[i];
  return v;
}
std::uint64_t get_u64(const unsigned char *p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | p[i];
  return v;
}

} // namespace

TagFileError::TagFileError(Kind kind, std::uint64_t byte_offset, const std::string &what)
    : Error(fmt::format("{} (offset {}): {}", to_string(kind), byte_offset, what)), kind_(kind),
      offset_(byte_offset) {}

std::string_view to_string(TagFileError::Kind kind) {
  using K = TagFileError::Kind;
  switch (kind) {
  case K::io: return "i/o error";
  case K::bad_magic: return "bad magic";
  case K::bad_version: return "unsupported version";
  case K::truncated_record: return "truncated record";
  case K::time_order: return "time-order violation";
  case K::bad_channel: return "invalid channel";
  }
  return "unknown";
}

TagReader::TagReader(const std::filesystem::path &path) : path_(path), in_(path, std::ios::binary) {
  if (!in_)
    throw TagFileError(TagFileError::Kind::io, 0, fmt::format("cannot open {}", path.string()));
  std::array<unsigned char, kTagHeaderBytes> header{};
  in_.read(reinterpret_cast<char *>(header.data()), header.size());
  if (in_.gcount() != static_cast<std::streamsize>(header.size()) ||
      !std::equal(kTagFileMagic.begin(), kTagFileMagic.end(), header.begin(),
                  [](char m, unsigned char h) { return static_cast<unsigned char>(m) == h; }))
    throw TagFileError(TagFileError::Kind::bad_magic, 0, path.string());
  const auto version = get_u32(header.data() + 8);
  if (version != kTagFileVersion)
    throw TagFileError(TagFileError::Kind::bad_version, 8,
                       fmt::format("{} has version {}, expected {}", path.string(), version, kTagFileVersion));
  buf_.resize(kBufferRecords * kTagRecordBytes);
}

bool TagReader::refill() {
  // Carry over any partial record left at the end of the buffer.
  const std::size_t rest = len_ - pos_;
  std::memmove(buf_.data(), buf_.data() + pos_, rest);
  in_.read(reinterpret_cast<char *>(buf_.data() + rest), static_cast<std::streamsize>(buf_.size() - rest));
  len_ = rest + static_cast<std::size_t>(in_.gcount());
  pos_ = 0;
  return len_ > rest;
}

std::optional<TimeTag> TagReader::next() {
  if (len_ - pos_ < kTagRecordBytes) {
    refill();
    if (len_ == 0)
      return std::nullopt;
    if (len_ < kTagRecordBytes)
      throw TagFileError(TagFileError::Kind::truncated_record, offset_,
                         fmt::format("{} ends {} bytes into a record", path_.string(), len_));
  }
  const unsigned char *rec = buf_.data() + pos_;
  TimeTag tag{get_u64(rec), rec[8], rec[9]};
  if (tag.channel >= channel::limit)
    throw TagFileError(TagFileError::Kind::bad_channel, offset_,
                       fmt::format("channel {} >= {}", tag.channel, channel::limit));
  if (records_ > 0 && tag.time_ps < last_)
    throw TagFileError(TagFileError::Kind::time_order, offset_,
                       fmt::format("time {} ps after {} ps", tag.time_ps, last_));
  last_ = tag.time_ps;
  pos_ += kTagRecordBytes;
  offset_ += kTagRecordBytes;
  ++records_;
  return tag;
}

TagWriter::TagWriter(const std::filesystem::path &path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_)
    throw TagFileError(TagFileError::Kind::io, 0, fmt::format("cannot create {}", path.string()));
  std::array<unsigned char, kTagHeaderBytes> header{};
  std::copy(kTagFileMagic.begin(), kTagFileMagic.end(), header.begin());
  put_u32(header.data() + 8, kTagFileVersion);
  out_.write(reinterpret_cast<const char *>(header.data()), header.size());
  buf_.reserve(kBufferRecords * kTagRecordBytes);
}

TagWriter::~TagWriter() {
  try {
    close();
  } catch (...) {
  }
}

void TagWriter::write(const TimeTag &tag) {
  const std::uint64_t offset = kTagHeaderBytes + records_ * kTagRecordBytes;
  if (records_ > 0 && tag.time_ps < last_)
    throw TagFileError(TagFileError::Kind::time_order, offset,
                       fmt::format("refusing to write {} ps after {} ps", tag.time_ps, last_));
  if (tag.channel >= channel::limit)
    throw TagFileError(TagFileError::Kind::bad_channel, offset, fmt::format("channel {}", tag.channel));
  std::array<unsigned char, kTagRecordBytes> rec{};
  put_u64(rec.data(), tag.time_ps);
  rec[8] = tag.channel;
  rec[9] = tag.flags;
  buf_.insert(buf_.end(), rec.begin(), rec.end());
  if (buf_.size() >= kBufferRecords * kTagRecordBytes)
    flush();
  last_ = tag.time_ps;
  ++records_;
}

void TagWriter::flush() {
  out_.write(reinterpret_cast<const char *>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  buf_.clear();
  if (!out_)
    throw TagFileError(TagFileError::Kind::io, kTagHeaderBytes + records_ * kTagRecordBytes,
                       fmt::format("write failed on {}", path_.string()));
}

void TagWriter::close() {
  if (closed_)
    return;
  closed_ = true;
  flush();
  out_.close();
  if (!out_)
    throw TagFileError(TagFileError::Kind::io, 0, fmt::format("close failed on {}", path_.string()));
}

void write_tags(const std::filesystem::path &path, std::span<const TimeTag> stream) {
  TagWriter w(path);
  for (const auto &t : stream)
    w.write(t);
  w.close();
}

std::vector<TimeTag> read_tags(const std::filesystem::path &path) {
  TagReader r(path);
  std::vector<TimeTag> out;
  while (auto t = r.next())
    out.push_back(*t);
  return out;
}

} // namespace lunabell::tagstream
