#include "defsynth/ziparchive.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace defsynth::zipa {

namespace {

constexpr uint32_t kLocalSig = 0x04034b50;
constexpr uint32_t kCentralSig = 0x02014b50;
constexpr uint32_t kEndSig = 0x06054b50;

void put16(std::vector<unsigned char>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

void put32(std::vector<unsigned char>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

uint16_t get16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void fwrite_all(std::FILE* f, const void* data, size_t n, const std::string& path) {
  if (n && std::fwrite(data, 1, n, f) != n)
    throw std::runtime_error("zip: short write to " + path);
}

}  // namespace

ZipWriter::ZipWriter(const std::string& path) : path_(path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("zip: cannot open for writing: " + path);
  file_ = f;
}

ZipWriter::~ZipWriter() {
  try {
    finish();
  } catch (...) {
    if (file_) std::fclose(static_cast<std::FILE*>(file_));
    file_ = nullptr;
  }
}

void ZipWriter::add(const std::string& name, const std::vector<unsigned char>& bytes) {
  if (finished_) throw std::logic_error("zip: add after finish");
  if (name.empty() || name.size() > 0xffff) throw std::invalid_argument("zip: bad entry name");
  for (const Entry& e : entries_)
    if (e.name == name) throw std::invalid_argument("zip: duplicate entry '" + name + "'");
  if (bytes.size() > 0xffffffffu) throw std::invalid_argument("zip: entry too large");

  std::FILE* f = static_cast<std::FILE*>(file_);
  long pos = std::ftell(f);
  if (pos < 0) throw std::runtime_error("zip: ftell failed on " + path_);

  Entry e;
  e.name = name;
  e.crc = static_cast<uint32_t>(
      crc32(0L, bytes.empty() ? Z_NULL : bytes.data(), static_cast<uInt>(bytes.size())));
  e.size = static_cast<uint32_t>(bytes.size());
  e.offset = static_cast<uint32_t>(pos);

  std::vector<unsigned char> hdr;
  put32(hdr, kLocalSig);
  put16(hdr, 20);      // version needed
  put16(hdr, 0);       // flags
  put16(hdr, 0);       // method: stored
  put16(hdr, 0);       // mod time
  put16(hdr, 0);       // mod date
  put32(hdr, e.crc);
  put32(hdr, e.size);  // compressed
  put32(hdr, e.size);  // uncompressed
  put16(hdr, static_cast<uint16_t>(name.size()));
  put16(hdr, 0);       // extra length
  fwrite_all(f, hdr.data(), hdr.size(), path_);
  fwrite_all(f, name.data(), name.size(), path_);
  fwrite_all(f, bytes.data(), bytes.size(), path_);
  entries_.push_back(std::move(e));
}

void ZipWriter::add_text(const std::string& name, const std::string& text) {
  add(name, std::vector<unsigned char>(text.begin(), text.end()));
}

void ZipWriter::finish() {
  if (finished_ || !file_) return;
  std::FILE* f = static_cast<std::FILE*>(file_);
  long dir_start = std::ftell(f);
  if (dir_start < 0) throw std::runtime_error("zip: ftell failed on " + path_);

  for (const Entry& e : entries_) {
    std::vector<unsigned char> hdr;
    put32(hdr, kCentralSig);
    put16(hdr, 20);  // made by
    put16(hdr, 20);  // needed
    put16(hdr, 0);
    put16(hdr, 0);
    put16(hdr, 0);
    put16(hdr, 0);
    put32(hdr, e.crc);
    put32(hdr, e.size);
    put32(hdr, e.size);
    put16(hdr, static_cast<uint16_t>(e.name.size()));
    put16(hdr, 0);  // extra
    put16(hdr, 0);  // comment
    put16(hdr, 0);  // disk
    put16(hdr, 0);  // internal attrs
    put32(hdr, 0);  // external attrs
    put32(hdr, e.offset);
    fwrite_all(f, hdr.data(), hdr.size(), path_);
    fwrite_all(f, e.name.data(), e.name.size(), path_);
  }

  long dir_end = std::ftell(f);
  std::vector<unsigned char> eocd;
  put32(eocd, kEndSig);
  put16(eocd, 0);
  put16(eocd, 0);
  put16(eocd, static_cast<uint16_t>(entries_.size()));
  put16(eocd, static_cast<uint16_t>(entries_.size()));
  put32(eocd, static_cast<uint32_t>(dir_end - dir_start));
  put32(eocd, static_cast<uint32_t>(dir_start));
  put16(eocd, 0);  // comment length
  fwrite_all(f, eocd.data(), eocd.size(), path_);

  finished_ = true;
  std::fclose(f);
  file_ = nullptr;
}

ZipReader::ZipReader(const std::string& path) : path_(path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("zip: cannot open: " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  if (std::fseek(f, 0, SEEK_END) != 0) throw std::runtime_error("zip: seek failed: " + path);
  long file_size = std::ftell(f);
  if (file_size < 22) throw std::runtime_error("zip: file too small: " + path);

  // The end record allows a trailing comment; scan backwards for its signature.
  long scan = std::min<long>(file_size, 22 + 0xffff);
  std::vector<unsigned char> tail(static_cast<size_t>(scan));
  if (std::fseek(f, file_size - scan, SEEK_SET) != 0 ||
      std::fread(tail.data(), 1, tail.size(), f) != tail.size())
    throw std::runtime_error("zip: cannot read end of " + path);
  long eocd = -1;
  for (long i = scan - 22; i >= 0; --i)
    if (get32(tail.data() + i) == kEndSig) {
      eocd = i;
      break;
    }
  if (eocd < 0) throw std::runtime_error("zip: end record not found in " + path);

  uint16_t count = get16(tail.data() + eocd + 10);
  uint32_t dir_size = get32(tail.data() + eocd + 12);
  uint32_t dir_off = get32(tail.data() + eocd + 16);
  if (static_cast<long>(dir_off) + static_cast<long>(dir_size) > file_size)
    throw std::runtime_error("zip: central directory out of bounds in " + path);

  std::vector<unsigned char> dir(dir_size);
  if (std::fseek(f, static_cast<long>(dir_off), SEEK_SET) != 0 ||
      std::fread(dir.data(), 1, dir.size(), f) != dir.size())
    throw std::runtime_error("zip: cannot read central directory of " + path);

  size_t p = 0;
  for (uint16_t i = 0; i < count; ++i) {
    if (p + 46 > dir.size() || get32(dir.data() + p) != kCentralSig)
      throw std::runtime_error("zip: corrupt central directory in " + path);
    uint16_t method = get16(dir.data() + p + 10);
    if (method != 0) throw std::runtime_error("zip: unsupported compression method in " + path);
    Entry e;
    e.crc = get32(dir.data() + p + 16);
    e.size = get32(dir.data() + p + 24);
    e.offset = get32(dir.data() + p + 42);
    uint16_t name_len = get16(dir.data() + p + 28);
    uint16_t extra_len = get16(dir.data() + p + 30);
    uint16_t comment_len = get16(dir.data() + p + 32);
    if (p + 46 + name_len > dir.size())
      throw std::runtime_error("zip: corrupt central directory in " + path);
    names_.emplace_back(reinterpret_cast<const char*>(dir.data() + p + 46), name_len);
    entries_.push_back(e);
    p += 46 + name_len + extra_len + comment_len;
  }
}

bool ZipReader::has(const std::string& name) const {
  for (const std::string& n : names_)
    if (n == name) return true;
  return false;
}

std::vector<unsigned char> ZipReader::read(const std::string& name) const {
  size_t idx = names_.size();
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) {
      idx = i;
      break;
    }
  if (idx == names_.size()) throw std::runtime_error("zip: no entry '" + name + "' in " + path_);
  const Entry& e = entries_[idx];

  std::FILE* f = std::fopen(path_.c_str(), "rb");
  if (!f) throw std::runtime_error("zip: cannot open: " + path_);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  unsigned char hdr[30];
  if (std::fseek(f, static_cast<long>(e.offset), SEEK_SET) != 0 ||
      std::fread(hdr, 1, 30, f) != 30 || get32(hdr) != kLocalSig)
    throw std::runtime_error("zip: corrupt local header for '" + name + "' in " + path_);
  uint16_t name_len = get16(hdr + 26);
  uint16_t extra_len = get16(hdr + 28);
  if (std::fseek(f, name_len + extra_len, SEEK_CUR) != 0)
    throw std::runtime_error("zip: corrupt local header for '" + name + "' in " + path_);

  std::vector<unsigned char> bytes(e.size);
  if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size())
    throw std::runtime_error("zip: truncated entry '" + name + "' in " + path_);

  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, bytes.empty() ? Z_NULL : bytes.data(), static_cast<uInt>(bytes.size())));
  if (crc != e.crc)
    throw std::runtime_error("zip: checksum mismatch for '" + name + "' in " + path_);
  return bytes;
}

std::string ZipReader::read_text(const std::string& name) const {
  std::vector<unsigned char> b = read(name);
  return std::string(b.begin(), b.end());
}

}  // namespace defsynth::zipa
