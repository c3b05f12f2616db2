#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace defsynth::zipa {

/// Writes a ZIP archive with stored (uncompressed) entries.
class ZipWriter {
 public:
  explicit ZipWriter(const std::string& path);
  ~ZipWriter();
  ZipWriter(const ZipWriter&) = delete;
  ZipWriter& operator=(const ZipWriter&) = delete;

  void add(const std::string& name, const std::vector<unsigned char>& bytes);
  void add_text(const std::string& name, const std::string& text);

  /// Writes the central directory and closes the file. Called by the
  /// destructor if not invoked explicitly.
  void finish();

 private:
  struct Entry {
    std::string name;
    uint32_t crc;
    uint32_t size;
    uint32_t offset;
  };
  std::string path_;
  void* file_ = nullptr;
  std::vector<Entry> entries_;
  bool finished_ = false;
};

/// Reads ZIP archives produced by ZipWriter (stored entries only).
class ZipReader {
 public:
  explicit ZipReader(const std::string& path);

  const std::vector<std::string>& names() const { return names_; }
  bool has(const std::string& name) const;

  /// Extracts one entry; throws on unknown name or CRC mismatch.
  std::vector<unsigned char> read(const std::string& name) const;
  std::string read_text(const std::string& name) const;

 private:
  struct Entry {
    uint32_t crc;
    uint32_t size;
    uint32_t offset;
  };
  std::string path_;
  std::vector<std::string> names_;
  std::vector<Entry> entries_;
};

}  // namespace defsynth::zipa
