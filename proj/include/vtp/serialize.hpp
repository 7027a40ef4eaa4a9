#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtp/tensor.hpp"

namespace vtp {

// Flat archive of named double arrays plus a text metadata record.
// On disk: magic, metadata JSON, then per entry the name, the shape and a
// little-endian 64-bit float payload. Doubles round-trip bitwise.
class Archive {
 public:
  struct Entry {
    Shape shape;
    std::vector<double> data;
  };

  void put(const std::string& name, Shape shape, std::vector<double> data);
  void put_scalar(const std::string& name, double value);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& words);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  std::vector<std::string> names() const;
  void erase(const std::string& name);

  void save(const std::string& path, const std::string& metadata) const;
  // Returns the archive and its metadata record.
  static std::pair<Archive, std::string> load(const std::string& path);

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace vtp
