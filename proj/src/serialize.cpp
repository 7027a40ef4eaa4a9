#include "vtp/serialize.hpp"

#include <cstring>
#include <fstream>

#include "vtp/errors.hpp"

namespace vtp {

namespace {

constexpr char kMagic[8] = {'V', 'T', 'P', 'A', 'R', 'C', 'H', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw ParseError("archive: truncated word");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

void write_double(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  write_u64(os, bits);
}

double read_double(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace

void Archive::put(const std::string& name, Shape shape,
                  std::vector<double> data) {
  if (shape_size(shape) != data.size())
    throw ContractError("archive: shape/data mismatch for " + name);
  entries_[name] = Entry{std::move(shape), std::move(data)};
}

void Archive::put_scalar(const std::string& name, double value) {
  put(name, {1}, {value});
}

void Archive::put_u64(const std::string& name,
                      const std::vector<std::uint64_t>& words) {
  std::vector<double> data(words.size());
  std::memcpy(data.data(), words.data(), words.size() * sizeof(double));
  put(name, {words.size()}, std::move(data));
}

bool Archive::has(const std::string& name) const {
  return entries_.count(name) > 0;
}

const Archive::Entry& Archive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw ParseError("archive: missing entry '" + name + "'");
  return it->second;
}

double Archive::get_scalar(const std::string& name) const {
  const Entry& e = get(name);
  if (e.data.size() != 1)
    throw ParseError("archive: '" + name + "' is not a scalar");
  return e.data[0];
}

std::vector<std::uint64_t> Archive::get_u64(const std::string& name) const {
  const Entry& e = get(name);
  std::vector<std::uint64_t> words(e.data.size());
  std::memcpy(words.data(), e.data.data(), words.size() * sizeof(double));
  return words;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

void Archive::erase(const std::string& name) { entries_.erase(name); }

void Archive::save(const std::string& path, const std::string& metadata) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, metadata.size());
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  write_u64(os, entries_.size());
  for (const auto& [name, entry] : entries_) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, entry.shape.size());
    for (std::size_t e : entry.shape) write_u64(os, e);
    for (double d : entry.data) write_double(os, d);
  }
  if (!os) throw IoError("failed while writing " + path);
}

std::pair<Archive, std::string> Archive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError("archive: bad magic in " + path);
  const std::uint64_t meta_len = read_u64(is);
  std::string metadata(meta_len, '\0');
  is.read(metadata.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw ParseError("archive: truncated metadata in " + path);
  const std::uint64_t count = read_u64(is);
  Archive archive;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64(is);
    if (name_len > (1u << 20))
      throw ParseError("archive: implausible entry name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw ParseError("archive: truncated entry name");
    const std::uint64_t rank = read_u64(is);
    if (rank > 16) throw ParseError("archive: implausible rank");
    Shape shape(rank);
    for (std::uint64_t r = 0; r < rank; ++r)
      shape[r] = static_cast<std::size_t>(read_u64(is));
    std::vector<double> data(shape_size(shape));
    for (double& d : data) d = read_double(is);
    archive.entries_[name] = Entry{std::move(shape), std::move(data)};
  }
  return {std::move(archive), std::move(metadata)};
}

}  // namespace vtp
