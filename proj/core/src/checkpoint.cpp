#include "stsgr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace stsgr {

namespace {

constexpr char kMagic[6] = {'S', 'T', 'S', 'G', 'R', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

void write_f64(std::ostream& os, double d) { write_u64(os, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, std::span<const NamedParam> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  for (const auto& p : params) {
    write_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u64(os, p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) write_u64(os, d);
    for (double v : p.tensor.values()) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<NamedParam> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not an STSGR1 file");
  std::vector<NamedParam> out;
  while (is.peek() != std::ifstream::traits_type::eof()) {
    const std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint: truncated name in " + path);
    const std::uint64_t rank = read_u64(is);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = read_u64(is);
      count *= d;
    }
    std::vector<double> values(count);
    for (auto& v : values) v = read_f64(is);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void load_checkpoint_into(const std::string& path, std::span<NamedParam> params) {
  auto loaded = load_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (auto& p : loaded) by_name.emplace(p.name, p.tensor);
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing parameter '" + p.name + "' in " + path);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': file " +
                               shape_str(it->second.shape()) + " vs model " +
                               shape_str(p.tensor.shape()));
    auto dst = p.tensor.values_mut();
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("checkpoint: unexpected extra parameter '" +
                             by_name.begin()->first + "' in " + path);
}

}  // namespace stsgr
