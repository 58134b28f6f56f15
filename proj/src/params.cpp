#include "recontour/model/params.hpp"

#include <cstring>
#include <fstream>

namespace recontour::model {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'W', 'T', 'F', 'I', 'L', 'E'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_params(const std::string& path, const ParamStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kMagic, 8);
  put<uint32_t>(f, kVersion);
  put<uint32_t>(f, static_cast<uint32_t>(store.names.size()));
  uint64_t offset = 0;
  for (size_t i = 0; i < store.names.size(); ++i) {
    const std::string& name = store.names[i];
    const auto& a = store.arrays[i];
    put<uint16_t>(f, static_cast<uint16_t>(name.size()));
    f.write(name.data(), static_cast<long>(name.size()));
    put<uint8_t>(f, 0);  // dtype f32
    put<uint8_t>(f, static_cast<uint8_t>(a.rank()));
    for (int d = 0; d < a.rank(); ++d) put<uint32_t>(f, static_cast<uint32_t>(a.dim(d)));
    put<uint64_t>(f, offset);
    offset += static_cast<uint64_t>(a.numel()) * sizeof(float);
  }
  for (const auto& a : store.arrays)
    f.write(reinterpret_cast<const char*>(a.data()),
            static_cast<long>(sizeof(float)) * a.numel());
  if (!f) throw std::runtime_error("write failed: " + path);
}

void load_params_into(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a weight file");
  const uint32_t version = get<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported weight file version " +
                             std::to_string(version));
  const uint32_t count = get<uint32_t>(f);
  if (count != store.names.size())
    throw std::runtime_error(path + ": tensor count mismatch");
  struct Entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset;
  };
  std::vector<Entry> dir(count);
  for (auto& e : dir) {
    const uint16_t len = get<uint16_t>(f);
    e.name.resize(len);
    f.read(e.name.data(), len);
    const uint8_t dtype = get<uint8_t>(f);
    if (dtype != 0) throw std::runtime_error(path + ": unsupported dtype");
    const uint8_t rank = get<uint8_t>(f);
    e.shape.resize(rank);
    for (auto& d : e.shape) d = static_cast<int>(get<uint32_t>(f));
    e.offset = get<uint64_t>(f);
  }
  const std::streampos payload = f.tellg();
  for (const auto& e : dir) {
    if (!store.has(e.name)) throw std::runtime_error(path + ": unexpected tensor " + e.name);
    auto& a = store.get(e.name);
    if (a.shape != e.shape) throw std::runtime_error(path + ": shape mismatch for " + e.name);
    f.seekg(payload + static_cast<std::streamoff>(e.offset));
    f.read(reinterpret_cast<char*>(a.data()), static_cast<long>(sizeof(float)) * a.numel());
  }
  if (!f) throw std::runtime_error(path + ": truncated weight file");
}

}  // namespace recontour::model
