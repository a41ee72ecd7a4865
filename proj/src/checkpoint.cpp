#include "mmpred/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "mmpred/error.hpp"
#include "mmpred/layers.hpp"

namespace mmpred::num {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw pipeline_error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw pipeline_error("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.rows()));
    write_pod(os, static_cast<uint32_t>(t.cols()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw pipeline_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pipeline_error("checkpoint: cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw pipeline_error("checkpoint: bad magic in " + path);
  }
  uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion) {
    throw pipeline_error("checkpoint: unsupported version " + std::to_string(version));
  }
  uint64_t count = 0;
  read_pod(is, count);
  Checkpoint ck;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rows = 0, cols = 0;
    read_pod(is, rows);
    read_pod(is, cols);
    std::vector<double> data(static_cast<size_t>(rows) * cols);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw pipeline_error("checkpoint: truncated file " + path);
    ck.entries[name] = Tensor::from_vec(static_cast<int>(rows), static_cast<int>(cols),
                                        std::move(data));
  }
  return ck;
}

void Checkpoint::restore(const std::vector<NamedParam>& params) const {
  for (const auto& [name, p] : params) {
    const Tensor& src = get(name);
    if (src.rows() != p.rows() || src.cols() != p.cols()) {
      throw pipeline_error("checkpoint: shape mismatch for '" + name + "'");
    }
    Tensor dst = p;
    std::copy(src.data(), src.data() + src.size(), dst.data());
  }
}

Checkpoint Checkpoint::capture(const std::vector<NamedParam>& params) {
  Checkpoint ck;
  for (const auto& [name, p] : params) ck.put(name, p);
  return ck;
}

}  // namespace mmpred::num
