#include "unlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace unlab {

namespace {

constexpr char kMagic[8] = {'U', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T x) {
  os.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T x{};
  is.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
  return x;
}

void put_str(std::ostream& os, const std::string& s) {
  put<uint16_t>(os, uint16_t(s.size()));
  os.write(s.data(), long(s.size()));
}

std::string get_str(std::istream& is) {
  uint16_t n = get<uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
  return s;
}

void put_values(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.v.data()), long(t.size() * sizeof(double)));
}

void get_values(std::istream& is, Tensor& t) {
  is.read(reinterpret_cast<char*>(t.v.data()), long(t.size() * sizeof(double)));
  if (!is) throw std::runtime_error("corrupt checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const LanguageModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kVersion);
  put_str(os, model.backend());
  put<uint64_t>(os, model.vocab().hash());
  const ParamStore& ps = model.params();
  put<int64_t>(os, ps.step);
  put<uint32_t>(os, uint32_t(ps.names.size()));
  for (const auto& name : ps.names) {
    const Tensor& t = ps.at(name);
    put_str(os, name);
    put<uint32_t>(os, uint32_t(t.rows));
    put<uint32_t>(os, uint32_t(t.cols));
    put_values(os, t);
  }
  put<uint8_t>(os, 1);
  for (const auto& name : ps.names) put_values(os, ps.m.at(name));
  for (const auto& name : ps.names) put_values(os, ps.v.at(name));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(LanguageModel& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch: got " + std::to_string(version) +
                             ", expected " + std::to_string(kVersion));
  std::string backend = get_str(is);
  if (backend != model.backend())
    throw std::runtime_error("checkpoint backend mismatch: file has '" + backend +
                             "', model is '" + model.backend() + "'");
  uint64_t vhash = get<uint64_t>(is);
  if (vhash != model.vocab().hash())
    throw std::runtime_error("checkpoint vocab hash mismatch: " + path);
  ParamStore& ps = model.params();
  ps.step = get<int64_t>(is);
  uint32_t n = get<uint32_t>(is);
  if (n != ps.names.size())
    throw std::runtime_error("checkpoint tensor count mismatch: " + path);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = get_str(is);
    uint32_t rows = get<uint32_t>(is);
    uint32_t cols = get<uint32_t>(is);
    Tensor& t = ps.at(name);
    if (int(rows) != t.rows || int(cols) != t.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    get_values(is, t);
  }
  uint8_t has_moments = get<uint8_t>(is);
  if (has_moments) {
    for (const auto& name : ps.names) get_values(is, ps.m.at(name));
    for (const auto& name : ps.names) get_values(is, ps.v.at(name));
  }
}

}  // namespace unlab
