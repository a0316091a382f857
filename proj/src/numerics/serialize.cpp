#include "marrprobe/numerics/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace marrprobe::numerics {

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
}

}  // namespace

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  nlohmann::json header = {{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}};
  os << header.dump() << '\n';
  std::vector<std::uint32_t> words(t.numel());
  for (std::size_t i = 0; i < words.size(); ++i) {
    words[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(t.at(i))));
  }
  os.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!os) throw IoError("failed writing tensor '" + name + "'");
}

bool read_tensor(std::istream& is, NamedTensor& out, DType dtype) {
  std::string line;
  if (!std::getline(is, line)) return false;
  if (line.empty()) return false;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed tensor header: ") + e.what());
  }
  if (!header.contains("name") || !header.contains("shape") || header.value("dtype", "") != "f32") {
    throw IoError("tensor header missing name/shape or dtype != f32: " + line);
  }
  Shape shape = header["shape"].get<Shape>();
  std::vector<std::uint32_t> words(numel(shape));
  is.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (static_cast<std::size_t>(is.gcount()) != words.size() * 4) {
    throw IoError("truncated tensor data for '" + header["name"].get<std::string>() + "'");
  }
  Tensor t = Tensor::zeros(shape, dtype);
  for (std::size_t i = 0; i < words.size(); ++i) t.set(i, std::bit_cast<float>(to_le(words[i])));
  out.name = header["name"].get<std::string>();
  out.tensor = t;
  return true;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const NamedTensor& nt : tensors) write_tensor(os, nt.name, nt.tensor);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path, DType dtype) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<NamedTensor> out;
  NamedTensor nt;
  while (read_tensor(is, nt, dtype)) out.push_back(nt);
  return out;
}

}  // namespace marrprobe::numerics
