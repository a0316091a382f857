#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "marrprobe/numerics/tensor.hpp"

// Record format: one line of JSON {"name":..,"shape":[..],"dtype":"f32"},
// a newline, then numel little-endian IEEE-754 binary32 values. A file is a
// concatenation of records.
namespace marrprobe::numerics {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t);
// Reads one record into a tensor of `dtype`. Returns false at clean EOF.
bool read_tensor(std::istream& is, NamedTensor& out, DType dtype = default_dtype());

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path, DType dtype = default_dtype());

}  // namespace marrprobe::numerics
