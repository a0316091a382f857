#pragma once

#include <stdexcept>
#include <string>

namespace marrprobe {

// Error taxonomy shared by every module. The CLI maps these onto its exit
// codes (ConfigError -> 2, IoError -> 3, NumericalError -> 4).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace marrprobe
