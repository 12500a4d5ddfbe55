#pragma once

#include <stdexcept>
#include <string>

namespace tabval {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyTable : std::runtime_error {
  EmptyTable() : std::runtime_error("table has no rows or no columns") {}
};

struct VariantMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a model answer cannot be parsed; the pipeline counts it as a
// rejection instead of aborting.
struct UnparseableCompletion : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedKind : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingContext : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScriptMissError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyTrainingSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RegistryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tabval
