#pragma once

#include <stdexcept>
#include <string>

namespace groupcap {

// Shape disagreement between operands (matmul, add, concat, ...).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// A softmax row with every entry masked out.
struct DegenerateMaskError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated precondition on an API call (non-scalar backward root, malformed sequence, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct EmptyLossError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct VocabError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LexiconError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnparseableCaption : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SplitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoAttentionError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace groupcap
