#pragma once

#include <stdexcept>
#include <string>

namespace umst {

// Dimension or shape violation on a tensor operation. Messages name the
// offending shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input data: BPE streams, CoNLL-U, structure sidecars, configs.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg
                                    : msg),
        line(line) {}
  std::size_t line = 0;
};

// Raised by the training loop when the loss stops being finite.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, long step)
      : std::runtime_error("step " + std::to_string(step) + ": " + msg),
        step(step) {}
  long step;
};

}  // namespace umst
