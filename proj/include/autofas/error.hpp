#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace autofas {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
   public:
    DivergenceError(std::size_t step, const std::string& what)
        : NumericError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

   private:
    std::size_t step_;
};

/// Bad argument, violated precondition or invalid spec.
class ParameterError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Metric is undefined for the given input (e.g. AUC with a single class).
class UndefinedMetricError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

/// Missing key in a table (latency shapes, embedding ids, ...).
class LookupError : public std::out_of_range {
   public:
    using std::out_of_range::out_of_range;
};

/// The latency table has no entry for an MLP shape the search space needs.
class MissingLatencyError : public LookupError {
   public:
    using LookupError::LookupError;
};

/// Malformed text input. line() is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
   public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

   private:
    std::size_t line_;
};

}  // namespace autofas
