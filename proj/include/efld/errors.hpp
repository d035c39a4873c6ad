#pragma once

#include <stdexcept>
#include <string>

namespace efld {

/// Base of every error raised by the toolkit. The category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, data, internal };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(Category::usage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::usage, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(Category::internal, what) {}
};

/// Malformed input record; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = 0)
      : Error(Category::data, line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(Category::data, what) {}
};

class DegenerateAnnotation : public Error {
 public:
  explicit DegenerateAnnotation(const std::string& what) : Error(Category::data, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(Category::data, what) {}
};

class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& what) : Error(Category::data, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::data, what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(Category::internal, what) {}
};

}  // namespace efld
