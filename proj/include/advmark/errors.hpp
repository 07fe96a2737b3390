#pragma once

#include <stdexcept>
#include <string>

namespace advmark {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class VersionError : public FormatError { using FormatError::FormatError; };
class TrainingError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class AttackInfeasible : public Error { using Error::Error; };

}  // namespace advmark
