#pragma once

#include <memory>
#include <stdexcept>
#include <string>

namespace orps {

// Base for every error the library raises. Guest-program failures are never
// errors; they are data inside an ExecutionReport.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---- model gateway ---------------------------------------------------------

class GatewayUnavailable : public Error {
public:
  using Error::Error;
};

class ContextOverflow : public Error {
public:
  using Error::Error;
};

class MissingCode : public Error {
public:
  MissingCode() : Error("completion contains no code block and no solution marker content") {}
};

class MalformedScore : public Error {
public:
  MalformedScore() : Error("no parseable $$number$$ group in critic output") {}
};

class NoValidTests : public Error {
public:
  NoValidTests() : Error("no generated test survived validation") {}
};

// ---- execution -------------------------------------------------------------

// Sandbox infrastructure failure: runner missing, protocol violation, hang.
class ExecutorFault : public Error {
public:
  using Error::Error;
};

class IncomparableProfiles : public Error {
public:
  IncomparableProfiles() : Error("profiles use different measurement classes") {}
};

class DegenerateReference : public Error {
public:
  DegenerateReference() : Error("reference profile time is zero") {}
};

// ---- search ----------------------------------------------------------------

class BudgetTooSmall : public Error {
public:
  using Error::Error;
};

class PreconditionViolation : public Error {
public:
  using Error::Error;
};

struct SearchResult;

// Every candidate of every beam node in a round was unparseable. Carries the
// tree built so far.
class EmptyExpansion : public Error {
public:
  EmptyExpansion(std::string what, std::shared_ptr<const SearchResult> partial)
      : Error(std::move(what)), partial_(std::move(partial)) {}

  const std::shared_ptr<const SearchResult>& partial() const noexcept { return partial_; }

private:
  std::shared_ptr<const SearchResult> partial_;
};

// ---- cli / data ------------------------------------------------------------

class ConfigError : public Error {
public:
  using Error::Error;
};

class DatasetError : public Error {
public:
  using Error::Error;
};

}  // namespace orps
