#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace preftrain {

// Error classes surfaced by library operations. Exit-code mapping:
// validation-type codes -> 1, runtime-type codes -> 2 (see harness.hpp).
enum class ErrorCode {
  SyntaxError,
  SchemaError,
  RemoteError,
  ParseError,
  Tie,
  UnknownDimension,
  DimensionNeverJudged,
  DegenerateNoise,
  NonFiniteState,
  NonFiniteLoss,
  NonFiniteGradient,
  LengthMismatch,
  DuplicateKey,
  RangeError,
  UnknownKey,
  MissingLog,
  EmptySweep,
  LockHeld,
  InvalidArgument,
  IoError,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::RemoteError: return "RemoteError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Tie: return "Tie";
    case ErrorCode::UnknownDimension: return "UnknownDimension";
    case ErrorCode::DimensionNeverJudged: return "DimensionNeverJudged";
    case ErrorCode::DegenerateNoise: return "DegenerateNoise";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::MissingLog: return "MissingLog";
    case ErrorCode::EmptySweep: return "EmptySweep";
    case ErrorCode::LockHeld: return "LockHeld";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t byte_offset = 0)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        byte_offset_(byte_offset) {}

  ErrorCode code() const { return code_; }
  // Byte position in the source document, when known (parse errors).
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  ErrorCode code_;
  std::size_t byte_offset_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2& o) const = default;

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
};

inline double dist(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

// FNV-1a, the stable hash used for debias coins and RNG stream derivation.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return hash_mix(a ^ hash_mix(b));
}

}  // namespace preftrain
