#pragma once

#include <stdexcept>
#include <string>

namespace so3est {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (non-PSD covariance, bad scenario...).
struct ConfigError : Error {
  using Error::Error;
};

/// Numerical failure at runtime (degenerate spectrum, non-finite state...).
struct NumericalError : Error {
  using Error::Error;
};

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace so3est
