#pragma once

#include <stdexcept>
#include <string>

namespace lsgcpd {

/// Malformed or unreadable input data (files, transforms, config documents).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The registration could not proceed (degenerate geometry, vanished correspondence mass).
class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lsgcpd
