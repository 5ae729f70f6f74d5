#pragma once

#include <stdexcept>
#include <string>

namespace posekit {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A regressed 3x3 matrix is rank-deficient (two singular values ~ 0),
// so no meaningful nearest rotation exists.
class DegenerateMatrix : public Error {
 public:
  using Error::Error;
};

// Input vectors are zero or parallel where independence is required.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// A 3D point has non-positive depth in the camera frame.
class BehindCamera : public Error {
 public:
  using Error::Error;
};

class InvalidDepth : public Error {
 public:
  using Error::Error;
};

// Value outside its documented domain (e.g. sigma not in [0,1]).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Array/matrix dimensions do not match the operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Singular-value configuration too close to a derivative singularity of
// the SO(3) projection; callers typically skip or regularize the sample.
class NearDegenerateSVD : public Error {
 public:
  using Error::Error;
};

class InvalidBox : public Error {
 public:
  using Error::Error;
};

// Key (e.g. object name) not present in a registry.
class LookupError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace posekit
