/* Copyright 2026 The FGFusion Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace fgf {

// Process exit codes shared by every CLI command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return kExitFailure; }
};

// Incompatible tensor shapes. Messages always carry both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an op, or an input outside a function's domain.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitNumeric; }
};

// Violated precondition on an argument (not a shape problem).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitConfig; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitIo; }
};

// Malformed file content; message is prefixed with "file:line".
class ParseError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return kExitIo; }
};

// Structurally valid file missing a required key.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace fgf
