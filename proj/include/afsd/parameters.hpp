// Copyright 2026 The AFSD Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Named model parameters and the binary checkpoint container.
//
// Checkpoint layout (all integers and reals little-endian):
//   char[4]  magic "AFCK"
//   u16      version (1)
//   u8       bytes per real (4 or 8)
//   u32      parameter count
//   repeated, in ascending name order:
//     u32    name length, followed by that many UTF-8 bytes
//     u32    rank, followed by rank u32 dimensions
//     real   payload, product(dims) values, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/tape.hpp"
#include "afsd/tensor.hpp"

namespace afsd {

template <class Real>
class ParameterStore {
 public:
  void add(const std::string& name, Tensor<Real> value) {
    if (!params_.emplace(name, std::move(value)).second) {
      throw InternalError("duplicate parameter " + name);
    }
  }

  Tensor<Real>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter " + name);
    return it->second;
  }
  const Tensor<Real>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::map<std::string, Tensor<Real>>& entries() { return params_; }
  const std::map<std::string, Tensor<Real>>& entries() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

 private:
  std::map<std::string, Tensor<Real>> params_;
};

// Parameters placed on one tape, as trainable variables or constants.
template <class Real>
class BoundParameters {
 public:
  BoundParameters(Tape<Real>& tape, const ParameterStore<Real>& store, bool trainable) {
    for (const auto& [name, value] : store.entries()) {
      vars_.emplace(name, trainable ? tape.variable(value) : tape.constant(value));
    }
  }

  // Binds externally created variables, e.g. for finite-difference checks.
  explicit BoundParameters(std::map<std::string, Var<Real>> vars) : vars_(std::move(vars)) {}

  const Var<Real>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw InternalError("parameter not bound: " + name);
    return it->second;
  }

  // Gradients of the parameters the last backward pass reached; parameters
  // outside the differentiated graph are omitted.
  std::map<std::string, Tensor<Real>> reached_gradients() const {
    std::map<std::string, Tensor<Real>> out;
    for (const auto& [name, v] : vars_)
      if (v.tape().reached(v.id())) out.emplace(name, v.grad());
    return out;
  }

  std::map<std::string, Tensor<Real>> gradients() const {
    std::map<std::string, Tensor<Real>> out;
    for (const auto& [name, v] : vars_) out.emplace(name, v.grad());
    return out;
  }

 private:
  std::map<std::string, Var<Real>> vars_;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError("unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(bytes[i], bytes[sizeof(U) - 1 - i]);
  }
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace detail

template <class Real>
void save_checkpoint(const ParameterStore<Real>& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write checkpoint " + path);
  os.write("AFCK", 4);
  detail::put_le<std::uint16_t>(os, 1);
  detail::put_le<std::uint8_t>(os, sizeof(Real));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& [name, t] : store.entries()) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (auto v : t.values()) detail::put_le<Real>(os, v);
  }
  if (!os) throw FormatError("failed writing checkpoint " + path);
}

// Reads a checkpoint into `store`, which must already hold every parameter
// with a matching shape (i.e. come from a model built with the same config).
template <class Real>
void load_checkpoint(ParameterStore<Real>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AFCK", 4) != 0) {
    throw FormatError(path + ": not a checkpoint (bad magic)");
  }
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != 1) throw FormatError(path + ": unsupported checkpoint version");
  const auto real_bytes = detail::get_le<std::uint8_t>(is);
  if (real_bytes != 4 && real_bytes != 8) throw FormatError(path + ": bad real width");
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != store.entries().size()) {
    throw FormatError(path + ": parameter count " + std::to_string(count) +
                      " does not match model (" + std::to_string(store.entries().size()) + ")");
  }
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto len = detail::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated checkpoint");
    const auto rank = detail::get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint32_t>(is);
    if (!store.contains(name)) throw FormatError(path + ": unexpected parameter " + name);
    auto& t = store.at(name);
    if (t.shape() != shape) {
      throw FormatError(path + ": shape mismatch for " + name + ": " + shape_string(shape) +
                        " vs model " + shape_string(t.shape()));
    }
    for (auto& v : t.values()) {
      v = real_bytes == 8 ? static_cast<Real>(detail::get_le<double>(is))
                          : static_cast<Real>(detail::get_le<float>(is));
    }
  }
}

}  // namespace afsd
