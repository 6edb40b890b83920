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

// Named parameter storage and the FGF1 checkpoint format.
//
// Checkpoint layout (all integers little-endian):
//   "FGF1"  u32 record_count
//   per record, sorted by name:
//     u32 name_len  name bytes  u32 rank  u32 dims[rank]  f32 values[prod dims]

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "fgfusion/rng.hpp"
#include "fgfusion/tensor.hpp"

namespace fgf {

enum class Init {
  kFanInUniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kZeros,
  kOnes,
};

template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Deterministic in (name, seed) alone; creation order does not matter.
  Tensor<T> create(const std::string& name, Shape shape, Init init,
                   std::size_t fan_in = 1, T constant = T(0)) {
    if (params_.count(name)) {
      throw ContractError("parameter '" + name + "' already exists");
    }
    std::vector<T> v(shape_numel(shape), constant);
    if (init == Init::kOnes) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (init == Init::kFanInUniform) {
      Rng rng(mix_seed(fnv1a64(name), seed_));
      double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    auto t = Tensor<T>::from_vector(std::move(shape), std::move(v), true);
    params_.emplace(name, t);
    return t;
  }

  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Tensor<T> get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  // Parameters whose names start with `prefix`.
  std::vector<Tensor<T>> with_prefix(const std::string& prefix) const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : params_)
      if (name.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
  }

  void erase_prefix(const std::string& prefix) {
    for (auto it = params_.begin(); it != params_.end();) {
      if (it->first.rfind(prefix, 0) == 0) {
        it = params_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) {
      Tensor<T> h = t;
      h.zero_grad();
    }
  }

  // Copies values from another store, by name. Names missing on either side
  // are an error unless `allow_subset`, in which case only shared names copy.
  template <class U>
  void copy_values_from(const ParamStore<U>& other, bool allow_subset = false) {
    for (auto& [name, t] : params_) {
      if (!other.contains(name)) {
        if (allow_subset) continue;
        throw ContractError("copy_values_from: missing '" + name + "'");
      }
      Tensor<U> src = other.get(name);
      if (src.shape() != t.shape()) {
        throw ShapeError("copy_values_from: '" + name + "' " + shape_str(t.shape()) +
                         " vs " + shape_str(src.shape()));
      }
      Tensor<T> dst = t;
      auto out = dst.mutable_data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src[i]);
    }
  }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor<T>> params_;
};

struct CheckpointRecord {
  Shape shape;
  std::vector<float> values;
};
using Checkpoint = std::map<std::string, CheckpointRecord>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string path)
      : data_(data), path_(std::move(path)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw ParseError(path_ + ": truncated checkpoint");
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "FGF1";
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, rec] : ckpt) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : rec.values) detail::put_f32(out, f);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& data, const std::string& path) {
  if (data.size() < 4 || data.compare(0, 4, "FGF1") != 0) {
    throw ParseError(path + ": bad checkpoint magic");
  }
  detail::ByteReader rd(data, path);
  rd.bytes(4);
  std::uint32_t count = rd.u32();
  Checkpoint ckpt;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name = rd.bytes(rd.u32());
    CheckpointRecord rec;
    std::uint32_t rank = rd.u32();
    for (std::uint32_t i = 0; i < rank; ++i) rec.shape.push_back(rd.u32());
    std::size_t n = shape_numel(rec.shape);
    rec.values.resize(n);
    for (auto& v : rec.values) v = rd.f32();
    ckpt.emplace(std::move(name), std::move(rec));
  }
  if (!rd.done()) throw ParseError(path + ": trailing bytes in checkpoint");
  return ckpt;
}

template <class T>
Checkpoint to_checkpoint(const ParamStore<T>& store) {
  Checkpoint ckpt;
  for (const auto& [name, t] : store.all()) {
    CheckpointRecord rec{t.shape(), {}};
    rec.values.reserve(t.numel());
    for (T v : t.values()) rec.values.push_back(static_cast<float>(v));
    ckpt.emplace(name, std::move(rec));
  }
  return ckpt;
}

// Every store parameter must be present with a matching shape. Extra
// checkpoint records are an error unless `allow_extra`.
template <class T>
void load_checkpoint_into(ParamStore<T>& store, const Checkpoint& ckpt,
                          bool allow_extra = false) {
  for (const auto& [name, t] : store.all()) {
    auto it = ckpt.find(name);
    if (it == ckpt.end()) throw SchemaError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape != t.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' " +
                       shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
    }
    Tensor<T> dst = t;
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(it->second.values[i]);
  }
  if (!allow_extra) {
    for (const auto& [name, rec] : ckpt) {
      if (!store.contains(name)) throw SchemaError("checkpoint has unknown parameter '" + name + "'");
    }
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

template <class T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
  write_file(path, encode_checkpoint(to_checkpoint(store)));
}

inline Checkpoint read_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path), path);
}

}  // namespace fgf
