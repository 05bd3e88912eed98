// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// Binary dataset ("LCED") and checkpoint ("LCEM") formats, CSV result rows.
//
// All multi-byte values are little-endian. Dataset layout:
//   "LCED" u32 version u8 endianness(1=little) u8 dtype(0=f32,1=f64)
//   u8 L_mode(0=fixed,1=per-sample) u8 snr_mode(0=fixed,1=per-sample)
//   u32 N u32 M u32 Q u32 N_RF u64 count u64 base_seed f64 tau_max
//   count x { u32 L, f64 snr_db, N*2M values of H row-major,
//             L x (re, im) gains, L delays, L angles }      (values in dtype)
// Checkpoint layout:
//   "LCEM" u32 version u32 T u32 w1 u32 w2 u32 N u32 M u8 share u8 anchor
//   u32 section count, sections as (u32 length, bytes)
//   u64 tensor count, tensors as (u32 name length, name, u32 rank, rank x u64 dims,
//                                 u8 dtype, raw values row-major)

#include "dataset.hpp"
#include "hyper.hpp"
#include "lista.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lce {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, invalid };
  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace io {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void value(double v, Dtype dt) {
    if (dt == Dtype::f32)
      put(static_cast<float>(v));
    else
      put(v);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : buf_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  double value(Dtype dt) { return dt == Dtype::f32 ? static_cast<double>(get<float>()) : get<double>(); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(FormatError::Kind::truncated, "unexpected end of file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void expect_magic(Reader& r, const char* magic) {
  if (r.bytes(4) != magic) throw FormatError(FormatError::Kind::bad_magic, std::string("not a ") + magic + " file");
}

inline Dtype dtype_from(std::uint8_t code) {
  if (code > 1) throw FormatError(FormatError::Kind::invalid, "unknown dtype code " + std::to_string(code));
  return static_cast<Dtype>(code);
}

}  // namespace io

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_dataset(const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  if (h.count != ds.samples.size()) throw std::invalid_argument("encode_dataset: header count differs from records");
  io::Writer w;
  w.bytes("LCED");
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint8_t>(1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.dtype));
  w.put<std::uint8_t>(h.L_per_sample ? 1 : 0);
  w.put<std::uint8_t>(h.snr_per_sample ? 1 : 0);
  for (int v : {h.N, h.M, h.Q, h.n_rf}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint64_t>(h.count);
  w.put<std::uint64_t>(h.base_seed);
  w.put<double>(h.tau_max);
  for (const Sample& s : ds.samples) {
    if (s.H.rows() != h.N || s.H.cols() != 2 * h.M || s.paths.L() != s.L)
      throw std::invalid_argument("encode_dataset: record does not match header");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.L));
    w.put<double>(s.snr_db);
    for (Eigen::Index i = 0; i < s.H.rows(); ++i)
      for (Eigen::Index j = 0; j < s.H.cols(); ++j) w.value(s.H(i, j), h.dtype);
    for (const cplx& a : s.paths.alpha) {
      w.value(a.real(), h.dtype);
      w.value(a.imag(), h.dtype);
    }
    for (double t : s.paths.tau) w.value(t, h.dtype);
    for (double th : s.paths.theta) w.value(th, h.dtype);
  }
  return w.buffer();
}

inline Dataset decode_dataset(std::vector<char> bytes) {
  io::Reader r(std::move(bytes));
  io::expect_magic(r, "LCED");
  Dataset ds;
  DatasetHeader& h = ds.header;
  h.version = r.get<std::uint32_t>();
  if (h.version != kDatasetVersion)
    throw FormatError(FormatError::Kind::bad_version, "unsupported dataset version " + std::to_string(h.version));
  if (r.get<std::uint8_t>() != 1) throw FormatError(FormatError::Kind::invalid, "dataset is not little-endian");
  h.dtype = io::dtype_from(r.get<std::uint8_t>());
  h.L_per_sample = r.get<std::uint8_t>() != 0;
  h.snr_per_sample = r.get<std::uint8_t>() != 0;
  for (int* v : {&h.N, &h.M, &h.Q, &h.n_rf}) *v = static_cast<int>(r.get<std::uint32_t>());
  if (h.N < 1 || h.M < 1 || h.Q < 1 || h.n_rf < 1) throw FormatError(FormatError::Kind::invalid, "bad dimensions");
  h.count = r.get<std::uint64_t>();
  h.base_seed = r.get<std::uint64_t>();
  h.tau_max = r.get<double>();
  for (std::uint64_t k = 0; k < h.count; ++k) {
    Sample s;
    s.L = static_cast<int>(r.get<std::uint32_t>());
    s.snr_db = r.get<double>();
    s.H.resize(h.N, 2 * h.M);
    for (Eigen::Index i = 0; i < s.H.rows(); ++i)
      for (Eigen::Index j = 0; j < s.H.cols(); ++j) s.H(i, j) = r.value(h.dtype);
    s.paths.alpha.resize(s.L);
    s.paths.tau.resize(s.L);
    s.paths.theta.resize(s.L);
    for (auto& a : s.paths.alpha) {
      const double re = r.value(h.dtype);
      a = {re, r.value(h.dtype)};
    }
    for (auto& t : s.paths.tau) t = r.value(h.dtype);
    for (auto& th : s.paths.theta) th = r.value(h.dtype);
    ds.samples.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError(FormatError::Kind::invalid, "trailing bytes after last record");
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) { io::dump(path, encode_dataset(ds)); }
inline Dataset read_dataset(const std::string& path) { return decode_dataset(io::slurp(path)); }

struct NamedTensor {
  std::string name;
  Mat value;
};

struct Checkpoint {
  NetConfig net;
  std::vector<std::string> sections;  // "lista", "hyper"
  std::vector<NamedTensor> tensors;

  bool has_section(const std::string& s) const {
    return std::find(sections.begin(), sections.end(), s) != sections.end();
  }

  const Mat& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw FormatError(FormatError::Kind::invalid, "checkpoint has no tensor '" + name + "'");
  }
};

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  io::Writer w;
  w.bytes("LCEM");
  w.put<std::uint32_t>(kCheckpointVersion);
  for (int v : {ck.net.T, ck.net.w1, ck.net.w2, ck.net.N, ck.net.M}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint8_t>(ck.net.share_transforms ? 1 : 0);
  w.put<std::uint8_t>(ck.net.anchor == AnchorMode::as_written ? 0 : 1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.sections.size()));
  for (const auto& s : ck.sections) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    w.bytes(s);
  }
  w.put<std::uint64_t>(ck.tensors.size());
  for (const auto& t : ck.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.cols()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(Dtype::f64));
    for (Eigen::Index i = 0; i < t.value.rows(); ++i)
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) w.put<double>(t.value(i, j));
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  io::Reader r(std::move(bytes));
  io::expect_magic(r, "LCEM");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(FormatError::Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  for (int* v : {&ck.net.T, &ck.net.w1, &ck.net.w2, &ck.net.N, &ck.net.M}) *v = static_cast<int>(r.get<std::uint32_t>());
  ck.net.share_transforms = r.get<std::uint8_t>() != 0;
  ck.net.anchor = r.get<std::uint8_t>() == 0 ? AnchorMode::as_written : AnchorMode::primed;
  const auto nsec = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nsec; ++i) ck.sections.push_back(r.bytes(r.get<std::uint32_t>()));
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint64_t>();
    const Dtype dt = io::dtype_from(r.get<std::uint8_t>());
    if (rank > 2) throw FormatError(FormatError::Kind::invalid, "tensor '" + t.name + "' has rank > 2");
    const auto rows = static_cast<Eigen::Index>(rank >= 1 ? dims[0] : 1);
    const auto cols = static_cast<Eigen::Index>(rank == 2 ? dims[1] : 1);
    t.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) t.value(i, j) = r.value(dt);
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(FormatError::Kind::invalid, "trailing bytes after tensor table");
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) { io::dump(path, encode_checkpoint(ck)); }
inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(io::slurp(path)); }

inline Checkpoint make_checkpoint(const ListaParams& p, const NetConfig& net) {
  check_shapes(p, net);
  Checkpoint ck{net, {"lista"}, {}};
  for_each_tensor(p, [&](const std::string& name, const Mat& m) { ck.tensors.push_back({name, m}); });
  return ck;
}

inline Checkpoint make_checkpoint(const HyperModel& model, const NetConfig& net) {
  Checkpoint ck = make_checkpoint(model.base, net);
  ck.sections.push_back("hyper");
  for_each_tensor(model.hyper, [&](const std::string& name, const Mat& m) { ck.tensors.push_back({name, m}); });
  const ConditionBounds& b = model.hyper.bounds;
  Mat bounds(1, 4);
  bounds << b.L_min, b.L_max, b.snr_min, b.snr_max;
  ck.tensors.push_back({"hyper.bounds", bounds});
  return ck;
}

inline ListaParams lista_params(const Checkpoint& ck) {
  if (!ck.has_section("lista")) throw FormatError(FormatError::Kind::invalid, "checkpoint has no lista section");
  ListaParams p = ListaParams::zeros(ck.net);
  for_each_tensor(p, [&](const std::string& name, Mat& m) {
    const Mat& v = ck.tensor(name);
    if (v.rows() != m.rows() || v.cols() != m.cols())
      throw FormatError(FormatError::Kind::invalid, "tensor '" + name + "' does not match the network config");
    m = v;
  });
  return p;
}

inline HyperModel hyper_model(const Checkpoint& ck) {
  if (!ck.has_section("hyper")) throw FormatError(FormatError::Kind::invalid, "checkpoint has no hyper section");
  HyperModel model{lista_params(ck), {}};
  model.hyper.W1 = ck.tensor("hyper.W1");
  model.hyper.b1 = ck.tensor("hyper.b1");
  model.hyper.W2 = ck.tensor("hyper.W2");
  model.hyper.W3 = ck.tensor("hyper.W3");
  const Mat& b = ck.tensor("hyper.bounds");
  if (b.size() != 4) throw FormatError(FormatError::Kind::invalid, "hyper.bounds must hold 4 values");
  model.hyper.bounds = {b(0), b(1), b(2), b(3)};
  const int d = model.hyper.hidden();
  if (model.hyper.W1.cols() != 2 || model.hyper.b1.rows() != d || model.hyper.b1.cols() != 1 ||
      model.hyper.W2.rows() != d || model.hyper.W2.cols() != d ||
      model.hyper.W3.cols() != d || model.hyper.W3.rows() != 4 * ck.net.T)
    throw FormatError(FormatError::Kind::invalid, "hypernetwork tensors have inconsistent shapes");
  return model;
}

// One line of an evaluation CSV.
struct ResultRow {
  std::string estimator;
  double snr_db = 0.0;
  int L = 0;
  int layers = 0;
  double nmse_db = 0.0;
  long samples = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kResultHeader = "estimator,snr_db,L,layers,nmse_db,samples,seed";

inline std::string format_number(double v, int precision) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

/// Sorts by estimator, L, snr_db, layers.
inline void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.estimator != b.estimator) return a.estimator < b.estimator;
    if (a.L != b.L) return a.L < b.L;
    if (a.snr_db != b.snr_db) return a.snr_db < b.snr_db;
    return a.layers < b.layers;
  });
}

inline std::string results_csv(std::vector<ResultRow> rows) {
  sort_rows(rows);
  std::ostringstream os;
  os << kResultHeader << '\n';
  for (const auto& r : rows)
    os << r.estimator << ',' << format_number(r.snr_db, 2) << ',' << r.L << ',' << r.layers << ','
       << format_number(r.nmse_db, 6) << ',' << r.samples << ',' << r.seed << '\n';
  return os.str();
}

inline constexpr const char* kTrainLogHeader = "epoch,train_loss,val_nmse_db,wall_seconds";

inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << kTrainLogHeader << '\n';
  for (const auto& r : log)
    os << r.epoch << ',' << format_number(r.train_loss, 9) << ',' << format_number(r.val_nmse_db, 6) << ','
       << format_number(r.wall_seconds, 3) << '\n';
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  io::dump(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace lce
