// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moelink/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'L', 'I', 'N', 'K', '\0'};

class Writer {
 public:
  template <typename T>
  void Pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void Str(const std::string& s) {
    Pod(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void Raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <typename T>
  T Pod() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string Str() {
    const auto n = Pod<std::uint32_t>();
    Need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void Raw(void* out, std::size_t n) {
    Need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void Need(std::size_t n) {
    if (n > end_ - pos_) throw ParseError("checkpoint: truncated record");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::int64_t Checkpoint::ElementCount() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

void SaveCheckpoint(ModelParams& params, const RunConfig& config,
                    const std::string& path) {
  Writer w;
  w.Raw(kMagic, sizeof(kMagic));
  w.Pod(kCheckpointVersion);
  w.Str(config.Fingerprint());
  w.Str(config.ToJson().dump());
  std::uint32_t count = 0;
  params.VisitParams([&](const std::string&, Tensor&) { ++count; });
  w.Pod(count);
  params.VisitParams([&](const std::string& name, Tensor& t) {
    w.Str(name);
    w.Pod(static_cast<std::uint64_t>(t.value.rows()));
    w.Pod(static_cast<std::uint64_t>(t.value.cols()));
    // Row-major so the layout does not depend on Eigen's storage order.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        t.value;
    w.Raw(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
  });
  const std::uint64_t sum = Fnv1a64(w.buffer());
  w.Pod(sum);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    out.flush();
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw IoError("short write to " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move checkpoint into place at " + path + ": " +
                  ec.message());
  }
}

Checkpoint ReadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  const std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) + 8 ||
      std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, sizeof(stored));
  if (Fnv1a64(std::string_view(data.data(), body)) != stored) {
    throw ParseError(path + ": checksum mismatch (file is corrupted)");
  }

  Reader r(data, body);
  char magic[sizeof(kMagic)];
  r.Raw(magic, sizeof(magic));
  Checkpoint ck;
  ck.version = r.Pod<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw CompatibilityError(path + ": unsupported checkpoint version " +
                             std::to_string(ck.version));
  }
  ck.fingerprint = r.Str();
  try {
    ck.config = RunConfig::FromJson(nlohmann::json::parse(r.Str()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": embedded config: " + e.what());
  }
  const auto count = r.Pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.Str();
    const auto rows = r.Pod<std::uint64_t>();
    const auto cols = r.Pod<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24)) {
      throw ParseError(path + ": implausible shape for " + t.name);
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.Raw(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
    t.value = rm;
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ParseError(path + ": trailing bytes after tensors");
  return ck;
}

ModelParams LoadCheckpoint(const std::string& path, const RunConfig& active) {
  Checkpoint ck = ReadCheckpoint(path);
  const std::string want = active.Fingerprint();
  if (ck.fingerprint != want) {
    throw CompatibilityError(path + ": architecture fingerprint " +
                             ck.fingerprint + " does not match the active " +
                             "config (" + want + ")");
  }
  std::map<std::string, const Matrix*> by_name;
  for (const auto& t : ck.tensors) {
    if (!by_name.emplace(t.name, &t.value).second) {
      throw ParseError(path + ": duplicate tensor " + t.name);
    }
  }
  // Fill a fresh skeleton; only hand it out once every tensor matched.
  ModelParams params = ModelParams::Initialize(active);
  std::size_t used = 0;
  params.VisitParams([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path + ": missing tensor " + name);
    const Matrix& v = *it->second;
    if (v.rows() != t.value.rows() || v.cols() != t.value.cols()) {
      throw ParseError(path + ": tensor " + name + " has the wrong shape");
    }
    t = Tensor(v);
    ++used;
  });
  if (used != by_name.size()) {
    throw ParseError(path + ": checkpoint holds unexpected tensors");
  }
  return params;
}

}  // namespace moelink
