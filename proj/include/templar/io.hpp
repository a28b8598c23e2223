// Copyright 2026 The Templar Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats.
//
// Bank file ("WTB1"), all integers little-endian:
//   magic[4] version:u32 N:u32 r1:u32 r2:u32 L:u32 B:u32 dtype:u8
//   f64[N*r1*r2] templates, then f64[N*L*B] scalers (scaler i, row-major)
//
// Weight dump ("WTW1"): magic[4] version:u32 rows:u64 cols:u64 f64[rows*cols].
//
// History: one `step\tloss\tmask_r1\tmask_r2` line per step, loss as %.17g.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "templar/error.hpp"
#include "templar/factorization.hpp"
#include "templar/linalg.hpp"
#include "templar/pipeline.hpp"

namespace templar {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

enum class FormatErrc {
  kBadMagic = 1,
  kVersionMismatch,
  kTruncatedPayload,
  kTrailingBytes,
  kUnsupportedDtype,
  kBadHeader,
  kIo,
  kBadConfig,
};

inline const char* errc_name(FormatErrc c) {
  switch (c) {
    case FormatErrc::kBadMagic: return "bad magic";
    case FormatErrc::kVersionMismatch: return "version mismatch";
    case FormatErrc::kTruncatedPayload: return "truncated payload";
    case FormatErrc::kTrailingBytes: return "trailing bytes";
    case FormatErrc::kUnsupportedDtype: return "unsupported dtype";
    case FormatErrc::kBadHeader: return "bad header";
    case FormatErrc::kIo: return "i/o error";
    case FormatErrc::kBadConfig: return "bad config";
  }
  return "unknown";
}

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}
  FormatErrc code() const { return code_; }

 private:
  FormatErrc code_;
};

inline constexpr std::uint32_t kBankVersion = 1;
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 0;
inline constexpr std::size_t kBankHeaderBytes = 4 + 6 * 4 + 1;
inline constexpr std::size_t kWeightsHeaderBytes = 4 + 4 + 8 + 8;

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::size_t remaining() const { return data_.size() - pos_; }
  std::string_view bytes(std::size_t n) {
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  void f64s(std::span<double> out) {
    for (double& v : out) v = f64();
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::kIo, "cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrc::kIo, "read failed for " + path.string());
  return s;
}

/// Writes to a sibling temp file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw FormatError(FormatErrc::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError(FormatErrc::kIo, "cannot rename onto " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Bank file

inline std::string encode_bank(const TemplateBank& bank, const ScalerSet& scalers) {
  bank.validate();
  scalers.validate();
  if (scalers.size() != bank.size()) {
    throw ContractError("encode_bank: " + std::to_string(bank.size()) + " templates but " +
                        std::to_string(scalers.size()) + " scalers");
  }
  auto u32 = [](std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFull) throw ContractError(std::string("encode_bank: ") + what + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
  };
  detail::ByteWriter w;
  w.bytes("WTB1");
  w.uint(kBankVersion);
  w.uint(u32(bank.size(), "N"));
  w.uint(u32(bank.config.r1, "r1"));
  w.uint(u32(bank.config.r2, "r2"));
  w.uint(u32(scalers.layers, "L"));
  w.uint(u32(scalers.b_cols, "B"));
  w.uint(kDtypeF64);
  w.f64s(bank.templates.values());
  for (const Matrix& s : scalers.scalers) w.f64s(s.values());
  return w.data();
}

struct BankFile {
  TemplateBank bank;
  ScalerSet scalers;
};

inline BankFile decode_bank(std::string_view data) {
  if (data.size() < 4) {
    throw FormatError(FormatErrc::kBadMagic, "file is " + std::to_string(data.size()) + " bytes, shorter than magic");
  }
  detail::ByteReader r(data);
  if (r.bytes(4) != "WTB1") throw FormatError(FormatErrc::kBadMagic, "expected \"WTB1\"");
  if (data.size() < kBankHeaderBytes) {
    throw FormatError(FormatErrc::kTruncatedPayload, "header needs " + std::to_string(kBankHeaderBytes) +
                                                         " bytes, file has " + std::to_string(data.size()));
  }
  const auto version = r.uint<std::uint32_t>();
  if (version != kBankVersion) {
    throw FormatError(FormatErrc::kVersionMismatch,
                      "file version " + std::to_string(version) + ", reader supports " + std::to_string(kBankVersion));
  }
  const std::uint64_t n = r.uint<std::uint32_t>(), r1 = r.uint<std::uint32_t>(), r2 = r.uint<std::uint32_t>();
  const std::uint64_t l = r.uint<std::uint32_t>(), b = r.uint<std::uint32_t>();
  const auto dtype = r.uint<std::uint8_t>();
  if (dtype != kDtypeF64) throw FormatError(FormatErrc::kUnsupportedDtype, "dtype " + std::to_string(dtype));
  if (n == 0 || r1 == 0 || r2 == 0 || l == 0 || b == 0) {
    throw FormatError(FormatErrc::kBadHeader, "zero dimension in header");
  }
  if (static_cast<double>(n) * static_cast<double>(r1 * r2 + l * b) > 0x1p58) {
    throw FormatError(FormatErrc::kTruncatedPayload, "header counts exceed any file of " +
                                                         std::to_string(data.size()) + " bytes");
  }
  const std::uint64_t values = n * r1 * r2 + n * l * b;
  const std::uint64_t expected = kBankHeaderBytes + 8 * values;
  if (data.size() < expected) {
    throw FormatError(FormatErrc::kTruncatedPayload, "expected " + std::to_string(expected) + " bytes, got " +
                                                         std::to_string(data.size()));
  }
  if (data.size() > expected) {
    throw FormatError(FormatErrc::kTrailingBytes, "expected " + std::to_string(expected) + " bytes, got " +
                                                      std::to_string(data.size()));
  }
  BankFile f{TemplateBank::zeros({n, r1, r2}), ScalerSet::zeros(n, l, b)};
  r.f64s(f.bank.templates.values());
  for (Matrix& s : f.scalers.scalers) r.f64s(s.values());
  return f;
}

inline void save_bank(const std::filesystem::path& path, const TemplateBank& bank, const ScalerSet& scalers) {
  write_file_atomic(path, encode_bank(bank, scalers));
}

inline BankFile load_bank(const std::filesystem::path& path) { return decode_bank(read_file(path)); }

// ---------------------------------------------------------------------------
// Weight dump

inline std::string encode_weights(const Matrix& w) {
  detail::ByteWriter out;
  out.bytes("WTW1");
  out.uint(kWeightsVersion);
  out.uint(static_cast<std::uint64_t>(w.rows()));
  out.uint(static_cast<std::uint64_t>(w.cols()));
  out.f64s(w.values());
  return out.data();
}

inline Matrix decode_weights(std::string_view data) {
  if (data.size() < 4) throw FormatError(FormatErrc::kBadMagic, "file shorter than magic");
  detail::ByteReader r(data);
  if (r.bytes(4) != "WTW1") throw FormatError(FormatErrc::kBadMagic, "expected \"WTW1\"");
  if (data.size() < kWeightsHeaderBytes) {
    throw FormatError(FormatErrc::kTruncatedPayload, "header needs " + std::to_string(kWeightsHeaderBytes) +
                                                         " bytes, file has " + std::to_string(data.size()));
  }
  const auto version = r.uint<std::uint32_t>();
  if (version != kWeightsVersion) {
    throw FormatError(FormatErrc::kVersionMismatch, "file version " + std::to_string(version));
  }
  const auto rows = r.uint<std::uint64_t>(), cols = r.uint<std::uint64_t>();
  if (rows != 0 && cols > (UINT64_MAX - kWeightsHeaderBytes) / 8 / rows) {
    throw FormatError(FormatErrc::kBadHeader, "dimensions overflow");
  }
  const std::uint64_t expected = kWeightsHeaderBytes + 8 * rows * cols;
  if (data.size() < expected) {
    throw FormatError(FormatErrc::kTruncatedPayload, "expected " + std::to_string(expected) + " bytes, got " +
                                                         std::to_string(data.size()));
  }
  if (data.size() > expected) {
    throw FormatError(FormatErrc::kTrailingBytes, "expected " + std::to_string(expected) + " bytes, got " +
                                                      std::to_string(data.size()));
  }
  Matrix w(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  r.f64s(w.values());
  return w;
}

inline void save_weights(const std::filesystem::path& path, const Matrix& w) {
  write_file_atomic(path, encode_weights(w));
}

inline Matrix load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

// ---------------------------------------------------------------------------
// History

inline std::string format_history(const std::vector<HistoryRecord>& history) {
  std::string out;
  char line[96];
  for (const HistoryRecord& h : history) {
    std::snprintf(line, sizeof line, "%zu\t%.17g\t%zu\t%zu\n", h.step, h.loss, h.mask_r1, h.mask_r2);
    out += line;
  }
  return out;
}

inline std::vector<HistoryRecord> parse_history(std::string_view text) {
  std::vector<HistoryRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    HistoryRecord h;
    std::istringstream fields(line);
    std::string loss;
    if (!(fields >> h.step >> loss >> h.mask_r1 >> h.mask_r2)) {
      throw FormatError(FormatErrc::kBadHeader, "history line " + std::to_string(lineno) + " is malformed");
    }
    h.loss = std::strtod(loss.c_str(), nullptr);
    if (!out.empty() && h.step <= out.back().step) {
      throw FormatError(FormatErrc::kBadHeader, "history line " + std::to_string(lineno) + " is out of order");
    }
    out.push_back(h);
  }
  return out;
}

inline void save_history(const std::filesystem::path& path, const std::vector<HistoryRecord>& history) {
  write_file_atomic(path, format_history(history));
}

inline std::vector<HistoryRecord> load_history(const std::filesystem::path& path) {
  return parse_history(read_file(path));
}

// ---------------------------------------------------------------------------
// Run configuration (JSON, strict keys)

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& keys) {
  if (!j.is_object()) throw FormatError(FormatErrc::kBadConfig, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw FormatError(FormatErrc::kBadConfig, "unknown key \"" + where + "." + k + "\"");
  }
  for (const std::string& k : keys) {
    if (!j.contains(k)) throw FormatError(FormatErrc::kBadConfig, "missing key \"" + where + "." + k + "\"");
  }
}

template <class T>
T get(const nlohmann::json& j, const std::string& where, const char* key) {
  if constexpr (std::is_unsigned_v<T>) {
    if (!j.at(key).is_number_unsigned()) {
      throw FormatError(FormatErrc::kBadConfig, "\"" + where + "." + key + "\" must be a non-negative integer");
    }
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(FormatErrc::kBadConfig, "bad value for \"" + where + "." + key + "\"");
  }
}

}  // namespace detail

inline PretrainConfig parse_run_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(FormatErrc::kBadConfig, e.what());
  }
  using detail::check_keys;
  using detail::get;
  check_keys(j, "config", {"dims", "factorization", "schedule", "optim", "data"});
  PretrainConfig c;

  const auto& d = j["dims"];
  check_keys(d, "dims", {"L", "H", "d", "ffn"});
  c.dims = {get<std::size_t>(d, "dims", "L"), get<std::size_t>(d, "dims", "H"), get<std::size_t>(d, "dims", "d"),
            get<std::size_t>(d, "dims", "ffn")};

  const auto& f = j["factorization"];
  check_keys(f, "factorization", {"n", "r1", "r2"});
  c.factorization = {get<std::size_t>(f, "factorization", "n"), get<std::size_t>(f, "factorization", "r1"),
                     get<std::size_t>(f, "factorization", "r2")};

  const auto& s = j["schedule"];
  check_keys(s, "schedule", {"widths", "weights"});
  c.schedule.r1 = c.factorization.r1;
  c.schedule.r2 = c.factorization.r2;
  c.schedule.widths = get<std::vector<std::pair<std::size_t, std::size_t>>>(s, "schedule", "widths");
  c.schedule.weights = get<std::vector<double>>(s, "schedule", "weights");

  const auto& o = j["optim"];
  check_keys(o, "optim", {"lr", "betas", "wd", "steps", "batch", "seed"});
  c.train.adam.lr = get<double>(o, "optim", "lr");
  const auto betas = get<std::vector<double>>(o, "optim", "betas");
  if (betas.size() != 2) throw FormatError(FormatErrc::kBadConfig, "optim.betas must have two entries");
  c.train.adam.beta1 = betas[0];
  c.train.adam.beta2 = betas[1];
  c.train.adam.weight_decay = get<double>(o, "optim", "wd");
  c.train.steps = get<std::size_t>(o, "optim", "steps");
  c.train.batch = get<std::size_t>(o, "optim", "batch");
  c.train.seed = get<std::uint64_t>(o, "optim", "seed");

  const auto& a = j["data"];
  check_keys(a, "data", {"vocab", "seq_len", "n"});
  c.data = {get<std::size_t>(a, "data", "vocab"), get<std::size_t>(a, "data", "seq_len"),
            get<std::size_t>(a, "data", "n")};

  try {
    c.dims.validate();
    c.factorization.validate();
    c.schedule.validate();
  } catch (const ContractError& e) {
    throw FormatError(FormatErrc::kBadConfig, e.what());
  }
  return c;
}

inline std::string format_run_config(const PretrainConfig& c) {
  nlohmann::ordered_json j;
  j["dims"] = {{"L", c.dims.layers}, {"H", c.dims.heads}, {"d", c.dims.head_dim}, {"ffn", c.dims.ffn}};
  j["factorization"] = {{"n", c.factorization.n_templates}, {"r1", c.factorization.r1}, {"r2", c.factorization.r2}};
  j["schedule"] = {{"widths", c.schedule.widths}, {"weights", c.schedule.weights}};
  j["optim"] = {{"lr", c.train.adam.lr},       {"betas", {c.train.adam.beta1, c.train.adam.beta2}},
                {"wd", c.train.adam.weight_decay}, {"steps", c.train.steps},
                {"batch", c.train.batch},      {"seed", c.train.seed}};
  j["data"] = {{"vocab", c.data.vocab}, {"seq_len", c.data.seq_len}, {"n", c.data.n}};
  return j.dump(2) + "\n";
}

inline PretrainConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

inline constexpr const char* kSeedEnv = "WEIT_SEED";

/// Replaces `seed` with the value of WEIT_SEED when that variable is set.
inline std::uint64_t seed_from_env(std::uint64_t seed) {
  const char* v = std::getenv(kSeedEnv);
  if (!v || !*v) return seed;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(v, &end, 10);
  if (*end != '\0' || v[0] == '-') throw FormatError(FormatErrc::kBadConfig, std::string(kSeedEnv) + " is not an unsigned integer");
  return parsed;
}

}  // namespace templar
