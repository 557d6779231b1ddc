#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "immunity/packet.hpp"

namespace immunity {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration; maps to the CLI's configuration exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(std::uint64_t record, const std::string& what)
      : std::runtime_error("record " + std::to_string(record) + ": " + what), record_(record) {}
  std::uint64_t record() const { return record_; }

 private:
  std::uint64_t record_;
};

enum class TraceFormat { Text, Binary };

inline std::optional<TraceFormat> parse_trace_format(std::string_view s) {
  if (s == "text") return TraceFormat::Text;
  if (s == "binary") return TraceFormat::Binary;
  return std::nullopt;
}

inline constexpr std::size_t kBinaryRecordBytes = 8 + kFlowKeyBytes + 1 + 2 + 2 + 1;

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <class T>
T parse_uint(std::string_view s, std::uint64_t record, const char* field) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw FormatError(record, std::string("bad ") + field + " '" + std::string(s) + "'");
  return v;
}

// "<sec>[.<up to 6 digits>]" parsed exactly, no floating point rounding.
inline Micros parse_ts(std::string_view s, std::uint64_t record) {
  auto dot = s.find('.');
  std::int64_t sec = parse_uint<std::int64_t>(s.substr(0, dot), record, "ts");
  std::int64_t frac = 0;
  if (dot != std::string_view::npos) {
    auto f = s.substr(dot + 1);
    if (f.empty() || f.size() > 6) throw FormatError(record, "bad ts '" + std::string(s) + "'");
    frac = parse_uint<std::int64_t>(f, record, "ts");
    for (auto i = f.size(); i < 6; ++i) frac *= 10;
  }
  return Micros(sec * 1000000 + frac);
}

}  // namespace detail

inline PacketRecord parse_text_record(std::string_view line, std::uint64_t record) {
  auto f = detail::split_csv(line);
  if (f.size() != 10)
    throw FormatError(record, "expected 10 fields, got " + std::to_string(f.size()));
  PacketRecord r;
  r.ts = detail::parse_ts(f[0], record);
  auto src = Ipv4::try_parse(f[1]);
  auto dst = Ipv4::try_parse(f[2]);
  if (!src || !dst) throw FormatError(record, "bad IPv4 address");
  r.key.src_ip = *src;
  r.key.dst_ip = *dst;
  r.key.src_port = detail::parse_uint<std::uint16_t>(f[3], record, "src_port");
  r.key.dst_port = detail::parse_uint<std::uint16_t>(f[4], record, "dst_port");
  r.key.proto = detail::parse_uint<std::uint8_t>(f[5], record, "proto");
  try {
    r.flags = TcpFlags::parse(f[6]);
  } catch (const std::invalid_argument& e) {
    throw FormatError(record, e.what());
  }
  r.wire_len = detail::parse_uint<std::uint16_t>(f[7], record, "wire_len");
  r.payload_len = detail::parse_uint<std::uint16_t>(f[8], record, "payload_len");
  if (r.payload_len > r.wire_len) throw FormatError(record, "payload_len exceeds wire_len");
  auto label = parse_label(f[9]);
  if (!label) throw FormatError(record, "unknown label '" + std::string(f[9]) + "'");
  r.label = *label;
  return r;
}

inline std::string format_text_record(const PacketRecord& r) {
  std::string out = format_seconds(r.ts);
  out += ',';
  out += r.key.src_ip.str();
  out += ',';
  out += r.key.dst_ip.str();
  out += ',' + std::to_string(r.key.src_port) + ',' + std::to_string(r.key.dst_port) + ',' +
         std::to_string(r.key.proto) + ',' + r.flags.str() + ',' + std::to_string(r.wire_len) + ',' +
         std::to_string(r.payload_len) + ',';
  out += label_name(r.label);
  return out;
}

inline void encode_binary_record(const PacketRecord& r, std::uint8_t* out) {
  auto us = static_cast<std::uint64_t>(r.ts.count());
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(us >> (8 * i));
  r.key.serialize(std::span<std::uint8_t, kFlowKeyBytes>(out + 8, kFlowKeyBytes));
  out[21] = r.flags.bits();
  out[22] = static_cast<std::uint8_t>(r.wire_len);
  out[23] = static_cast<std::uint8_t>(r.wire_len >> 8);
  out[24] = static_cast<std::uint8_t>(r.payload_len);
  out[25] = static_cast<std::uint8_t>(r.payload_len >> 8);
  out[26] = static_cast<std::uint8_t>(r.label);
}

inline PacketRecord decode_binary_record(const std::uint8_t* in, std::uint64_t record) {
  PacketRecord r;
  std::uint64_t us = 0;
  for (int i = 0; i < 8; ++i) us |= std::uint64_t{in[i]} << (8 * i);
  if (us > static_cast<std::uint64_t>(INT64_MAX)) throw FormatError(record, "timestamp overflow");
  r.ts = Micros(static_cast<std::int64_t>(us));
  r.key = FlowKey::deserialize(std::span<const std::uint8_t, kFlowKeyBytes>(in + 8, kFlowKeyBytes));
  if (in[21] & ~TcpFlags::kMask) throw FormatError(record, "undefined flag bits set");
  r.flags = TcpFlags(in[21]);
  r.wire_len = static_cast<std::uint16_t>(in[22] | (in[23] << 8));
  r.payload_len = static_cast<std::uint16_t>(in[24] | (in[25] << 8));
  if (r.payload_len > r.wire_len) throw FormatError(record, "payload_len exceeds wire_len");
  if (in[26] > static_cast<std::uint8_t>(Label::Unlabeled))
    throw FormatError(record, "label enum out of range");
  r.label = static_cast<Label>(in[26]);
  return r;
}

// Pull-style record source. Implementations must be restartable via reset().
class PacketSource {
 public:
  virtual ~PacketSource() = default;
  virtual std::optional<PacketRecord> next() = 0;
  virtual void reset() = 0;
};

class VectorSource : public PacketSource {
 public:
  explicit VectorSource(std::vector<PacketRecord> records) : records_(std::move(records)) {}
  std::optional<PacketRecord> next() override {
    if (pos_ >= records_.size()) return std::nullopt;
    return records_[pos_++];
  }
  void reset() override { pos_ = 0; }

 private:
  std::vector<PacketRecord> records_;
  std::size_t pos_ = 0;
};

class TextFileSource : public PacketSource {
 public:
  explicit TextFileSource(std::string path) : path_(std::move(path)) { reset(); }

  std::optional<PacketRecord> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      return parse_text_record(line, ++record_);
    }
    if (in_.bad()) throw IoError("read failed: " + path_);
    return std::nullopt;
  }

  void reset() override {
    in_ = std::ifstream(path_);
    if (!in_) throw IoError("cannot open trace: " + path_);
    record_ = 0;
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t record_ = 0;
};

class BinaryFileSource : public PacketSource {
 public:
  explicit BinaryFileSource(std::string path) : path_(std::move(path)) { reset(); }

  std::optional<PacketRecord> next() override {
    std::uint8_t buf[kBinaryRecordBytes];
    in_.read(reinterpret_cast<char*>(buf), kBinaryRecordBytes);
    auto got = static_cast<std::size_t>(in_.gcount());
    if (got == 0) {
      if (in_.bad()) throw IoError("read failed: " + path_);
      return std::nullopt;
    }
    ++record_;
    if (got != kBinaryRecordBytes)
      throw FormatError(record_, "truncated record at byte offset " +
                                     std::to_string((record_ - 1) * kBinaryRecordBytes));
    return decode_binary_record(buf, record_);
  }

  void reset() override {
    in_ = std::ifstream(path_, std::ios::binary);
    if (!in_) throw IoError("cannot open trace: " + path_);
    record_ = 0;
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t record_ = 0;
};

// Ordered iteration over a source, enforcing the non-decreasing timestamp invariant in strict mode.
class PacketStream {
 public:
  explicit PacketStream(std::unique_ptr<PacketSource> source, bool strict = true)
      : source_(std::move(source)), strict_(strict) {}

  std::optional<PacketRecord> next() {
    auto r = source_->next();
    if (!r) return r;
    ++count_;
    if (strict_ && count_ > 1 && r->ts < last_ts_)
      throw FormatError(count_, "timestamp " + format_seconds(r->ts) + " precedes " +
                                    format_seconds(last_ts_));
    last_ts_ = r->ts;
    return r;
  }

  void reset() {
    source_->reset();
    count_ = 0;
    last_ts_ = Micros{0};
  }

  std::vector<PacketRecord> collect() {
    std::vector<PacketRecord> out;
    while (auto r = next()) out.push_back(*r);
    return out;
  }

 private:
  std::unique_ptr<PacketSource> source_;
  bool strict_;
  std::uint64_t count_ = 0;
  Micros last_ts_{0};
};

inline PacketStream parse_stream(const std::string& path, TraceFormat format, bool strict = true) {
  if (format == TraceFormat::Text) return PacketStream(std::make_unique<TextFileSource>(path), strict);
  return PacketStream(std::make_unique<BinaryFileSource>(path), strict);
}

inline PacketStream memory_stream(std::vector<PacketRecord> records, bool strict = true) {
  return PacketStream(std::make_unique<VectorSource>(std::move(records)), strict);
}

class TraceWriter {
 public:
  TraceWriter(const std::string& path, TraceFormat format) : path_(path), format_(format) {
    out_.open(path, format == TraceFormat::Binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out_) throw IoError("cannot write trace: " + path);
  }

  void write(const PacketRecord& r) {
    if (format_ == TraceFormat::Binary) {
      std::uint8_t buf[kBinaryRecordBytes];
      encode_binary_record(r, buf);
      out_.write(reinterpret_cast<const char*>(buf), kBinaryRecordBytes);
    } else {
      out_ << format_text_record(r) << '\n';
    }
    if (!out_) throw IoError("write failed: " + path_);
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("close failed: " + path_);
  }

 private:
  std::string path_;
  TraceFormat format_;
  std::ofstream out_;
};

inline void write_trace(const std::string& path, TraceFormat format, const std::vector<PacketRecord>& records) {
  TraceWriter w(path, format);
  for (const auto& r : records) w.write(r);
  w.close();
}

}  // namespace immunity
