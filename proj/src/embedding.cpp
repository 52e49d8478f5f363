#include "mscke/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "httplib.h"
#include "json.hpp"

namespace mscke {

using nlohmann::json;

namespace {

void check_finite(const double* p, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) throw ProviderError(std::string("non-finite value in ") + what);
  }
}

// In-place L2 normalization; all-zero input stays all-zero.
void l2_normalize(double* p, std::size_t n) {
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += p[i] * p[i];
  if (ss == 0.0) return;
  double inv = 1.0 / std::sqrt(ss);
  for (std::size_t i = 0; i < n; ++i) p[i] *= inv;
}

void le_write_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void le_write_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  le_write_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::uint32_t read_u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 1])) << 8) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 2])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 3])) << 24);
    pos_ += 4;
    return v;
  }

  float read_f32() {
    std::uint32_t bits = read_u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string read_bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw FormatError("truncated sidecar file: " + path_);
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

Vec encode_text(const EmbeddingProvider& provider, const std::string& text) {
  if (text.empty()) throw ValidationError("encode_text: empty text");
  Vec v = provider.encode_text(text);
  if (v.size() != provider.d_raw())
    throw ContractError("provider returned wrong text dimension");
  check_finite(v.data(), v.size(), "text embedding");
  return v;
}

PatchSet encode_image(const EmbeddingProvider& provider, const ImageRef& image) {
  PatchSet p = provider.encode_image(image);
  if (!image) {
    if (p.rows() != 0) throw ContractError("provider returned patches for a null image");
    return p;
  }
  if (p.cols != provider.d_raw())
    throw ContractError("provider returned wrong patch dimension");
  check_finite(p.data.data(), p.data.size(), "image embedding");
  return p;
}

// ---- ToyProvider ----------------------------------------------------------

ToyProvider::ToyProvider(std::uint64_t seed, std::size_t d_raw, std::size_t patch_count)
    : seed_(seed), d_raw_(d_raw), patch_count_(patch_count) {
  if (d_raw_ == 0 || patch_count_ == 0)
    throw ConfigError("toy provider dimensions must be positive");
}

std::vector<std::string> ToyProvider::tokenize(const std::string& text) {
  // ASCII non-alphanumeric bytes separate tokens; A-Z fold to lowercase.
  // Bytes >= 0x80 stay inside tokens so UTF-8 words survive intact.
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    bool keep = (c >= 0x80) || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (!keep) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    cur.push_back(static_cast<char>(c));
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Vec ToyProvider::encode_text(const std::string& text) const {
  std::vector<std::string> tokens = tokenize(text);
  std::vector<std::string> features = tokens;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    features.push_back(tokens[i] + '\x1f' + tokens[i + 1]);

  Vec v(d_raw_, 0.0);
  std::uint64_t seed_mix = splitmix64(seed_);
  for (const std::string& f : features) {
    std::uint64_t h = splitmix64(fnv1a64(f) ^ seed_mix);
    std::size_t bucket = static_cast<std::size_t>(h % d_raw_);
    double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
    v[bucket] += sign;
  }
  l2_normalize(v.data(), v.size());
  q32_all(v);
  return v;
}

PatchSet ToyProvider::encode_image(const ImageRef& image) const {
  PatchSet out;
  out.cols = d_raw_;
  if (!image) return out;  // P = 0
  out.data.resize(patch_count_ * d_raw_);
  std::uint64_t id_hash = fnv1a64(*image);
  for (std::size_t p = 0; p < patch_count_; ++p) {
    std::uint64_t base = hash_mix(hash_mix(splitmix64(seed_), id_hash), p);
    Rng stream(base);
    double* row = out.row(p);
    for (std::size_t j = 0; j < d_raw_; ++j) {
      // Irwin-Hall(4) centered and scaled: mean 0, variance ~1.
      double s = stream.next_unit() + stream.next_unit() + stream.next_unit() + stream.next_unit();
      row[j] = (s - 2.0) * 1.7320508075688772;
    }
    l2_normalize(row, d_raw_);
  }
  q32_all(out.data);
  return out;
}

// ---- TableProvider --------------------------------------------------------

TableProvider::TableProvider(const std::string& sidecar_path) {
  std::vector<SidecarEntry> entries = read_sidecar(sidecar_path, &d_raw_);
  std::size_t max_rows = 1;
  for (SidecarEntry& e : entries) {
    max_rows = std::max(max_rows, e.value.rows());
    auto [it, inserted] = entries_.emplace(std::move(e.key), std::move(e.value));
    if (!inserted) throw FormatError("duplicate key in sidecar: " + it->first);
  }
  patch_count_ = max_rows;
}

Vec TableProvider::encode_text(const std::string& text) const {
  auto it = entries_.find(text);
  if (it == entries_.end()) throw ProviderError("unknown key: " + text);
  if (it->second.rows() != 1)
    throw ProviderError("entry is not a text vector (P != 1): " + text);
  return Vec(it->second.data.begin(), it->second.data.end());
}

PatchSet TableProvider::encode_image(const ImageRef& image) const {
  if (!image) {
    PatchSet empty;
    empty.cols = d_raw_;
    return empty;
  }
  auto it = entries_.find(*image);
  if (it == entries_.end()) throw ProviderError("unknown key: " + *image);
  return it->second;
}

// ---- HttpProvider ---------------------------------------------------------

HttpProvider::HttpProvider(std::string base_url, std::size_t d_raw, std::size_t patch_count,
                           double timeout_seconds)
    : base_url_(std::move(base_url)), d_raw_(d_raw), patch_count_(patch_count),
      timeout_seconds_(timeout_seconds) {}

namespace {

json http_post_json(const std::string& base_url, const std::string& path, const json& body,
                    double timeout_seconds) {
  httplib::Client client(base_url);
  auto seconds = static_cast<time_t>(timeout_seconds);
  auto usec = static_cast<time_t>((timeout_seconds - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, usec);
  client.set_read_timeout(seconds, usec);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res)
    throw TransportError("request to " + base_url + path + " failed: " +
                         httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("request to " + base_url + path + " returned status " +
                         std::to_string(res->status));
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded())
    throw ProviderError("malformed JSON response from " + path);
  return parsed;
}

}  // namespace

Vec HttpProvider::encode_text(const std::string& text) const {
  json resp = http_post_json(base_url_, "/embed_text", json{{"text", text}}, timeout_seconds_);
  if (!resp.contains("vector") || !resp["vector"].is_array())
    throw ProviderError("embed_text response missing vector");
  Vec v;
  for (const json& x : resp["vector"]) {
    if (!x.is_number()) throw ProviderError("embed_text vector holds a non-number");
    v.push_back(q32(x.get<double>()));
  }
  if (v.size() != d_raw_) throw ProviderError("embed_text returned wrong dimension");
  return v;
}

PatchSet HttpProvider::encode_image(const ImageRef& image) const {
  PatchSet out;
  out.cols = d_raw_;
  if (!image) return out;
  json resp = http_post_json(base_url_, "/embed_image", json{{"image", *image}}, timeout_seconds_);
  if (!resp.contains("patches") || !resp["patches"].is_array())
    throw ProviderError("embed_image response missing patches");
  for (const json& row : resp["patches"]) {
    if (!row.is_array() || row.size() != d_raw_)
      throw ProviderError("embed_image patch row has wrong dimension");
    for (const json& x : row) {
      if (!x.is_number()) throw ProviderError("embed_image patch holds a non-number");
      out.data.push_back(q32(x.get<double>()));
    }
  }
  return out;
}

// ---- MSCE sidecar ---------------------------------------------------------

void write_sidecar(const std::string& path, std::size_t d_raw,
                   const std::vector<SidecarEntry>& entries) {
  std::string out;
  out += "MSCE";
  le_write_u32(out, 1);
  le_write_u32(out, static_cast<std::uint32_t>(d_raw));
  le_write_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const SidecarEntry& e : entries) {
    if (e.value.cols != d_raw && e.value.rows() != 0)
      throw ContractError("sidecar entry width mismatch: " + e.key);
    le_write_u32(out, static_cast<std::uint32_t>(e.key.size()));
    out += e.key;
    le_write_u32(out, static_cast<std::uint32_t>(e.value.rows()));
    for (double x : e.value.data) le_write_f32(out, static_cast<float>(x));
  }
  write_text_file(path, out);
}

std::vector<SidecarEntry> read_sidecar(const std::string& path, std::size_t* d_raw_out) {
  std::string data = read_text_file(path);
  ByteReader reader(data, path);
  if (reader.read_bytes(4) != "MSCE") throw FormatError("bad sidecar magic: " + path);
  std::uint32_t version = reader.read_u32();
  if (version != 1) throw FormatError("unsupported sidecar version: " + std::to_string(version));
  std::uint32_t d_raw = reader.read_u32();
  if (d_raw == 0) throw FormatError("sidecar d_raw must be positive: " + path);
  std::uint32_t count = reader.read_u32();
  std::vector<SidecarEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SidecarEntry e;
    std::uint32_t key_len = reader.read_u32();
    e.key = reader.read_bytes(key_len);
    std::uint32_t patches = reader.read_u32();
    e.value.cols = d_raw;
    e.value.data.resize(static_cast<std::size_t>(patches) * d_raw);
    for (double& x : e.value.data) x = static_cast<double>(reader.read_f32());
    entries.push_back(std::move(e));
  }
  if (!reader.at_end()) throw FormatError("trailing bytes in sidecar: " + path);
  if (d_raw_out) *d_raw_out = d_raw;
  return entries;
}

}  // namespace mscke
