#ifndef MSCKE_EMBEDDING_HPP_
#define MSCKE_EMBEDDING_HPP_

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mscke/core.hpp"

namespace mscke {

// Raw feature vector of fixed length d_raw. Values are doubles sitting on
// the binary32 grid so the f32 sidecar format round-trips exactly.
using Vec = std::vector<double>;

// Row-major P x cols matrix of image patch features. P == 0 iff the image
// was absent.
struct PatchSet {
  std::size_t cols = 0;
  std::vector<double> data;

  std::size_t rows() const { return cols == 0 ? 0 : data.size() / cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  bool operator==(const PatchSet&) const = default;
};

// Encoder pair E_t / E_i behind one deterministic contract: the same input
// always yields the same output, with declared dimensions.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t d_raw() const = 0;
  virtual std::size_t patch_count() const = 0;

  virtual Vec encode_text(const std::string& text) const = 0;
  virtual PatchSet encode_image(const ImageRef& image) const = 0;
};

// Checked entry points used by callers; they enforce the shared pre/post
// conditions (non-empty text, declared dimensions, finite values).
Vec encode_text(const EmbeddingProvider& provider, const std::string& text);
PatchSet encode_image(const EmbeddingProvider& provider, const ImageRef& image);

// Feature-hashing text encoder and counter-based image encoder; no weights,
// fully determined by the seed.
//
// Text: lowercased ASCII alphanumeric tokens, unigrams + adjacent bigrams
// (joined with 0x1f), each hashed to a bucket with a +-1 sign, L2-normalized.
// Image: per (id, patch) stream of Irwin-Hall(4) deviates, rows L2-normalized.
class ToyProvider : public EmbeddingProvider {
 public:
  explicit ToyProvider(std::uint64_t seed = 0, std::size_t d_raw = 64, std::size_t patch_count = 8);

  std::size_t d_raw() const override { return d_raw_; }
  std::size_t patch_count() const override { return patch_count_; }
  std::uint64_t seed() const { return seed_; }

  Vec encode_text(const std::string& text) const override;
  PatchSet encode_image(const ImageRef& image) const override;

  static std::vector<std::string> tokenize(const std::string& text);

 private:
  std::uint64_t seed_;
  std::size_t d_raw_;
  std::size_t patch_count_;
};

// Precomputed lookup provider backed by one MSCE sidecar file. Text entries
// are keyed by the exact text and must have P == 1; image entries are keyed
// by image id.
class TableProvider : public EmbeddingProvider {
 public:
  explicit TableProvider(const std::string& sidecar_path);

  std::size_t d_raw() const override { return d_raw_; }
  std::size_t patch_count() const override { return patch_count_; }

  Vec encode_text(const std::string& text) const override;
  PatchSet encode_image(const ImageRef& image) const override;

  std::size_t size() const { return entries_.size(); }

 private:
  std::size_t d_raw_ = 0;
  std::size_t patch_count_ = 1;
  std::map<std::string, PatchSet> entries_;
};

// Remote provider speaking the fixed JSON protocol:
//   POST /embed_text  {"text": s}  -> {"vector": [..]}
//   POST /embed_image {"image": s} -> {"patches": [[..]]}
class HttpProvider : public EmbeddingProvider {
 public:
  HttpProvider(std::string base_url, std::size_t d_raw, std::size_t patch_count,
               double timeout_seconds = 10.0);

  std::size_t d_raw() const override { return d_raw_; }
  std::size_t patch_count() const override { return patch_count_; }

  Vec encode_text(const std::string& text) const override;
  PatchSet encode_image(const ImageRef& image) const override;

 private:
  std::string base_url_;
  std::size_t d_raw_;
  std::size_t patch_count_;
  double timeout_seconds_;
};

// MSCE sidecar: magic "MSCE", u32 version=1, u32 d_raw, u32 count, then per
// entry u32 key length, key bytes, u32 P, P*d_raw little-endian f32.
struct SidecarEntry {
  std::string key;
  PatchSet value;  // P == 1 for text entries
};

void write_sidecar(const std::string& path, std::size_t d_raw,
                   const std::vector<SidecarEntry>& entries);
std::vector<SidecarEntry> read_sidecar(const std::string& path, std::size_t* d_raw_out);

}  // namespace mscke

#endif  // MSCKE_EMBEDDING_HPP_
