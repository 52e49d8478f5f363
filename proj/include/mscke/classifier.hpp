#ifndef MSCKE_CLASSIFIER_HPP_
#define MSCKE_CLASSIFIER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mscke/core.hpp"
#include "mscke/embedding.hpp"

namespace mscke {

enum class FusionMode : std::uint8_t {
  kConcat = 0,
  kCrossAttention = 1,
  kDotAttention = 2,
};

FusionMode fusion_mode_from_string(const std::string& name);
std::string fusion_mode_name(FusionMode mode);

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  bool empty() const { return a.empty(); }

  bool operator==(const Mat&) const = default;
};

// All trainable parameters of the scope classifier: the two alignment
// projections, the fusion weights of the active mode, and the calibration
// pair (tau, bias) that maps cosine similarity into rho = sigmoid(tau*cos+b).
// Values are doubles on the binary32 grid; save/load is lossless.
struct AlignmentHead {
  FusionMode fusion = FusionMode::kDotAttention;
  std::size_t d_raw = 64;
  std::size_t d = 32;
  Mat w_text;    // d_raw x d
  Mat w_image;   // d_raw x d
  Mat w_concat;  // 2d x d, concat mode only
  Mat w_query, w_key, w_value, w_out;  // d x d each, cross-attention only
  double tau = 10.0;
  double bias = 0.0;

  bool operator==(const AlignmentHead&) const = default;
};

struct TrainPair {
  EditExample edit;
  QueryInput in_query;
  QueryInput out_query;

  bool operator==(const TrainPair&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  FusionMode fusion_mode = FusionMode::kDotAttention;
  std::size_t d = 32;
};

// Gradient container mirroring AlignmentHead.
struct HeadGrad {
  Mat w_text, w_image, w_concat, w_query, w_key, w_value, w_out;
  double tau = 0.0;
  double bias = 0.0;
};

HeadGrad zero_grad_like(const AlignmentHead& head);

// Near-identity alignment init plus small seeded noise; fusion matrices
// uniform in +-1/sqrt(d); tau = 10, b = 0.
AlignmentHead make_head(FusionMode mode, std::size_t d_raw, std::size_t d, std::uint64_t seed);

// Forward ops. Outputs of these public ops are rounded to the binary32 grid;
// loss/gradient evaluation below runs the same math unrounded so the loss
// surface stays smooth for finite-difference verification.
Vec align_text(const AlignmentHead& head, const Vec& raw);
PatchSet align_image(const AlignmentHead& head, const PatchSet& raw);
Vec fuse(const AlignmentHead& head, const Vec& text, const PatchSet& patches);
Vec fuse(const AlignmentHead& head, const Vec& text, const PatchSet& patches, FusionMode mode);
double score(const AlignmentHead& head, const Vec& z_edit, const Vec& z_query);

// Edit-side text input is the concatenation "prompt target" with one space.
std::string edit_side_text(const EditExample& edit);
Vec embed_edit_side(const AlignmentHead& head, const EmbeddingProvider& provider,
                    const EditExample& edit);
Vec embed_query_side(const AlignmentHead& head, const EmbeddingProvider& provider,
                     const QueryInput& query);

double classify(const AlignmentHead& head, const EmbeddingProvider& provider,
                const QueryInput& query, const EditExample& edit);

// Binary cross-entropy over (in, out) pairs; probabilities are clamped to
// [1e-7, 1-1e-7] before the logs, and clamped branches contribute no
// gradient.
double bce_from_probs(double rho_in, double rho_out);
double bce_loss(const AlignmentHead& head, const EmbeddingProvider& provider,
                const std::vector<TrainPair>& batch);
double bce_loss_serial(const AlignmentHead& head, const EmbeddingProvider& provider,
                       const std::vector<TrainPair>& batch);
HeadGrad grad(const AlignmentHead& head, const EmbeddingProvider& provider,
              const std::vector<TrainPair>& batch);
HeadGrad grad_serial(const AlignmentHead& head, const EmbeddingProvider& provider,
                     const std::vector<TrainPair>& batch);

struct TrainResult {
  AlignmentHead head;
  std::vector<double> epoch_losses;
};

// Deterministic mini-batch SGD: seeded shuffle per epoch, fixed learning
// rate, tau projected back into (0, 100] after each step. The returned head
// is quantized to the binary32 grid, so saving and reloading it is lossless.
TrainResult train(const std::vector<TrainPair>& dataset, const EmbeddingProvider& provider,
                  const TrainConfig& config);

// Flat view over every trainable parameter in save-file order (w_text,
// w_image, mode matrices, tau, bias). Used by SGD, gradient checking and
// serialization.
std::vector<double*> param_ptrs(AlignmentHead& head);
std::vector<const double*> param_ptrs(const AlignmentHead& head);
std::vector<double*> param_ptrs(HeadGrad& grad_struct, FusionMode mode);

// Head file: magic "MSCH", u32 version=1, u8 fusion_mode, u32 d_raw, u32 d,
// parameters as little-endian f32 in param_ptrs order.
void save_head(const AlignmentHead& head, const std::string& path);
AlignmentHead load_head(const std::string& path);
std::uint64_t head_fingerprint(const AlignmentHead& head);

TrainPair parse_train_pair(const std::string& line, std::size_t line_number = 0);
std::string serialize_train_pair(const TrainPair& pair);
std::vector<TrainPair> read_train_pairs(const std::string& path);

// Fraction of pairs whose in-query scores >= 0.5 and out-query scores < 0.5
// against their own edit.
double scope_accuracy(const AlignmentHead& head, const EmbeddingProvider& provider,
                      const std::vector<TrainPair>& pairs);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coordinates = 0;
};

// Central-difference self check of the analytic gradient; relative error is
// |numeric - analytic| / max(1, |numeric|, |analytic|).
GradCheckReport grad_check(const AlignmentHead& head, const EmbeddingProvider& provider,
                           const std::vector<TrainPair>& batch, std::size_t samples,
                           std::uint64_t seed, double eps = 1e-3);

struct AblationRow {
  FusionMode mode = FusionMode::kDotAttention;
  double held_out_accuracy = 0.0;
  double final_loss = 0.0;
};

// Trains one head per fusion mode on the same data and scores each on the
// held-out pairs.
std::vector<AblationRow> run_fusion_ablation(const std::vector<TrainPair>& train_pairs,
                                             const std::vector<TrainPair>& held_out,
                                             const EmbeddingProvider& provider,
                                             TrainConfig config);

}  // namespace mscke

#endif  // MSCKE_CLASSIFIER_HPP_
