// Independent oracles used by the test suites. Each one re-implements the
// documented contract as straight-line code, without calling the library
// path under test.
#ifndef MSCKE_TESTS_ORACLES_HPP_
#define MSCKE_TESTS_ORACLES_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mscke/classifier.hpp"
#include "mscke/embedding.hpp"
#include "mscke/memory.hpp"

namespace oracles {

// ---- hashing primitives, re-stated locally --------------------------------

inline std::uint64_t o_splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t o_fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Toy text-encoder contract: lowercase ASCII-alnum tokens, unigrams plus
// 0x1f-joined bigrams, signed feature hashing into d_raw buckets,
// L2-normalize, round to f32.
inline std::vector<double> toy_text_pattern(const std::string& text, std::uint64_t seed,
                                            std::size_t d_raw) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    bool keep = (c >= 0x80) || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                (c >= 'A' && c <= 'Z');
    if (!keep) {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    cur.push_back(static_cast<char>(c));
  }
  if (!cur.empty()) tokens.push_back(cur);

  std::vector<std::string> features = tokens;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
    features.push_back(tokens[i] + '\x1f' + tokens[i + 1]);

  std::vector<double> v(d_raw, 0.0);
  std::uint64_t seed_mix = o_splitmix64(seed);
  for (const std::string& f : features) {
    std::uint64_t h = o_splitmix64(o_fnv1a64(f) ^ seed_mix);
    v[h % d_raw] += ((h >> 32) & 1) ? 1.0 : -1.0;
  }
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss != 0.0) {
    double inv = 1.0 / std::sqrt(ss);
    for (double& x : v) x *= inv;
  }
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

// ---- dense linear algebra --------------------------------------------------

// Naive vector-matrix product (v . W), accumulation order k ascending, with
// the same final f32 rounding the align ops apply.
inline std::vector<double> naive_vec_mat(const std::vector<double>& v, const mscke::Mat& w,
                                         bool round_f32 = true) {
  std::vector<double> out(w.cols, 0.0);
  for (std::size_t j = 0; j < w.cols; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < w.rows; ++k) s += v[k] * w.at(k, j);
    out[j] = round_f32 ? static_cast<double>(static_cast<float>(s)) : s;
  }
  return out;
}

inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> normalized(std::vector<double> v) {
  double n = std::sqrt(vdot(v, v));
  if (n > 0.0)
    for (double& x : v) x /= n;
  return v;
}

inline void round_f32_all(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

// ---- fusion formulas, straight-line ----------------------------------------

inline std::vector<double> fuse_dot_oracle(const std::vector<double>& text,
                                           const mscke::PatchSet& patches, std::size_t d) {
  std::size_t rows = patches.rows();
  std::vector<double> z;
  if (rows == 0) {
    z = normalized(text);
  } else {
    std::vector<double> s(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += patches.row(r)[j] * text[j];
      s[r] = acc / std::sqrt(static_cast<double>(d));
    }
    double mx = s[0];
    for (double x : s) mx = std::max(mx, x);
    std::vector<double> a(rows);
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      a[r] = std::exp(s[r] - mx);
      sum += a[r];
    }
    for (double& x : a) x /= sum;
    std::vector<double> u(text);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) u[j] += a[r] * patches.row(r)[j];
    z = normalized(u);
  }
  round_f32_all(z);
  return z;
}

inline std::vector<double> fuse_concat_oracle(const std::vector<double>& text,
                                              const mscke::PatchSet& patches, const mscke::Mat& w_c,
                                              std::size_t d) {
  std::vector<double> mean(d, 0.0);
  std::size_t rows = patches.rows();
  if (rows > 0) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) mean[j] += patches.row(r)[j];
    for (double& x : mean) x /= static_cast<double>(rows);
  }
  std::vector<double> joint(2 * d);
  for (std::size_t j = 0; j < d; ++j) joint[j] = text[j];
  for (std::size_t j = 0; j < d; ++j) joint[d + j] = mean[j];
  std::vector<double> u(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 2 * d; ++k) acc += w_c.at(k, j) * joint[k];
    u[j] = acc;
  }
  std::vector<double> z = normalized(u);
  round_f32_all(z);
  return z;
}

inline std::vector<double> fuse_cross_oracle(const std::vector<double>& text,
                                             const mscke::PatchSet& patches,
                                             const mscke::Mat& w_q, const mscke::Mat& w_k,
                                             const mscke::Mat& w_v, const mscke::Mat& w_o,
                                             std::size_t d) {
  std::size_t rows = patches.rows();
  std::vector<double> z;
  if (rows == 0) {
    z = normalized(text);
    round_f32_all(z);
    return z;
  }
  std::vector<double> q(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += w_q.at(k, j) * text[k];
    q[j] = acc;
  }
  std::vector<std::vector<double>> keys(rows, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> values(rows, std::vector<double>(d, 0.0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double ak = 0.0, av = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        ak += patches.row(r)[k] * w_k.at(k, j);
        av += patches.row(r)[k] * w_v.at(k, j);
      }
      keys[r][j] = ak;
      values[r][j] = av;
    }
  }
  std::vector<double> s(rows);
  for (std::size_t r = 0; r < rows; ++r) s[r] = vdot(keys[r], q) / std::sqrt(static_cast<double>(d));
  double mx = s[0];
  for (double x : s) mx = std::max(mx, x);
  std::vector<double> a(rows);
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    a[r] = std::exp(s[r] - mx);
    sum += a[r];
  }
  for (double& x : a) x /= sum;
  std::vector<double> c(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) c[j] += a[r] * values[r][j];
  std::vector<double> u(text);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += w_o.at(k, j) * c[k];
    u[j] += acc;
  }
  z = normalized(u);
  round_f32_all(z);
  return z;
}

inline double sigmoid_closed_form(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// ---- finite differences -----------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Central differences against the analytic gradient over sampled
// coordinates; tau and bias are always included. Relative error uses the
// conventional max(1, |analytic|, |numeric|) denominator.
inline GradCheckResult finite_diff_check(mscke::AlignmentHead head,
                                         const mscke::EmbeddingProvider& provider,
                                         const std::vector<mscke::TrainPair>& batch,
                                         std::size_t samples, std::uint64_t seed,
                                         double eps = 1e-3) {
  mscke::HeadGrad analytic = mscke::grad_serial(head, provider, batch);
  std::vector<double*> params = mscke::param_ptrs(head);
  std::vector<double*> grads = mscke::param_ptrs(analytic, head.fusion);

  std::vector<std::size_t> picks;
  mscke::Rng rng(o_splitmix64(seed ^ 0xfd1fefULL));
  std::size_t n_random = samples > 2 ? samples - 2 : 0;
  for (std::size_t i = 0; i < n_random; ++i)
    picks.push_back(rng.next_index(params.size() - 2));
  picks.push_back(params.size() - 2);  // tau
  picks.push_back(params.size() - 1);  // bias

  GradCheckResult result;
  for (std::size_t idx : picks) {
    double saved = *params[idx];
    double hi = saved + eps;
    double lo = saved - eps;
    *params[idx] = hi;
    double loss_hi = mscke::bce_loss_serial(head, provider, batch);
    *params[idx] = lo;
    double loss_lo = mscke::bce_loss_serial(head, provider, batch);
    *params[idx] = saved;
    double numeric = (loss_hi - loss_lo) / (hi - lo);
    double ana = *grads[idx];
    double denom = std::max(1.0, std::max(std::fabs(numeric), std::fabs(ana)));
    result.max_rel_err = std::max(result.max_rel_err, std::fabs(numeric - ana) / denom);
    ++result.checked;
  }
  return result;
}

// ---- retrieval --------------------------------------------------------------

// Exhaustive scan that ignores the cache: recompute every edit-side
// embedding through classify and take the argmax, ties to the lowest index.
inline mscke::ScopeDecision brute_force_lookup(const mscke::MemoryStore& store,
                                               const mscke::QueryInput& query,
                                               const mscke::AlignmentHead& head,
                                               const mscke::EmbeddingProvider& provider) {
  mscke::ScopeDecision decision;
  if (store.entries.empty()) return decision;
  std::size_t best = 0;
  double best_rho = -1.0;
  for (std::size_t i = 0; i < store.entries.size(); ++i) {
    double rho = mscke::classify(head, provider, query, store.entries[i].edit);
    if (rho > best_rho) {
      best_rho = rho;
      best = i;
    }
  }
  decision.k_star = best;
  decision.rho = best_rho;
  decision.in_scope = best_rho >= 0.5;
  return decision;
}

}  // namespace oracles

#endif  // MSCKE_TESTS_ORACLES_HPP_
